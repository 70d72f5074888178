#include "lockseer/tensor.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <array>
#include <cmath>

namespace lockseer::tensor {

using EMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using EVec = Eigen::Matrix<double, Eigen::Dynamic, 1>;
using MMap = Eigen::Map<EMat>;
using CMap = Eigen::Map<const EMat>;
using Stride = Eigen::OuterStride<>;
using BlockMap = Eigen::Map<EMat, 0, Stride>;
using CBlockMap = Eigen::Map<const EMat, 0, Stride>;

namespace {

MMap as_matrix(Array& a) {
  return MMap(a.data(), static_cast<long>(a.rows()), static_cast<long>(a.cols()));
}
CMap as_matrix(const Array& a) {
  return CMap(a.data(), static_cast<long>(a.rows()), static_cast<long>(a.cols()));
}

// Column slice [h0, h0+w) of the rows belonging to one batch element in a
// [batch*seq, cols] array (rows are contiguous per element).
CBlockMap example_block(const Array& a, size_t example, size_t seq, size_t h0, size_t w) {
  return CBlockMap(a.data() + example * seq * a.cols() + h0, static_cast<long>(seq),
                   static_cast<long>(w), Stride(static_cast<long>(a.cols())));
}
BlockMap example_block(Array& a, size_t example, size_t seq, size_t h0, size_t w) {
  return BlockMap(a.data() + example * seq * a.cols() + h0, static_cast<long>(seq),
                  static_cast<long>(w), Stride(static_cast<long>(a.cols())));
}

// Rows (b*seq + t) for fixed t across the batch of a [batch*seq, width] array.
CBlockMap time_slice(const Array& a, size_t t, size_t batch, size_t seq) {
  return CBlockMap(a.data() + t * a.cols(), static_cast<long>(batch),
                   static_cast<long>(a.cols()), Stride(static_cast<long>(seq * a.cols())));
}
BlockMap time_slice(Array& a, size_t t, size_t batch, size_t seq) {
  return BlockMap(a.data() + t * a.cols(), static_cast<long>(batch),
                  static_cast<long>(a.cols()), Stride(static_cast<long>(seq * a.cols())));
}

void check_finite(const Array& a, const char* op) {
  if (!a.all_finite()) throw InternalError(std::string("non-finite value produced by ") + op);
}

size_t checked_product(const std::vector<size_t>& shape) {
  size_t n = 1;
  for (size_t d : shape) {
    if (d == 0) throw InternalError("array dimensions must be positive");
    n *= d;
  }
  return n;
}

}  // namespace

Array::Array(std::vector<size_t> shape, double fill)
    : shape_(std::move(shape)), data_(checked_product(shape_), fill) {}

Array Array::from(std::vector<size_t> shape, std::vector<double> values) {
  Array a;
  a.shape_ = std::move(shape);
  if (checked_product(a.shape_) != values.size())
    throw InternalError("value count does not match shape");
  a.data_ = std::move(values);
  return a;
}

bool Array::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

Value Tape::push(Array val, bool needs_grad, std::function<void()> back) {
  Node n;
  n.val = std::move(val);
  n.needs_grad = needs_grad;
  n.back = std::move(back);
  nodes_.push_back(std::move(n));
  return Value{static_cast<int32_t>(nodes_.size() - 1)};
}

Tape::Node& Tape::node(Value v) {
  if (!v.valid() || static_cast<size_t>(v.id) >= nodes_.size())
    throw InternalError("invalid tape value");
  return nodes_[static_cast<size_t>(v.id)];
}

const Tape::Node& Tape::node(Value v) const {
  if (!v.valid() || static_cast<size_t>(v.id) >= nodes_.size())
    throw InternalError("invalid tape value");
  return nodes_[static_cast<size_t>(v.id)];
}

const Array& Tape::val(Value v) const { return node(v).val; }

const Array& Tape::grad(Value v) const {
  const Node& n = node(v);
  if (!n.needs_grad) throw InternalError("gradient requested for a constant value");
  if (n.grad.size() == 0) throw InternalError("gradient requested before backward");
  return n.grad;
}

Value Tape::input(Array v) {
  check_finite(v, "input");
  return push(std::move(v), false);
}

Value Tape::param(Array v) {
  check_finite(v, "param");
  return push(std::move(v), true);
}

Value Tape::matmul(Value a, Value b) {
  const Array& av = val(a);
  const Array& bv = val(b);
  if (av.rank() < 2 || bv.rank() != 2) throw InternalError("matmul: operands must be matrices");
  if (av.cols() != bv.rows()) throw InternalError("matmul: inner dimensions do not match");
  std::vector<size_t> out_shape = av.shape();
  out_shape.back() = bv.cols();
  Array out(out_shape);
  as_matrix(out).noalias() = as_matrix(av) * as_matrix(bv);
  check_finite(out, "matmul");

  const bool ng = wants_grad(a) || wants_grad(b);
  Value res = push(std::move(out), ng);
  if (ng)
    node(res).back = [this, a, b, res] {
      const Array& g = node(res).grad;
      if (wants_grad(a))
        as_matrix(node(a).grad).noalias() += as_matrix(g) * as_matrix(val(b)).transpose();
      if (wants_grad(b))
        as_matrix(node(b).grad).noalias() += as_matrix(val(a)).transpose() * as_matrix(g);
    };
  return res;
}

Value Tape::add(Value a, Value b) {
  const Array& av = val(a);
  const Array& bv = val(b);
  if (!av.same_shape(bv)) throw InternalError("add: shape mismatch");
  Array out(av.shape());
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  check_finite(out, "add");

  const bool ng = wants_grad(a) || wants_grad(b);
  Value res = push(std::move(out), ng);
  if (ng)
    node(res).back = [this, a, b, res] {
      const Array& g = node(res).grad;
      for (Value v : {a, b})
        if (wants_grad(v)) {
          Array& dst = node(v).grad;
          for (size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
        }
    };
  return res;
}

Value Tape::add_rowwise(Value x, Value bias) {
  const Array& xv = val(x);
  const Array& bv = val(bias);
  if (bv.rank() != 1 || bv.size() != xv.cols())
    throw InternalError("add_rowwise: bias shape mismatch");
  Array out(xv.shape());
  const size_t r = xv.rows(), c = xv.cols();
  for (size_t i = 0; i < r; ++i)
    for (size_t j = 0; j < c; ++j) out[i * c + j] = xv[i * c + j] + bv[j];
  check_finite(out, "add_rowwise");

  const bool ng = wants_grad(x) || wants_grad(bias);
  Value res = push(std::move(out), ng);
  if (ng)
    node(res).back = [this, x, bias, res] {
      const Array& g = node(res).grad;
      const size_t r = g.rows(), c = g.cols();
      if (wants_grad(x)) {
        Array& dx = node(x).grad;
        for (size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
      }
      if (wants_grad(bias)) {
        Array& db = node(bias).grad;
        for (size_t i = 0; i < r; ++i)
          for (size_t j = 0; j < c; ++j) db[j] += g[i * c + j];
      }
    };
  return res;
}

Value Tape::scale(Value x, double s) {
  const Array& xv = val(x);
  Array out(xv.shape());
  for (size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * s;
  check_finite(out, "scale");

  const bool ng = wants_grad(x);
  Value res = push(std::move(out), ng);
  if (ng)
    node(res).back = [this, x, res, s] {
      const Array& g = node(res).grad;
      Array& dx = node(x).grad;
      for (size_t i = 0; i < g.size(); ++i) dx[i] += s * g[i];
    };
  return res;
}

Value Tape::mul(Value a, Value b) {
  const Array& av = val(a);
  const Array& bv = val(b);
  if (!av.same_shape(bv)) throw InternalError("mul: shape mismatch");
  Array out(av.shape());
  for (size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  check_finite(out, "mul");

  const bool ng = wants_grad(a) || wants_grad(b);
  Value res = push(std::move(out), ng);
  if (ng)
    node(res).back = [this, a, b, res] {
      const Array& g = node(res).grad;
      if (wants_grad(a)) {
        Array& da = node(a).grad;
        const Array& bv2 = val(b);
        for (size_t i = 0; i < g.size(); ++i) da[i] += g[i] * bv2[i];
      }
      if (wants_grad(b)) {
        Array& db = node(b).grad;
        const Array& av2 = val(a);
        for (size_t i = 0; i < g.size(); ++i) db[i] += g[i] * av2[i];
      }
    };
  return res;
}

Value Tape::relu(Value x) {
  const Array& xv = val(x);
  Array out(xv.shape());
  for (size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > 0 ? xv[i] : 0.0;
  check_finite(out, "relu");

  const bool ng = wants_grad(x);
  Value res = push(std::move(out), ng);
  if (ng)
    node(res).back = [this, x, res] {
      const Array& g = node(res).grad;
      const Array& xv2 = val(x);
      Array& dx = node(x).grad;
      for (size_t i = 0; i < g.size(); ++i)
        if (xv2[i] > 0) dx[i] += g[i];
    };
  return res;
}

Value Tape::sigmoid(Value x) {
  const Array& xv = val(x);
  Array out(xv.shape());
  for (size_t i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-xv[i]));
  check_finite(out, "sigmoid");

  const bool ng = wants_grad(x);
  Value res = push(std::move(out), ng);
  if (ng)
    node(res).back = [this, x, res] {
      const Array& g = node(res).grad;
      const Array& y = val(res);
      Array& dx = node(x).grad;
      for (size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * y[i] * (1.0 - y[i]);
    };
  return res;
}

Value Tape::tanh(Value x) {
  const Array& xv = val(x);
  Array out(xv.shape());
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(xv[i]);
  check_finite(out, "tanh");

  const bool ng = wants_grad(x);
  Value res = push(std::move(out), ng);
  if (ng)
    node(res).back = [this, x, res] {
      const Array& g = node(res).grad;
      const Array& y = val(res);
      Array& dx = node(x).grad;
      for (size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * (1.0 - y[i] * y[i]);
    };
  return res;
}

Value Tape::dropout(Value x, double p, bool train, Rng& rng) {
  if (p < 0 || p >= 1) throw ConfigError("dropout probability must be in [0, 1)");
  if (!train || p == 0.0) return x;

  const Array& xv = val(x);
  Array mask(xv.shape());
  const double keep_scale = 1.0 / (1.0 - p);
  for (size_t i = 0; i < mask.size(); ++i) mask[i] = rng.uniform01() >= p ? keep_scale : 0.0;
  Array out(xv.shape());
  for (size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * mask[i];
  check_finite(out, "dropout");

  const bool ng = wants_grad(x);
  Value res = push(std::move(out), ng);
  if (ng)
    node(res).back = [this, x, res, mask = std::move(mask)] {
      const Array& g = node(res).grad;
      Array& dx = node(x).grad;
      for (size_t i = 0; i < g.size(); ++i) dx[i] += g[i] * mask[i];
    };
  return res;
}

Value Tape::embedding_lookup(Value table, const std::vector<int32_t>& ids) {
  const Array& tv = val(table);
  if (tv.rank() != 2) throw InternalError("embedding_lookup: table must be 2-d");
  const size_t v = tv.rows(), d = tv.cols();
  for (int32_t id : ids)
    if (id < 0 || static_cast<size_t>(id) >= v)
      throw DataError("embedding_lookup: token id " + std::to_string(id) +
                      " outside table of " + std::to_string(v));
  Array out({ids.size(), d});
  for (size_t i = 0; i < ids.size(); ++i)
    std::copy_n(tv.data() + static_cast<size_t>(ids[i]) * d, d, out.data() + i * d);

  const bool ng = wants_grad(table);
  Value res = push(std::move(out), ng);
  if (ng)
    node(res).back = [this, table, res, ids] {
      const Array& g = node(res).grad;
      Array& dt = node(table).grad;
      const size_t d = dt.cols();
      for (size_t i = 0; i < ids.size(); ++i) {
        double* dst = dt.data() + static_cast<size_t>(ids[i]) * d;
        const double* src = g.data() + i * d;
        for (size_t j = 0; j < d; ++j) dst[j] += src[j];
      }
    };
  return res;
}

Value Tape::layer_norm(Value x, Value gain, Value bias, double eps) {
  const Array& xv = val(x);
  const Array& gv = val(gain);
  const Array& bv = val(bias);
  const size_t r = xv.rows(), d = xv.cols();
  if (d == 0) throw InternalError("layer_norm: empty feature axis");
  if (gv.size() != d || bv.size() != d) throw InternalError("layer_norm: gain/bias shape mismatch");

  Array out(xv.shape());
  Array xhat(xv.shape());
  Array inv_std({r});
  for (size_t i = 0; i < r; ++i) {
    const double* row = xv.data() + i * d;
    double mean = 0;
    for (size_t j = 0; j < d; ++j) mean += row[j];
    mean /= static_cast<double>(d);
    double var = 0;
    for (size_t j = 0; j < d; ++j) var += (row[j] - mean) * (row[j] - mean);
    var /= static_cast<double>(d);
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[i] = inv;
    for (size_t j = 0; j < d; ++j) {
      const double xh = (row[j] - mean) * inv;
      xhat[i * d + j] = xh;
      out[i * d + j] = xh * gv[j] + bv[j];
    }
  }
  check_finite(out, "layer_norm");

  const bool ng = wants_grad(x) || wants_grad(gain) || wants_grad(bias);
  Value res = push(std::move(out), ng);
  if (ng)
    node(res).back = [this, x, gain, bias, res, xhat = std::move(xhat),
                      inv_std = std::move(inv_std)] {
      const Array& g = node(res).grad;
      const Array& gv2 = val(gain);
      const size_t r = g.rows(), d = g.cols();
      if (wants_grad(gain)) {
        Array& dg = node(gain).grad;
        for (size_t i = 0; i < r; ++i)
          for (size_t j = 0; j < d; ++j) dg[j] += g[i * d + j] * xhat[i * d + j];
      }
      if (wants_grad(bias)) {
        Array& db = node(bias).grad;
        for (size_t i = 0; i < r; ++i)
          for (size_t j = 0; j < d; ++j) db[j] += g[i * d + j];
      }
      if (wants_grad(x)) {
        Array& dx = node(x).grad;
        const double dn = static_cast<double>(d);
        for (size_t i = 0; i < r; ++i) {
          double s1 = 0, s2 = 0;
          for (size_t j = 0; j < d; ++j) {
            const double h = g[i * d + j] * gv2[j];
            s1 += h;
            s2 += h * xhat[i * d + j];
          }
          for (size_t j = 0; j < d; ++j) {
            const double h = g[i * d + j] * gv2[j];
            dx[i * d + j] += inv_std[i] * (h - (s1 + xhat[i * d + j] * s2) / dn);
          }
        }
      }
    };
  return res;
}

Value Tape::add_tile(Value x, const Array& tile, size_t batch) {
  const Array& xv = val(x);
  const size_t d = xv.cols();
  if (tile.cols() != d || tile.rows() * batch != xv.rows())
    throw InternalError("add_tile: tile shape mismatch");
  check_finite(tile, "add_tile");
  Array out(xv.shape());
  const size_t t = tile.rows();
  for (size_t b = 0; b < batch; ++b)
    for (size_t i = 0; i < t; ++i)
      for (size_t j = 0; j < d; ++j)
        out[(b * t + i) * d + j] = xv[(b * t + i) * d + j] + tile[i * d + j];
  check_finite(out, "add_tile");

  const bool ng = wants_grad(x);
  Value res = push(std::move(out), ng);
  if (ng)
    node(res).back = [this, x, res] {
      const Array& g = node(res).grad;
      Array& dx = node(x).grad;
      for (size_t i = 0; i < g.size(); ++i) dx[i] += g[i];
    };
  return res;
}

Value Tape::gather_rows(Value x, const std::vector<size_t>& rows) {
  const Array& xv = val(x);
  const size_t d = xv.cols();
  for (size_t r : rows)
    if (r >= xv.rows()) throw InternalError("gather_rows: row index out of range");
  Array out({rows.size(), d});
  for (size_t i = 0; i < rows.size(); ++i)
    std::copy_n(xv.data() + rows[i] * d, d, out.data() + i * d);

  const bool ng = wants_grad(x);
  Value res = push(std::move(out), ng);
  if (ng)
    node(res).back = [this, x, res, rows] {
      const Array& g = node(res).grad;
      Array& dx = node(x).grad;
      const size_t d = dx.cols();
      for (size_t i = 0; i < rows.size(); ++i) {
        double* dst = dx.data() + rows[i] * d;
        const double* src = g.data() + i * d;
        for (size_t j = 0; j < d; ++j) dst[j] += src[j];
      }
    };
  return res;
}

Value Tape::masked_attention(Value q, Value k, Value v, const std::vector<uint8_t>& key_keep,
                             size_t batch, size_t seq, size_t heads) {
  const Array& qv = val(q);
  const Array& kv = val(k);
  const Array& vv = val(v);
  const size_t d = qv.cols();
  if (!qv.same_shape(kv) || !qv.same_shape(vv))
    throw InternalError("attention: q/k/v shape mismatch");
  if (qv.rows() != batch * seq) throw InternalError("attention: rows != batch * seq");
  if (heads == 0 || d % heads != 0) throw InternalError("attention: heads must divide embed dim");
  if (key_keep.size() != batch * seq) throw InternalError("attention: mask size mismatch");
  for (size_t b = 0; b < batch; ++b) {
    bool any = false;
    for (size_t t = 0; t < seq && !any; ++t) any = key_keep[b * seq + t] != 0;
    if (!any) throw DataError("attention: every key position is masked for a batch element");
  }

  const size_t dh = d / heads;
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  Array out(qv.shape());
  Array attn({batch * heads, seq * seq});  // softmax rows, saved for backward

  EMat scores(static_cast<long>(seq), static_cast<long>(seq));
  for (size_t b = 0; b < batch; ++b) {
    for (size_t h = 0; h < heads; ++h) {
      auto qb = example_block(qv, b, seq, h * dh, dh);
      auto kb = example_block(kv, b, seq, h * dh, dh);
      auto vb = example_block(vv, b, seq, h * dh, dh);
      scores.noalias() = att_scale * (qb * kb.transpose());
      for (size_t j = 0; j < seq; ++j)
        if (!key_keep[b * seq + j]) scores.col(static_cast<long>(j)).setConstant(-1e30);
      double* arow = attn.data() + (b * heads + h) * seq * seq;
      for (size_t i = 0; i < seq; ++i) {
        const double mx = scores.row(static_cast<long>(i)).maxCoeff();
        double z = 0;
        for (size_t j = 0; j < seq; ++j) {
          const double e = std::exp(scores(static_cast<long>(i), static_cast<long>(j)) - mx);
          arow[i * seq + j] = e;
          z += e;
        }
        for (size_t j = 0; j < seq; ++j) arow[i * seq + j] /= z;
      }
      CMap amat(arow, static_cast<long>(seq), static_cast<long>(seq));
      example_block(out, b, seq, h * dh, dh).noalias() = amat * vb;
    }
  }
  check_finite(out, "masked_attention");

  const bool ng = wants_grad(q) || wants_grad(k) || wants_grad(v);
  Value res = push(std::move(out), ng);
  if (ng)
    node(res).back = [this, q, k, v, res, attn = std::move(attn), batch, seq, heads, dh,
                      att_scale] {
      const Array& g = node(res).grad;
      const Array& qv2 = val(q);
      const Array& kv2 = val(k);
      const Array& vv2 = val(v);
      EMat d_attn(static_cast<long>(seq), static_cast<long>(seq));
      EMat d_scores(static_cast<long>(seq), static_cast<long>(seq));
      for (size_t b = 0; b < batch; ++b) {
        for (size_t h = 0; h < heads; ++h) {
          auto qb = example_block(qv2, b, seq, h * dh, dh);
          auto kb = example_block(kv2, b, seq, h * dh, dh);
          auto vb = example_block(vv2, b, seq, h * dh, dh);
          auto gb = example_block(g, b, seq, h * dh, dh);
          CMap amat(attn.data() + (b * heads + h) * seq * seq, static_cast<long>(seq),
                    static_cast<long>(seq));
          d_attn.noalias() = gb * vb.transpose();
          if (wants_grad(v))
            example_block(node(v).grad, b, seq, h * dh, dh).noalias() += amat.transpose() * gb;
          // Softmax backward: dS = A .* (dA - rowsum(dA .* A)).
          const EVec row_dot = (d_attn.array() * amat.array()).rowwise().sum().matrix();
          d_scores =
              (amat.array() * (d_attn.array() - row_dot.replicate(1, static_cast<long>(seq)).array()))
                  .matrix();
          if (wants_grad(q))
            example_block(node(q).grad, b, seq, h * dh, dh).noalias() +=
                att_scale * (d_scores * kb);
          if (wants_grad(k))
            example_block(node(k).grad, b, seq, h * dh, dh).noalias() +=
                att_scale * (d_scores.transpose() * qb);
        }
      }
    };
  return res;
}

Value Tape::lstm_sequence(Value x, Value wi, Value wf, Value wc, Value wo, Value ui, Value uf,
                          Value uc, Value uo, Value bi, Value bf, Value bc, Value bo, size_t batch,
                          size_t seq) {
  const Array& xv = val(x);
  const size_t d = xv.cols();
  if (xv.rows() != batch * seq) throw InternalError("lstm: rows != batch * seq");
  const size_t hidden = val(wi).cols();
  for (Value w : {wi, wf, wc, wo})
    if (val(w).rows() != d || val(w).cols() != hidden)
      throw InternalError("lstm: W shape mismatch");
  for (Value u : {ui, uf, uc, uo})
    if (val(u).rows() != hidden || val(u).cols() != hidden)
      throw InternalError("lstm: U shape mismatch");
  for (Value b : {bi, bf, bc, bo})
    if (val(b).size() != hidden) throw InternalError("lstm: bias shape mismatch");

  const std::array<Value, 4> w_gates = {wi, wf, wc, wo};
  const std::array<Value, 4> u_gates = {ui, uf, uc, uo};
  const std::array<Value, 4> b_gates = {bi, bf, bc, bo};

  // Input contributions for all timesteps at once, one GEMM per gate.
  std::vector<Array> xw;
  xw.reserve(4);
  for (int gate = 0; gate < 4; ++gate) {
    Array m({batch * seq, hidden});
    as_matrix(m).noalias() = as_matrix(xv) * as_matrix(val(w_gates[gate]));
    const Array& bias = val(b_gates[gate]);
    for (size_t r = 0; r < batch * seq; ++r)
      for (size_t j = 0; j < hidden; ++j) m[r * hidden + j] += bias[j];
    xw.push_back(std::move(m));
  }

  // Saved activations; gate order i, f, c(candidate), o.
  std::vector<Array> gates(4, Array({batch * seq, hidden}));
  Array cell({batch * seq, hidden});
  Array cell_tanh({batch * seq, hidden});
  Array out({batch * seq, hidden});

  EMat h_prev = EMat::Zero(static_cast<long>(batch), static_cast<long>(hidden));
  EMat c_prev = h_prev;
  EMat z(static_cast<long>(batch), static_cast<long>(hidden));
  std::array<EMat, 4> acts;
  for (size_t t = 0; t < seq; ++t) {
    for (int gate = 0; gate < 4; ++gate) {
      z.noalias() = time_slice(xw[static_cast<size_t>(gate)], t, batch, seq);
      z.noalias() += h_prev * as_matrix(val(u_gates[static_cast<size_t>(gate)]));
      if (gate == 2)
        acts[static_cast<size_t>(gate)] = z.array().tanh().matrix();
      else
        acts[static_cast<size_t>(gate)] = (1.0 / (1.0 + (-z.array()).exp())).matrix();
      time_slice(gates[static_cast<size_t>(gate)], t, batch, seq) = acts[static_cast<size_t>(gate)];
    }
    EMat c_t = (acts[1].array() * c_prev.array() + acts[0].array() * acts[2].array()).matrix();
    EMat tanh_c = c_t.array().tanh().matrix();
    EMat h_t = (acts[3].array() * tanh_c.array()).matrix();
    time_slice(cell, t, batch, seq) = c_t;
    time_slice(cell_tanh, t, batch, seq) = tanh_c;
    time_slice(out, t, batch, seq) = h_t;
    h_prev = std::move(h_t);
    c_prev = std::move(c_t);
  }
  check_finite(out, "lstm_sequence");

  const bool ng = [&] {
    if (wants_grad(x)) return true;
    for (Value v : w_gates)
      if (wants_grad(v)) return true;
    for (Value v : u_gates)
      if (wants_grad(v)) return true;
    for (Value v : b_gates)
      if (wants_grad(v)) return true;
    return false;
  }();
  Array h_all = out;  // copy kept for recurrent weight gradients
  Value res = push(std::move(out), ng);
  if (ng)
    node(res).back = [this, x, w_gates, u_gates, b_gates, res, batch, seq, hidden,
                      gates = std::move(gates), cell = std::move(cell),
                      cell_tanh = std::move(cell_tanh), h_all = std::move(h_all)] {
      const Array& g = node(res).grad;
      const Array& xv2 = val(x);

      // Pre-activation gradients for every (t, gate), filled in reverse.
      std::vector<Array> dz(4, Array({batch * seq, hidden}));
      EMat dh_rec = EMat::Zero(static_cast<long>(batch), static_cast<long>(hidden));
      EMat dc = dh_rec;
      for (size_t t = seq; t-- > 0;) {
        auto g_t = time_slice(g, t, batch, seq);
        auto i_t = time_slice(gates[0], t, batch, seq);
        auto f_t = time_slice(gates[1], t, batch, seq);
        auto cand_t = time_slice(gates[2], t, batch, seq);
        auto o_t = time_slice(gates[3], t, batch, seq);
        auto tanh_c = time_slice(cell_tanh, t, batch, seq);

        EMat dh = g_t + dh_rec;
        EMat do_ = (dh.array() * tanh_c.array()).matrix();
        dc.array() += dh.array() * o_t.array() * (1.0 - tanh_c.array().square());
        EMat di = (dc.array() * cand_t.array()).matrix();
        EMat dcand = (dc.array() * i_t.array()).matrix();
        EMat df(static_cast<long>(batch), static_cast<long>(hidden));
        if (t == 0)
          df.setZero();
        else
          df = (dc.array() * time_slice(cell, t - 1, batch, seq).array()).matrix();
        EMat dc_prev = (dc.array() * f_t.array()).matrix();

        std::array<EMat, 4> dz_t;
        dz_t[0] = (di.array() * i_t.array() * (1.0 - i_t.array())).matrix();
        dz_t[1] = (df.array() * f_t.array() * (1.0 - f_t.array())).matrix();
        dz_t[2] = (dcand.array() * (1.0 - cand_t.array().square())).matrix();
        dz_t[3] = (do_.array() * o_t.array() * (1.0 - o_t.array())).matrix();
        dh_rec.setZero();
        for (int gate = 0; gate < 4; ++gate) {
          time_slice(dz[static_cast<size_t>(gate)], t, batch, seq) = dz_t[static_cast<size_t>(gate)];
          dh_rec.noalias() +=
              dz_t[static_cast<size_t>(gate)] * as_matrix(val(u_gates[static_cast<size_t>(gate)])).transpose();
        }
        dc = std::move(dc_prev);
      }

      // Hidden states shifted one step back in time; zeros at t = 0.
      Array h_shift({batch * seq, hidden});
      for (size_t b = 0; b < batch; ++b)
        for (size_t t = 1; t < seq; ++t)
          std::copy_n(h_all.data() + (b * seq + t - 1) * hidden, hidden,
                      h_shift.data() + (b * seq + t) * hidden);

      for (size_t gate = 0; gate < 4; ++gate) {
        const auto dz_mat = as_matrix(dz[gate]);
        if (wants_grad(x))
          as_matrix(node(x).grad).noalias() += dz_mat * as_matrix(val(w_gates[gate])).transpose();
        if (wants_grad(w_gates[gate]))
          as_matrix(node(w_gates[gate]).grad).noalias() += as_matrix(xv2).transpose() * dz_mat;
        if (wants_grad(u_gates[gate]))
          as_matrix(node(u_gates[gate]).grad).noalias() += as_matrix(h_shift).transpose() * dz_mat;
        if (wants_grad(b_gates[gate])) {
          Array& db = node(b_gates[gate]).grad;
          for (size_t r = 0; r < batch * seq; ++r)
            for (size_t j = 0; j < hidden; ++j) db[j] += dz[gate][r * hidden + j];
        }
      }
    };
  return res;
}

Value Tape::softmax_cross_entropy(Value logits, const std::vector<int32_t>& targets,
                                  Array* probs_out) {
  const Array& lv = val(logits);
  const size_t r = lv.rows(), c = lv.cols();
  if (c < 2) throw InternalError("softmax_cross_entropy: need at least 2 classes");
  if (targets.size() != r) throw InternalError("softmax_cross_entropy: target count mismatch");
  for (int32_t t : targets)
    if (t < 0 || static_cast<size_t>(t) >= c)
      throw DataError("softmax_cross_entropy: target " + std::to_string(t) + " out of range");

  Array probs({r, c});
  double loss_sum = 0;
  for (size_t i = 0; i < r; ++i) {
    const double* row = lv.data() + i * c;
    double mx = row[0];
    for (size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double z = 0;
    for (size_t j = 0; j < c; ++j) {
      const double e = std::exp(row[j] - mx);
      probs[i * c + j] = e;
      z += e;
    }
    for (size_t j = 0; j < c; ++j) probs[i * c + j] /= z;
    loss_sum -= row[static_cast<size_t>(targets[i])] - mx - std::log(z);
  }
  Array out({1});
  out[0] = loss_sum / static_cast<double>(r);
  check_finite(out, "softmax_cross_entropy");
  if (probs_out != nullptr) *probs_out = probs;

  const bool ng = wants_grad(logits);
  Value res = push(std::move(out), ng);
  if (ng)
    node(res).back = [this, logits, res, probs = std::move(probs), targets] {
      const double gscale = node(res).grad[0] / static_cast<double>(targets.size());
      Array& dl = node(logits).grad;
      const size_t c = dl.cols();
      for (size_t i = 0; i < targets.size(); ++i) {
        for (size_t j = 0; j < c; ++j) dl[i * c + j] += gscale * probs[i * c + j];
        dl[i * c + static_cast<size_t>(targets[i])] -= gscale;
      }
    };
  return res;
}

void Tape::backward(Value loss) {
  Node& ln = node(loss);
  if (ln.val.size() != 1) throw InternalError("backward: loss must be a scalar");
  if (backward_done_) throw InternalError("backward may run only once per tape");
  backward_done_ = true;
  if (!ln.needs_grad) return;  // no parameters reachable from the loss
  for (auto& n : nodes_)
    if (n.needs_grad) n.grad = Array(n.val.shape());
  node(loss).grad[0] = 1.0;
  for (size_t i = static_cast<size_t>(loss.id) + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.back && n.needs_grad) n.back();
  }
}

AdamWState::AdamWState(const std::vector<const Array*>& params) {
  m_.reserve(params.size());
  v_.reserve(params.size());
  for (const Array* p : params) {
    m_.emplace_back(p->shape());
    v_.emplace_back(p->shape());
  }
}

void AdamWState::step(std::vector<Array*> params, const std::vector<const Array*>& grads,
                      const AdamWConfig& config) {
  if (params.size() != m_.size() || grads.size() != m_.size())
    throw InternalError("adamw: parameter list does not match optimizer state");
  ++t_;
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(t_));
  for (size_t k = 0; k < params.size(); ++k) {
    Array& p = *params[k];
    const Array& g = *grads[k];
    if (!p.same_shape(m_[k]) || !g.same_shape(m_[k])) throw InternalError("adamw: shape mismatch");
    Array& m = m_[k];
    Array& v = v_[k];
    for (size_t i = 0; i < p.size(); ++i) {
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      p[i] -= config.learning_rate * (m_hat / (std::sqrt(v_hat) + config.epsilon)) +
              config.learning_rate * config.weight_decay * p[i];
    }
  }
}

}  // namespace lockseer::tensor
