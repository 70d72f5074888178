#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "lockseer/common.hpp"

namespace lockseer::tensor {

// Dense row-major f64 array. The last dimension is the "feature" axis; ops
// that want a matrix view treat all leading dimensions as flattened rows.
class Array {
public:
  Array() = default;
  explicit Array(std::vector<size_t> shape, double fill = 0.0);
  static Array from(std::vector<size_t> shape, std::vector<double> values);

  const std::vector<size_t>& shape() const { return shape_; }
  size_t rank() const { return shape_.size(); }
  size_t size() const { return data_.size(); }
  size_t cols() const { return shape_.empty() ? 0 : shape_.back(); }
  size_t rows() const { return shape_.empty() || cols() == 0 ? 0 : size() / cols(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](size_t i) { return data_[i]; }
  double operator[](size_t i) const { return data_[i]; }
  double& at2(size_t r, size_t c) { return data_[r * cols() + c]; }
  double at2(size_t r, size_t c) const { return data_[r * cols() + c]; }

  bool same_shape(const Array& other) const { return shape_ == other.shape_; }
  bool all_finite() const;
  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool operator==(const Array&) const = default;

private:
  std::vector<size_t> shape_;
  std::vector<double> data_;
};

struct Value {
  int32_t id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode tape. Values are handles into the tape; backward visits the
// recorded ops in exact reverse execution order and accumulates gradients
// additively at fan-out. Forward ops raise InternalError when an output is
// not finite.
class Tape {
public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Value input(Array v);  // constant, no gradient
  Value param(Array v);  // leaf that receives a gradient

  // a: [..., k] (leading dims batched), b: [k, n] -> [..., n]
  Value matmul(Value a, Value b);
  Value add(Value a, Value b);
  Value add_rowwise(Value x, Value bias);
  Value scale(Value x, double s);
  Value mul(Value a, Value b);
  Value relu(Value x);
  Value sigmoid(Value x);
  Value tanh(Value x);
  // Inverted dropout: scales surviving activations by 1/(1-p) during
  // training; identity when train is false or p == 0.
  Value dropout(Value x, double p, bool train, Rng& rng);
  Value embedding_lookup(Value table, const std::vector<int32_t>& ids);
  Value layer_norm(Value x, Value gain, Value bias, double eps = 1e-5);
  // x: [B*T, d], tile: [T, d] broadcast over the batch dimension.
  Value add_tile(Value x, const Array& tile, size_t batch);
  Value gather_rows(Value x, const std::vector<size_t>& rows);
  // Multi-head self-attention over q,k,v: [B*T, d]; key positions with
  // key_keep == 0 are masked out of every softmax.
  Value masked_attention(Value q, Value k, Value v, const std::vector<uint8_t>& key_keep,
                         size_t batch, size_t seq, size_t heads);
  // Full single-layer LSTM pass; returns all hidden states [B*T, hidden].
  // Weight order: input, forget, cell, output gates.
  Value lstm_sequence(Value x, Value wi, Value wf, Value wc, Value wo, Value ui, Value uf,
                      Value uc, Value uo, Value bi, Value bf, Value bc, Value bo, size_t batch,
                      size_t seq);
  // Mean cross-entropy over rows with numerically stable softmax; optionally
  // writes the row probabilities.
  Value softmax_cross_entropy(Value logits, const std::vector<int32_t>& targets,
                              Array* probs_out = nullptr);

  void backward(Value loss);

  const Array& val(Value v) const;
  const Array& grad(Value v) const;
  size_t node_count() const { return nodes_.size(); }

private:
  struct Node {
    Array val;
    Array grad;
    bool needs_grad = false;
    std::function<void()> back;
  };

  Value push(Array val, bool needs_grad, std::function<void()> back = nullptr);
  Node& node(Value v);
  const Node& node(Value v) const;
  bool wants_grad(Value v) const { return node(v).needs_grad; }

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

// Decoupled AdamW with bias correction:
//   p <- p - lr * m_hat / (sqrt(v_hat) + eps) - lr * weight_decay * p
struct AdamWConfig {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
  double weight_decay = 0.004;
};

class AdamWState {
public:
  AdamWState() = default;
  explicit AdamWState(const std::vector<const Array*>& params);

  void step(std::vector<Array*> params, const std::vector<const Array*>& grads,
            const AdamWConfig& config);
  uint64_t steps() const { return t_; }

private:
  std::vector<Array> m_;
  std::vector<Array> v_;
  uint64_t t_ = 0;
};

}  // namespace lockseer::tensor
