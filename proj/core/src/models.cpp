#include "lockseer/models.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "json.hpp"

namespace lockseer::models {

using nlohmann::json;
using tensor::Array;
using tensor::Tape;
using tensor::Value;

std::string_view to_string(ModelKind k) {
  switch (k) {
    case ModelKind::Naive: return "naive";
    case ModelKind::Lstm: return "lstm";
    case ModelKind::Transformer: return "transformer";
  }
  throw InternalError("unreachable model kind");
}

ModelKind parse_model_kind(std::string_view s) {
  if (s == "naive") return ModelKind::Naive;
  if (s == "lstm") return ModelKind::Lstm;
  if (s == "transformer") return ModelKind::Transformer;
  throw ConfigError("unknown model kind '" + std::string(s) + "'");
}

void ModelConfig::validate() const {
  if (vocab_size < 2) throw ConfigError("vocab_size must be at least 2");
  if (window < 1) throw ConfigError("window must be positive");
  if (kind == ModelKind::Naive) return;
  if (embed_dim < 1 || head_hidden < 1) throw ConfigError("model dimensions must be positive");
  if (dropout < 0 || dropout >= 1) throw ConfigError("dropout must be in [0, 1)");
  if (kind == ModelKind::Transformer) {
    if (heads < 1 || ffn_hidden < 1 || encoder_layers < 1)
      throw ConfigError("transformer dimensions must be positive");
    if (embed_dim % heads != 0) throw ConfigError("embed_dim must be divisible by heads");
  } else {
    if (lstm_hidden < 1 || lstm_layers < 1) throw ConfigError("lstm dimensions must be positive");
  }
}

tensor::Array& ModelParams::at(const std::string& name) {
  for (auto& [n, a] : entries)
    if (n == name) return a;
  throw InternalError("unknown parameter '" + name + "'");
}

const tensor::Array& ModelParams::at(const std::string& name) const {
  for (const auto& [n, a] : entries)
    if (n == name) return a;
  throw InternalError("unknown parameter '" + name + "'");
}

size_t ModelParams::parameter_count() const {
  size_t n = 0;
  for (const auto& [_, a] : entries) n += a.size();
  return n;
}

namespace {

std::vector<std::pair<std::string, std::vector<size_t>>> parameter_shapes(const ModelConfig& c) {
  std::vector<std::pair<std::string, std::vector<size_t>>> out;
  const auto v = static_cast<size_t>(c.vocab_size);
  const auto d = static_cast<size_t>(c.embed_dim);
  const auto hh = static_cast<size_t>(c.head_hidden);
  if (c.kind == ModelKind::Naive) return out;
  out.push_back({"embed", {v, d}});
  if (c.kind == ModelKind::Transformer) {
    const auto ffn = static_cast<size_t>(c.ffn_hidden);
    for (int l = 0; l < c.encoder_layers; ++l) {
      const std::string p = "enc" + std::to_string(l) + ".";
      out.push_back({p + "ln1.gain", {d}});
      out.push_back({p + "ln1.bias", {d}});
      out.push_back({p + "attn.wq", {d, d}});
      out.push_back({p + "attn.wk", {d, d}});
      out.push_back({p + "attn.wv", {d, d}});
      out.push_back({p + "attn.wo", {d, d}});
      out.push_back({p + "ln2.gain", {d}});
      out.push_back({p + "ln2.bias", {d}});
      out.push_back({p + "ffn.w1", {d, ffn}});
      out.push_back({p + "ffn.b1", {ffn}});
      out.push_back({p + "ffn.w2", {ffn, d}});
      out.push_back({p + "ffn.b2", {d}});
    }
    out.push_back({"head.w", {d, hh}});
  } else {
    const auto h = static_cast<size_t>(c.lstm_hidden);
    size_t in_dim = d;
    for (int l = 0; l < c.lstm_layers; ++l) {
      const std::string p = "lstm" + std::to_string(l) + ".";
      for (const char* g : {"w_i", "w_f", "w_c", "w_o"}) out.push_back({p + g, {in_dim, h}});
      for (const char* g : {"u_i", "u_f", "u_c", "u_o"}) out.push_back({p + g, {h, h}});
      for (const char* g : {"b_i", "b_f", "b_c", "b_o"}) out.push_back({p + g, {h}});
      in_dim = h;
    }
    out.push_back({"head.w", {h, hh}});
  }
  out.push_back({"head.b", {hh}});
  out.push_back({"out.w", {hh, v}});
  out.push_back({"out.b", {v}});
  return out;
}

bool is_gain(const std::string& name) { return name.size() >= 4 && name.ends_with("gain"); }
bool is_forget_bias(const std::string& name) { return name.ends_with("b_f"); }

}  // namespace

ModelParams init_params(const ModelConfig& config) {
  config.validate();
  ModelParams params;
  Rng rng(config.seed);
  for (auto& [name, shape] : parameter_shapes(config)) {
    Array a(shape);
    if (shape.size() == 2) {
      const double fan_in = static_cast<double>(shape[0]);
      const double fan_out = static_cast<double>(shape[1]);
      const double limit = std::sqrt(6.0 / (fan_in + fan_out));
      for (size_t i = 0; i < a.size(); ++i) a[i] = rng.uniform(-limit, limit);
    } else if (is_gain(name)) {
      a.fill(1.0);
    } else if (is_forget_bias(name)) {
      a.fill(1.0);
    }  // remaining biases stay zero
    params.entries.emplace_back(name, std::move(a));
  }
  return params;
}

tensor::Array make_positional_encoding(int window, int dim) {
  Array pe({static_cast<size_t>(window), static_cast<size_t>(dim)});
  for (int pos = 0; pos < window; ++pos) {
    for (int i = 0; i < dim; i += 2) {
      const double angle =
          static_cast<double>(pos) / std::pow(10000.0, static_cast<double>(i) / dim);
      pe[static_cast<size_t>(pos * dim + i)] = std::sin(angle);
      if (i + 1 < dim) pe[static_cast<size_t>(pos * dim + i + 1)] = std::cos(angle);
    }
  }
  return pe;
}

std::vector<Value> bind_params(Tape& tape, const ModelParams& params, bool trainable) {
  std::vector<Value> bound;
  bound.reserve(params.entries.size());
  for (const auto& [_, a] : params.entries)
    bound.push_back(trainable ? tape.param(a) : tape.input(a));
  return bound;
}

namespace {

struct MaskInfo {
  std::vector<uint8_t> keep;
  std::vector<size_t> readout_rows;  // last kept position per example
};

MaskInfo build_mask(const std::vector<int32_t>& windows, size_t batch, size_t window,
                    const std::vector<uint8_t>* mask_override) {
  if (windows.size() != batch * window) throw InternalError("window buffer size mismatch");
  MaskInfo info;
  if (mask_override != nullptr) {
    if (mask_override->size() != batch * window)
      throw InternalError("mask override size mismatch");
    info.keep = *mask_override;
  } else {
    info.keep.resize(batch * window);
    for (size_t i = 0; i < info.keep.size(); ++i)
      info.keep[i] = windows[i] != prep::Vocabulary::kPad ? 1 : 0;
  }
  info.readout_rows.resize(batch);
  for (size_t b = 0; b < batch; ++b) {
    size_t last = window;
    for (size_t t = window; t-- > 0;) {
      if (info.keep[b * window + t]) {
        last = t;
        break;
      }
    }
    if (last == window) throw DataError("all-PAD window has no readout position");
    info.readout_rows[b] = b * window + last;
  }
  return info;
}

}  // namespace

Value forward_logits(Tape& tape, const ModelConfig& config, const std::vector<Value>& bound,
                     const std::vector<int32_t>& windows, size_t batch, bool train,
                     Rng* dropout_rng, const std::vector<uint8_t>* mask_override) {
  if (config.kind == ModelKind::Naive)
    throw InternalError("naive predictor has no forward pass");
  if (batch == 0) throw InternalError("empty batch");
  if (train && dropout_rng == nullptr && config.dropout > 0)
    throw InternalError("training forward requires a dropout rng");
  const auto window = static_cast<size_t>(config.window);
  for (int32_t id : windows)
    if (id < 0 || id >= config.vocab_size)
      throw DataError("token id " + std::to_string(id) + " outside vocabulary");

  const MaskInfo mask = build_mask(windows, batch, window, mask_override);
  Rng dummy(0);
  Rng& rng = dropout_rng != nullptr ? *dropout_rng : dummy;

  // Parameter names in entry order mirror init_params.
  std::vector<std::string> names;
  for (const auto& [name, shape] : parameter_shapes(config)) names.push_back(name);
  if (names.size() != bound.size())
    throw InternalError("bound parameter list does not match model configuration");
  auto find = [&](const std::string& name) -> Value {
    for (size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return bound[i];
    throw InternalError("unknown parameter '" + name + "'");
  };

  Value x = tape.embedding_lookup(find("embed"), windows);

  if (config.kind == ModelKind::Transformer) {
    x = tape.add_tile(x, make_positional_encoding(config.window, config.embed_dim), batch);
    x = tape.dropout(x, config.dropout, train, rng);
    for (int l = 0; l < config.encoder_layers; ++l) {
      const std::string p = "enc" + std::to_string(l) + ".";
      Value a_in = tape.layer_norm(x, find(p + "ln1.gain"), find(p + "ln1.bias"));
      Value q = tape.matmul(a_in, find(p + "attn.wq"));
      Value k = tape.matmul(a_in, find(p + "attn.wk"));
      Value v = tape.matmul(a_in, find(p + "attn.wv"));
      Value ctx = tape.masked_attention(q, k, v, mask.keep, batch, window,
                                        static_cast<size_t>(config.heads));
      Value attn_out = tape.matmul(ctx, find(p + "attn.wo"));
      attn_out = tape.dropout(attn_out, config.dropout, train, rng);
      x = tape.add(x, attn_out);
      Value f_in = tape.layer_norm(x, find(p + "ln2.gain"), find(p + "ln2.bias"));
      Value f = tape.relu(tape.add_rowwise(tape.matmul(f_in, find(p + "ffn.w1")), find(p + "ffn.b1")));
      f = tape.add_rowwise(tape.matmul(f, find(p + "ffn.w2")), find(p + "ffn.b2"));
      f = tape.dropout(f, config.dropout, train, rng);
      x = tape.add(x, f);
    }
  } else {
    x = tape.dropout(x, config.dropout, train, rng);
    for (int l = 0; l < config.lstm_layers; ++l) {
      const std::string p = "lstm" + std::to_string(l) + ".";
      x = tape.lstm_sequence(x, find(p + "w_i"), find(p + "w_f"), find(p + "w_c"),
                             find(p + "w_o"), find(p + "u_i"), find(p + "u_f"), find(p + "u_c"),
                             find(p + "u_o"), find(p + "b_i"), find(p + "b_f"), find(p + "b_c"),
                             find(p + "b_o"), batch, window);
    }
  }

  Value readout = tape.gather_rows(x, mask.readout_rows);
  Value h = tape.relu(tape.add_rowwise(tape.matmul(readout, find("head.w")), find("head.b")));
  return tape.add_rowwise(tape.matmul(h, find("out.w")), find("out.b"));
}

tensor::Array predict_logits(const Model& model, const std::vector<int32_t>& windows, size_t batch,
                             const std::vector<uint8_t>* mask_override) {
  Tape tape;
  const auto bound = bind_params(tape, model.params, /*trainable=*/false);
  Value logits =
      forward_logits(tape, model.config, bound, windows, batch, /*train=*/false, nullptr,
                     mask_override);
  return tape.val(logits);
}

tensor::Array transformer_forward(const Model& model, const std::vector<int32_t>& window,
                                  bool train, Rng* dropout_rng) {
  if (model.config.kind != ModelKind::Transformer)
    throw InternalError("transformer_forward on a non-transformer model");
  Tape tape;
  const auto bound = bind_params(tape, model.params, false);
  return tape.val(forward_logits(tape, model.config, bound, window, 1, train, dropout_rng));
}

tensor::Array lstm_forward(const Model& model, const std::vector<int32_t>& window, bool train,
                           Rng* dropout_rng) {
  if (model.config.kind != ModelKind::Lstm)
    throw InternalError("lstm_forward on a non-lstm model");
  Tape tape;
  const auto bound = bind_params(tape, model.params, false);
  return tape.val(forward_logits(tape, model.config, bound, window, 1, train, dropout_rng));
}

int32_t naive_predict(const std::vector<int32_t>& window) {
  for (size_t t = window.size(); t-- > 0;)
    if (window[t] != prep::Vocabulary::kPad) return window[t];
  return prep::Vocabulary::kUnk;
}

int32_t argmax_lowest(const double* row, size_t n) {
  size_t best = 0;
  for (size_t j = 1; j < n; ++j)
    if (row[j] > row[best]) best = j;
  return static_cast<int32_t>(best);
}

std::vector<int32_t> rollout_horizon(const Model& model, const std::vector<int32_t>& window,
                                     int h) {
  auto preds = rollout_horizon_batch(model, window, 1, h);
  return preds;
}

std::vector<int32_t> rollout_horizon_batch(const Model& model, std::vector<int32_t> windows,
                                           size_t batch, int h) {
  if (h < 1) throw ConfigError("horizon must be >= 1");
  const auto window = static_cast<size_t>(model.config.window);
  if (windows.size() != batch * window) throw InternalError("window buffer size mismatch");

  std::vector<int32_t> preds(batch * static_cast<size_t>(h));
  for (int step = 0; step < h; ++step) {
    if (model.config.kind == ModelKind::Naive) {
      for (size_t b = 0; b < batch; ++b) {
        std::vector<int32_t> w(windows.begin() + static_cast<long>(b * window),
                               windows.begin() + static_cast<long>((b + 1) * window));
        preds[b * static_cast<size_t>(h) + static_cast<size_t>(step)] = naive_predict(w);
      }
    } else {
      const Array logits = predict_logits(model, windows, batch);
      const size_t vocab = logits.cols();
      for (size_t b = 0; b < batch; ++b)
        preds[b * static_cast<size_t>(h) + static_cast<size_t>(step)] =
            argmax_lowest(logits.data() + b * vocab, vocab);
    }
    if (step + 1 < h) {
      for (size_t b = 0; b < batch; ++b) {
        for (size_t t = 0; t + 1 < window; ++t) windows[b * window + t] = windows[b * window + t + 1];
        windows[b * window + window - 1] =
            preds[b * static_cast<size_t>(h) + static_cast<size_t>(step)];
      }
    }
  }
  return preds;
}

namespace {
constexpr char kCheckpointMagic[5] = {'L', 'S', 'E', 'E', 'R'};
constexpr uint16_t kCheckpointVersion = 1;

json config_to_json(const ModelConfig& c) {
  return json{{"kind", std::string(to_string(c.kind))},
              {"vocab_size", c.vocab_size},
              {"window", c.window},
              {"embed_dim", c.embed_dim},
              {"heads", c.heads},
              {"ffn_hidden", c.ffn_hidden},
              {"dropout", c.dropout},
              {"encoder_layers", c.encoder_layers},
              {"lstm_hidden", c.lstm_hidden},
              {"lstm_layers", c.lstm_layers},
              {"head_hidden", c.head_hidden},
              {"seed", c.seed}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.kind = parse_model_kind(j.at("kind").get<std::string>());
  c.vocab_size = j.at("vocab_size").get<int>();
  c.window = j.at("window").get<int>();
  c.embed_dim = j.at("embed_dim").get<int>();
  c.heads = j.at("heads").get<int>();
  c.ffn_hidden = j.at("ffn_hidden").get<int>();
  c.dropout = j.at("dropout").get<double>();
  c.encoder_layers = j.at("encoder_layers").get<int>();
  c.lstm_hidden = j.at("lstm_hidden").get<int>();
  c.lstm_layers = j.at("lstm_layers").get<int>();
  c.head_hidden = j.at("head_hidden").get<int>();
  c.seed = j.at("seed").get<uint64_t>();
  return c;
}

}  // namespace

void save_checkpoint(const Model& model, const prep::Vocabulary& vocab,
                     const CheckpointMeta& meta, const std::string& path) {
  json manifest = json::array();
  uint64_t offset = 0;
  for (const auto& [name, a] : model.params.entries) {
    manifest.push_back({{"name", name}, {"shape", a.shape()}, {"offset", offset}});
    offset += a.size();
  }
  json header{{"config", config_to_json(model.config)},
              {"vocab_fingerprint", to_hex(vocab.fingerprint())},
              {"meta",
               {{"seed", meta.seed},
                {"best_epoch", meta.best_epoch},
                {"best_val_loss", meta.best_val_loss}}},
              {"manifest", manifest}};
  const std::string header_text = header.dump();

  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  le::put<uint16_t>(out, kCheckpointVersion);
  le::put<uint32_t>(out, static_cast<uint32_t>(header_text.size()));
  out += header_text;
  for (const auto& [_, a] : model.params.entries)
    for (size_t i = 0; i < a.size(); ++i) le::put_f64(out, a[i]);

  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open '" + path + "' for writing");
  f.write(out.data(), static_cast<long>(out.size()));
  if (!f) throw DataError("write failed for '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path, const prep::Vocabulary* expected_vocab) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << f.rdbuf();
  const std::string bytes = buf.str();

  if (bytes.size() < sizeof(kCheckpointMagic) ||
      std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) != 0)
    throw DataError("not a checkpoint file");
  size_t pos = sizeof(kCheckpointMagic);
  Checkpoint ckpt;
  ckpt.version = le::get<uint16_t>(bytes, pos);
  if (ckpt.version != kCheckpointVersion)
    throw DataError("unsupported checkpoint version " + std::to_string(ckpt.version));
  const auto header_len = le::get<uint32_t>(bytes, pos);
  if (pos + header_len > bytes.size()) throw DataError("truncated checkpoint header");
  json header;
  try {
    header = json::parse(bytes.substr(pos, header_len));
  } catch (const json::exception& e) {
    throw DataError(std::string("bad checkpoint header: ") + e.what());
  }
  pos += header_len;

  ckpt.config = config_from_json(header.at("config"));
  ckpt.vocab_fingerprint = header.at("vocab_fingerprint").get<std::string>();
  ckpt.meta.seed = header.at("meta").at("seed").get<uint64_t>();
  ckpt.meta.best_epoch = header.at("meta").at("best_epoch").get<int>();
  ckpt.meta.best_val_loss = header.at("meta").at("best_val_loss").get<double>();

  if (expected_vocab != nullptr && to_hex(expected_vocab->fingerprint()) != ckpt.vocab_fingerprint)
    throw DataError("checkpoint vocabulary fingerprint mismatch");

  uint64_t expected_offset = 0;
  for (const auto& entry : header.at("manifest")) {
    const auto name = entry.at("name").get<std::string>();
    const auto shape = entry.at("shape").get<std::vector<size_t>>();
    const auto offset = entry.at("offset").get<uint64_t>();
    if (offset != expected_offset) throw DataError("checkpoint manifest offsets are inconsistent");
    size_t count = 1;
    for (size_t dim : shape) count *= dim;
    std::vector<double> values(count);
    for (auto& v : values) v = le::get_f64(bytes, pos);
    ckpt.params.entries.emplace_back(name, Array::from(shape, std::move(values)));
    expected_offset += count;
  }
  if (pos != bytes.size()) throw DataError("trailing bytes after checkpoint payload");
  return ckpt;
}

}  // namespace lockseer::models
