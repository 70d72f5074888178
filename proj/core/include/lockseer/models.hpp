#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "lockseer/prep.hpp"
#include "lockseer/tensor.hpp"

namespace lockseer::models {

enum class ModelKind { Naive, Lstm, Transformer };

std::string_view to_string(ModelKind k);
ModelKind parse_model_kind(std::string_view s);

struct ModelConfig {
  ModelKind kind = ModelKind::Transformer;
  int vocab_size = 0;
  int window = 25;
  int embed_dim = 128;
  int heads = 8;
  int ffn_hidden = 512;     // encoder feed-forward inner width
  double dropout = 0.10;
  int encoder_layers = 1;
  int lstm_hidden = 256;
  int lstm_layers = 1;
  int head_hidden = 128;    // dense-ReLU readout width
  uint64_t seed = 0;

  void validate() const;
};

// Named parameter arrays in a fixed architecture order.
struct ModelParams {
  std::vector<std::pair<std::string, tensor::Array>> entries;

  tensor::Array& at(const std::string& name);
  const tensor::Array& at(const std::string& name) const;
  size_t parameter_count() const;
};

// Glorot-uniform matrices from the config seed; biases zero except the LSTM
// forget gate (1.0); layer-norm gains one.
ModelParams init_params(const ModelConfig& config);

struct Model {
  ModelConfig config;
  ModelParams params;
};

tensor::Array make_positional_encoding(int window, int dim);

// Binds parameter arrays onto a tape, in entry order. trainable selects
// param (gradient) vs input (constant) leaves.
std::vector<tensor::Value> bind_params(tensor::Tape& tape, const ModelParams& params,
                                       bool trainable);

// Batched forward pass over `batch` windows (row-major, batch * window ids).
// The attention/readout mask defaults to (id != PAD); mask_override replaces
// it, which keeps PAD-insensitivity testable.
tensor::Value forward_logits(tensor::Tape& tape, const ModelConfig& config,
                             const std::vector<tensor::Value>& bound,
                             const std::vector<int32_t>& windows, size_t batch, bool train,
                             Rng* dropout_rng,
                             const std::vector<uint8_t>* mask_override = nullptr);

// Inference convenience (no dropout, throwaway tape). Deep models only.
tensor::Array predict_logits(const Model& model, const std::vector<int32_t>& windows, size_t batch,
                             const std::vector<uint8_t>* mask_override = nullptr);

tensor::Array transformer_forward(const Model& model, const std::vector<int32_t>& window,
                                  bool train = false, Rng* dropout_rng = nullptr);
tensor::Array lstm_forward(const Model& model, const std::vector<int32_t>& window,
                           bool train = false, Rng* dropout_rng = nullptr);

// Last non-PAD token; UNK for an all-PAD window.
int32_t naive_predict(const std::vector<int32_t>& window);

// Argmax with ties resolved to the lowest token id.
int32_t argmax_lowest(const double* row, size_t n);

// Greedy autoregressive decoding: predict, append (dropping the oldest
// position), repeat h times. Dropout disabled.
std::vector<int32_t> rollout_horizon(const Model& model, const std::vector<int32_t>& window,
                                     int h);
// Batched variant; returns batch*h predictions row-major.
std::vector<int32_t> rollout_horizon_batch(const Model& model, std::vector<int32_t> windows,
                                           size_t batch, int h);

struct CheckpointMeta {
  uint64_t seed = 0;
  int best_epoch = -1;
  double best_val_loss = 0.0;
};

struct Checkpoint {
  uint16_t version = 0;
  ModelConfig config;
  std::string vocab_fingerprint;
  CheckpointMeta meta;
  ModelParams params;
};

// File layout: magic "LSEER", version u16, header length u32 + JSON header
// (config, vocab fingerprint, meta, parameter manifest), then a little-endian
// f64 blob. Parameters round-trip bitwise.
void save_checkpoint(const Model& model, const prep::Vocabulary& vocab,
                     const CheckpointMeta& meta, const std::string& path);
Checkpoint load_checkpoint(const std::string& path,
                           const prep::Vocabulary* expected_vocab = nullptr);

}  // namespace lockseer::models
