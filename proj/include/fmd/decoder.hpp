#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fmd/kernels.hpp"
#include "fmd/matrix.hpp"

namespace fmd {

inline constexpr double kRmsEps = 1e-5;
inline constexpr double kMaskScore = -1e9;

struct ModelConfig {
  int n_layers = 8;
  int n_heads = 4;
  int d_model = 64;
  int d_ff = 128;
  int vocab_size = 256;
  int max_seq_len = 512;

  int d_head() const { return d_model / n_heads; }
  void validate() const;
};

struct LayerWeights {
  std::vector<double> attn_gain;  // d_model
  Matrix wq, wk, wv, wo;          // d_model x d_model
  std::vector<double> ffn_gain;   // d_model
  Matrix w_gate, w_up;            // d_model x d_ff
  Matrix w_down;                  // d_ff x d_model
};

// Pre-norm causal decoder stack: RMS-norm, multi-head self-attention,
// SiLU-gated feed-forward, residual additions, final norm + vocab head.
struct DecoderWeights {
  ModelConfig config;
  Matrix token_embedding;  // vocab_size x d_model
  std::vector<LayerWeights> layers;
  std::vector<double> final_gain;  // d_model
  Matrix lm_head;                  // d_model x vocab_size
};

// Deterministic pseudo-random weights: embeddings std 1, every projection
// std 1/sqrt(d_model), norm gains 1. Draw order is fixed (embedding, then
// per layer wq wk wv wo w_gate w_up w_down, then lm_head), so a (config,
// seed) pair pins every tensor bit-exactly.
DecoderWeights init_weights(const ModelConfig& config, uint64_t seed);

// Append-only per-layer K/V store covering the contiguous layer range
// [layer_lo, layer_lo + layers.size()).
struct KVCache {
  struct LayerKV {
    Matrix k, v;  // cached_len x d_model each
  };
  int layer_lo = 0;
  std::vector<LayerKV> layers;

  static KVCache for_range(int lo, int hi);
  int layer_hi() const { return layer_lo + static_cast<int>(layers.size()); }
  int cached_len() const { return layers.empty() ? 0 : layers.front().k.rows; }
  LayerKV& layer(int abs_index);
};

struct CapturePolicy {
  bool last_row_mean_heads = false;  // head-averaged attention of the last new position
  bool per_head_rows = false;        // same row, one entry per head
  bool full_matrices = false;        // head-averaged full (new x total) attention
};

// Attention rows keyed by absolute layer index. Row length equals the
// sequence length seen by that layer (cached + new positions).
struct AttentionTrace {
  std::map<int, std::vector<double>> last_row;
  std::map<int, std::vector<std::vector<double>>> per_head;
  std::map<int, Matrix> full;

  bool has_layer(int layer) const { return last_row.count(layer) > 0; }
};

// Analytic work counters. Integer-exact and machine-independent: one layer
// application per (layer, forward call); flops count matmul work only
// (2*m*k*n per product).
struct CostCounter {
  long long layer_applications = 0;
  long long flops = 0;

  void add(const CostCounter& o) {
    layer_applications += o.layer_applications;
    flops += o.flops;
  }
};

struct ForwardResult {
  Matrix hidden;
  AttentionTrace trace;
};

// Runs layers [layer_lo, layer_hi) over the new rows in `hidden`. With a
// cache, previously processed positions are attended through the cached
// K/V and the new rows are appended; without one, the block stands alone.
// Causality: new position i attends to all cached positions and to new
// positions <= i, enforced with a -1e9 pre-softmax mask.
ForwardResult forward_range(const DecoderWeights& w, Matrix hidden, int layer_lo, int layer_hi,
                            KVCache* cache = nullptr, const CapturePolicy& capture = {},
                            CostCounter* cost = nullptr);

// Final norm + vocabulary head for a single hidden row.
std::vector<double> project_logits(const DecoderWeights& w, const std::vector<double>& hidden_row,
                                   CostCounter* cost = nullptr);

// Fixed sinusoidal absolute-position encoding.
std::vector<double> position_row(int pos, int d_model);
void add_position_encoding(Matrix& rows, int start_pos);

// Embedding-table lookup, no positions added.
Matrix embed_tokens(const DecoderWeights& w, const std::vector<int>& ids);

// Flat binary checkpoint: magic "FMDMODEL", u32 version, config counts as
// little-endian u64, then tensors in declaration order as little-endian
// IEEE-754 doubles.
void save_checkpoint(const DecoderWeights& w, const std::string& path);
DecoderWeights load_checkpoint(const std::string& path);

}  // namespace fmd
