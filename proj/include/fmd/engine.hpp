#pragma once

#include <map>
#include <string>
#include <vector>

#include "fmd/decoder.hpp"
#include "fmd/fusion.hpp"

namespace fmd {

struct ForkConfig {
  enum class AlphaMode { fixed, online };

  int l_fork = 2;  // merge point; branches run layers [0, l_fork)
  AlphaMode alpha_mode = AlphaMode::fixed;
  double alpha = 0.8;  // calibrated default fusion weight
  MaskMethod masking = MaskMethod::zero_out;
  uint64_t noise_seed = 0;  // gaussian masking; branch seeds are noise_seed, noise_seed + 1

  void validate(int n_layers) const;
};

// Branch hidden states at the merge point, both T x d_model.
struct ForkStates {
  Matrix h_v_fork;  // from the video-masked branch
  Matrix h_a_fork;  // from the audio-masked branch
};

struct FusionWeights {
  double alpha_a = 0.0;
  double alpha_v = 0.0;
  double alpha = 0.0;
};

struct ForkResult {
  ForkStates states;
  KVCache cache_v;  // layers [0, l_fork)
  KVCache cache_a;
  AttentionTrace trace_v;
  AttentionTrace trace_a;
};

struct GenerateOptions {
  int max_tokens = 16;
  int eos_id = -1;  // negative disables the stop token
  CapturePolicy capture;  // applied to prefill passes
};

struct GenerationResult {
  std::string strategy;
  std::vector<int> tokens;
  // Greedy decision scores per emitted token: raw vocabulary logits for
  // vanilla and fork-merge, contrast scores for the contrastive baselines.
  std::vector<std::vector<double>> step_scores;
  std::vector<double> chosen_prob;  // softmax probability of each chosen token
  std::vector<double> prefill_logits;
  FusionWeights fusion;  // fork-merge only
  AttentionTrace trace_merged;
  AttentionTrace trace_branch_v;
  AttentionTrace trace_branch_a;
  CostCounter prefill_cost;
  CostCounter generation_cost;
  double wall_seconds = 0.0;
  std::map<std::string, std::string> effective_config;
  std::vector<std::string> notes;
};

// Masks each modality and runs both variants through layers [0, l_fork).
ForkResult fork(const DecoderWeights& w, const MultimodalInput& input, const ForkConfig& cfg,
                const CapturePolicy& capture = {}, CostCounter* cost = nullptr);

// Position-wise branch combination. Visual rows take (1-alpha) from the
// video-masked branch and alpha from the audio-masked one, audio rows the
// mirror image, text rows the plain mean. alpha = 1 splices each modality
// segment from the branch where it was unmasked; identical branches are a
// fixpoint for every alpha.
Matrix merge_token_wise(const ForkStates& states, const ModalityLayout& layout, double alpha);

// Joint AV rows are summed without halving; text rows are averaged.
Matrix merge_channel_wise(const ForkStates& states, const ModalityLayout& layout);

// Attention-guided fusion weight from full-depth passes over both masked
// variants, reading the final layer's head-averaged attention row of the
// last prompt position. Token-wise layouts only.
FusionWeights estimate_alpha(const DecoderWeights& w, const MultimodalInput& input,
                             const ForkConfig& cfg, CostCounter* cost = nullptr);

// Arithmetic mean of per-input estimates.
FusionWeights calibrate_alpha(const DecoderWeights& w, const std::vector<MultimodalInput>& inputs,
                              const ForkConfig& cfg);
FusionWeights mean_fusion_weights(const std::vector<FusionWeights>& ws);

GenerationResult decode_vanilla(const DecoderWeights& w, const MultimodalInput& input,
                                const GenerateOptions& opts);
GenerationResult decode_fmd(const DecoderWeights& w, const MultimodalInput& input,
                            const ForkConfig& cfg, const GenerateOptions& opts);
// Greedy over log-softmax(final logits) - log-softmax(early-layer logits).
GenerationResult decode_dola_lite(const DecoderWeights& w, const MultimodalInput& input,
                                  int early_layer, const GenerateOptions& opts);
// Greedy over (1+gamma)*logits(input) - gamma*logits(gaussian-masked input).
GenerationResult decode_vcd_lite(const DecoderWeights& w, const MultimodalInput& input,
                                 double gamma, uint64_t noise_seed, const GenerateOptions& opts);

// Shared strategy dispatch for the CLI and the benchmarks.
struct StrategyOptions {
  ForkConfig fork;
  int dola_early_layer = 2;
  double vcd_gamma = 1.0;
  uint64_t vcd_noise_seed = 7;
  GenerateOptions generate;
};
GenerationResult run_strategy(const std::string& name, const DecoderWeights& w,
                              const MultimodalInput& input, const StrategyOptions& opts);

// Greedy pick; ties resolve to the lowest token id.
int argmax_lowest(const std::vector<double>& scores);
std::vector<double> log_softmax(const std::vector<double>& logits);
double softmax_prob_of(const std::vector<double>& scores, int index);

}  // namespace fmd
