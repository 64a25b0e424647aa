#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fmd/engine.hpp"

namespace fmd {

// Share of one attention row falling on each modality range. The row is a
// softmax distribution, so the three masses sum to 1.
struct AttentionMassReport {
  int layer = 0;
  double video_mass = 0.0;
  double audio_mass = 0.0;
  double text_mass = 0.0;
  std::string strategy;
  std::string sample_id;
};

// Masses of the head-averaged last-position attention row captured at
// `layer`. Token-wise layouts only; heads were averaged before summation.
AttentionMassReport modality_attention_mass(const AttentionTrace& trace,
                                            const ModalityLayout& layout, int layer);

// All captured layers of one trace, ascending layer order.
std::vector<AttentionMassReport> modality_attention_mass_all(const AttentionTrace& trace,
                                                             const ModalityLayout& layout);

// Per-head variant: one report per head at `layer`, summed without head
// averaging. Requires per_head_rows capture.
std::vector<AttentionMassReport> modality_attention_mass_per_head(const AttentionTrace& trace,
                                                                  const ModalityLayout& layout,
                                                                  int layer);

struct SweepRow {
  int l_fork = 0;
  double video_mass = 0.0;
  double audio_mass = 0.0;
  double text_mass = 0.0;
  double metric = 0.0;  // planted-task accuracy; NaN when no targets given
  int samples = 0;
};

// Runs fork-merge decoding at every candidate fork layer, averaging the
// merged-pass final-layer masses over the inputs (at l_fork == n_layers the
// merged pass is empty and the branch traces are averaged instead). When
// `targets` is non-empty, metric is the fraction of inputs whose first
// emitted token equals the target.
std::vector<SweepRow> layer_sweep(const DecoderWeights& w,
                                  const std::vector<MultimodalInput>& inputs,
                                  const std::vector<int>& candidates, const ForkConfig& cfg,
                                  const std::vector<int>& targets = {});

// header: l_fork,video_mass,audio_mass,text_mass,metric,samples
std::string sweep_to_csv(const std::vector<SweepRow>& rows);

// dot(a, b) / (|a| |b|); throws on a zero-norm argument.
double cosine_similarity(const std::vector<double>& a, const std::vector<double>& b);

// Cosine similarity between the final-layer last-position hidden states of
// the intact input and of the perturbed input, both full-depth passes.
double hidden_cosine_probe(const DecoderWeights& w, const MultimodalInput& input,
                           ModalityTarget target, MaskMethod method, uint64_t noise_seed = 0);

struct BenchRecord {
  std::string strategy;
  int tokens = 0;
  double wall_seconds = 0.0;
  double tokens_per_second = 0.0;
  double seconds_per_token = 0.0;
  long long layer_applications = 0;  // generation phase, analytic
  long long flops = 0;
  long long layer_applications_per_token = 0;
  std::vector<std::string> notes;
};

struct BenchOptions {
  int max_tokens = 32;
  int warmup_runs = 1;  // per strategy, excluded from timing
  StrategyOptions strategy;
};

// Wall time is machine-dependent and reported only; the analytic layer and
// flop counters carry the cost comparisons.
std::vector<BenchRecord> bench_decoding(const DecoderWeights& w,
                                        const std::vector<MultimodalInput>& inputs,
                                        const std::vector<std::string>& strategies,
                                        const BenchOptions& opts);

// Planted-signal scenario: a probe model plus inputs where the correct
// answer token is carried by the audio tags while the attention scores
// favour video. Vanilla decoding picks the video token; rebalanced merging
// recovers the audio one.
struct PlantedScenario {
  DecoderWeights model;
  std::vector<MultimodalInput> inputs;
  std::vector<int> targets;  // expected first token per input
};

PlantedScenario make_planted_scenario(int samples, uint64_t seed);

}  // namespace fmd
