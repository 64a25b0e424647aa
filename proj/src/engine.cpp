#include "fmd/engine.hpp"

#include <chrono>
#include <cmath>

namespace fmd {

void ForkConfig::validate(int n_layers) const {
  if (l_fork < 0 || l_fork > n_layers)
    throw std::invalid_argument("fork config: l_fork " + std::to_string(l_fork) +
                                " outside [0," + std::to_string(n_layers) + "]");
  if (alpha < 0.0 || alpha > 1.0)
    throw std::invalid_argument("fork config: alpha " + std::to_string(alpha) +
                                " outside [0,1]");
}

int argmax_lowest(const std::vector<double>& scores) {
  if (scores.empty()) throw std::invalid_argument("argmax: empty scores");
  int best = 0;
  for (int i = 1; i < static_cast<int>(scores.size()); ++i)
    if (scores[i] > scores[best]) best = i;
  return best;
}

std::vector<double> log_softmax(const std::vector<double>& logits) {
  double mx = logits.at(0);
  for (double v : logits) mx = std::max(mx, v);
  double sum = 0.0;
  for (double v : logits) sum += std::exp(v - mx);
  const double lse = mx + std::log(sum);
  std::vector<double> out(logits.size());
  for (size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - lse;
  return out;
}

double softmax_prob_of(const std::vector<double>& scores, int index) {
  double mx = scores.at(0);
  for (double v : scores) mx = std::max(mx, v);
  double sum = 0.0;
  for (double v : scores) sum += std::exp(v - mx);
  return std::exp(scores[index] - mx) / sum;
}

ForkResult fork(const DecoderWeights& w, const MultimodalInput& input, const ForkConfig& cfg,
                const CapturePolicy& capture, CostCounter* cost) {
  cfg.validate(w.config.n_layers);
  MultimodalInput masked_v = mask_modality(input, ModalityTarget::video, cfg.masking,
                                           cfg.noise_seed);
  MultimodalInput masked_a = mask_modality(input, ModalityTarget::audio, cfg.masking,
                                           cfg.noise_seed + 1);

  ForkResult r;
  r.cache_v = KVCache::for_range(0, cfg.l_fork);
  r.cache_a = KVCache::for_range(0, cfg.l_fork);
  ForwardResult fv = forward_range(w, masked_v.assembled, 0, cfg.l_fork, &r.cache_v, capture, cost);
  ForwardResult fa = forward_range(w, masked_a.assembled, 0, cfg.l_fork, &r.cache_a, capture, cost);
  r.states.h_v_fork = std::move(fv.hidden);
  r.states.h_a_fork = std::move(fa.hidden);
  r.trace_v = std::move(fv.trace);
  r.trace_a = std::move(fa.trace);
  return r;
}

namespace {

void check_fork_shapes(const ForkStates& s, const ModalityLayout& layout) {
  if (s.h_v_fork.rows != s.h_a_fork.rows || s.h_v_fork.cols != s.h_a_fork.cols)
    throw std::invalid_argument("merge: branch shapes differ");
  if (s.h_v_fork.rows != layout.total_len())
    throw std::invalid_argument("merge: branch length " + std::to_string(s.h_v_fork.rows) +
                                " does not match layout T " +
                                std::to_string(layout.total_len()));
}

// out_row = (1-weight)*base + weight*other, written so that base == other is
// an exact fixpoint and the named endpoints stay exact: weight 1 copies
// `other`, weight 0.5 is the plain arithmetic mean.
void combine_row(const double* base, const double* other, double weight, double* out, int n) {
  if (weight == 1.0) {
    std::copy(other, other + n, out);
  } else if (weight == 0.5) {
    for (int i = 0; i < n; ++i) out[i] = (base[i] + other[i]) / 2.0;
  } else {
    for (int i = 0; i < n; ++i) out[i] = base[i] + weight * (other[i] - base[i]);
  }
}

}  // namespace

Matrix merge_token_wise(const ForkStates& states, const ModalityLayout& layout, double alpha) {
  if (layout.fusion_mode != FusionMode::token_wise)
    throw std::invalid_argument("merge_token_wise: layout is not token_wise");
  if (alpha < 0.0 || alpha > 1.0)
    throw std::invalid_argument("merge_token_wise: alpha outside [0,1]");
  check_fork_shapes(states, layout);

  const Matrix& hv = states.h_v_fork;
  const Matrix& ha = states.h_a_fork;
  const int d = hv.cols;
  Matrix out(hv.rows, d);
  for (int r = layout.video_begin(); r < layout.video_end(); ++r)
    combine_row(hv.row(r), ha.row(r), alpha, out.row(r), d);  // (1-a)*hv + a*ha
  for (int r = layout.audio_begin(); r < layout.audio_end(); ++r)
    combine_row(ha.row(r), hv.row(r), alpha, out.row(r), d);  // a*hv + (1-a)*ha
  for (int r = layout.text_begin(); r < layout.text_end(); ++r)
    combine_row(hv.row(r), ha.row(r), 0.5, out.row(r), d);
  return out;
}

Matrix merge_channel_wise(const ForkStates& states, const ModalityLayout& layout) {
  if (layout.fusion_mode != FusionMode::channel_wise)
    throw std::invalid_argument("merge_channel_wise: layout is not channel_wise");
  check_fork_shapes(states, layout);

  const Matrix& hv = states.h_v_fork;
  const Matrix& ha = states.h_a_fork;
  const int d = hv.cols;
  Matrix out(hv.rows, d);
  for (int r = layout.av_begin(); r < layout.av_end(); ++r) {
    const double* v = hv.row(r);
    const double* a = ha.row(r);
    double* o = out.row(r);
    for (int c = 0; c < d; ++c) o[c] = v[c] + a[c];  // sum, deliberately unhalved
  }
  for (int r = layout.text_begin(); r < layout.text_end(); ++r)
    combine_row(hv.row(r), ha.row(r), 0.5, out.row(r), d);
  return out;
}

namespace {

double range_mass(const std::vector<double>& row, int lo, int hi) {
  double s = 0.0;
  for (int i = lo; i < hi; ++i) s += row[i];
  return s;
}

}  // namespace

FusionWeights estimate_alpha(const DecoderWeights& w, const MultimodalInput& input,
                             const ForkConfig& cfg, CostCounter* cost) {
  if (input.layout.fusion_mode != FusionMode::token_wise)
    throw std::invalid_argument(
        "estimate_alpha: attention-guided fusion is defined for token_wise layouts only");
  const int n = w.config.n_layers;
  CapturePolicy cap;
  cap.last_row_mean_heads = true;

  MultimodalInput masked_v =
      mask_modality(input, ModalityTarget::video, cfg.masking, cfg.noise_seed);
  MultimodalInput masked_a =
      mask_modality(input, ModalityTarget::audio, cfg.masking, cfg.noise_seed + 1);

  ForwardResult rv = forward_range(w, masked_v.assembled, 0, n, nullptr, cap, cost);
  ForwardResult ra = forward_range(w, masked_a.assembled, 0, n, nullptr, cap, cost);

  const std::vector<double>& row_v = rv.trace.last_row.at(n - 1);
  const std::vector<double>& row_a = ra.trace.last_row.at(n - 1);
  const ModalityLayout& lay = input.layout;

  const double v_masses_v = range_mass(row_v, lay.video_begin(), lay.video_end());
  const double v_masses_a = range_mass(row_v, lay.audio_begin(), lay.audio_end());
  const double a_masses_v = range_mass(row_a, lay.video_begin(), lay.video_end());
  const double a_masses_a = range_mass(row_a, lay.audio_begin(), lay.audio_end());

  const double denom_v = v_masses_v + v_masses_a;
  const double denom_a = a_masses_v + a_masses_a;
  if (denom_v < 1e-12 || denom_a < 1e-12)
    throw std::runtime_error("estimate_alpha: degenerate attention, modality mass below 1e-12");

  FusionWeights fw;
  fw.alpha_a = v_masses_a / denom_v;  // unmasked audio share in the video-masked pass
  fw.alpha_v = a_masses_v / denom_a;  // unmasked video share in the audio-masked pass
  fw.alpha = 0.5 * (fw.alpha_a + fw.alpha_v);
  return fw;
}

FusionWeights mean_fusion_weights(const std::vector<FusionWeights>& ws) {
  if (ws.empty()) throw std::invalid_argument("fusion weights: empty collection");
  FusionWeights m;
  for (const auto& w : ws) {
    m.alpha_a += w.alpha_a;
    m.alpha_v += w.alpha_v;
    m.alpha += w.alpha;
  }
  const double n = static_cast<double>(ws.size());
  m.alpha_a /= n;
  m.alpha_v /= n;
  m.alpha /= n;
  return m;
}

FusionWeights calibrate_alpha(const DecoderWeights& w, const std::vector<MultimodalInput>& inputs,
                              const ForkConfig& cfg) {
  if (inputs.empty()) throw std::invalid_argument("calibrate_alpha: empty input collection");
  std::vector<FusionWeights> per_input;
  per_input.reserve(inputs.size());
  for (const auto& in : inputs) per_input.push_back(estimate_alpha(w, in, cfg));
  return mean_fusion_weights(per_input);
}

// ---------------------------------------------------------------------------
// decoding strategies

namespace {

struct StepState {
  std::vector<double> scores;  // decision scores for the next emission
};

void record_step(GenerationResult& res, const std::vector<double>& scores, int token) {
  res.tokens.push_back(token);
  res.step_scores.push_back(scores);
  res.chosen_prob.push_back(softmax_prob_of(scores, token));
}

void check_sequence_budget(const ModelConfig& cfg, int prompt_len, int max_tokens) {
  if (prompt_len + max_tokens > cfg.max_seq_len)
    throw std::invalid_argument("decode: prompt length " + std::to_string(prompt_len) + " + " +
                                std::to_string(max_tokens) + " tokens exceeds max_seq_len " +
                                std::to_string(cfg.max_seq_len));
  if (max_tokens < 0) throw std::invalid_argument("decode: negative max_tokens");
}

Matrix next_token_row(const DecoderWeights& w, const MultimodalInput& input, int token, int pos) {
  Matrix row = embed_tokens(w, {token});
  if (input.use_positions) add_position_encoding(row, pos);
  return row;
}

class Timer {
 public:
  Timer() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

}  // namespace

GenerationResult decode_vanilla(const DecoderWeights& w, const MultimodalInput& input,
                                const GenerateOptions& opts) {
  const int n = w.config.n_layers;
  const int prompt_len = input.assembled.rows;
  check_sequence_budget(w.config, prompt_len, opts.max_tokens);

  Timer timer;
  GenerationResult res;
  res.strategy = "vanilla";
  KVCache cache = KVCache::for_range(0, n);
  ForwardResult pre =
      forward_range(w, input.assembled, 0, n, &cache, opts.capture, &res.prefill_cost);
  res.trace_merged = std::move(pre.trace);
  std::vector<double> logits =
      project_logits(w, std::vector<double>(pre.hidden.row(prompt_len - 1),
                                            pre.hidden.row(prompt_len - 1) + w.config.d_model),
                     &res.prefill_cost);
  res.prefill_logits = logits;

  for (int t = 0; t < opts.max_tokens; ++t) {
    const int token = argmax_lowest(logits);
    record_step(res, logits, token);
    if (token == opts.eos_id) break;
    Matrix row = next_token_row(w, input, token, prompt_len + t);
    ForwardResult step = forward_range(w, std::move(row), 0, n, &cache, {}, &res.generation_cost);
    logits = project_logits(
        w, std::vector<double>(step.hidden.row(0), step.hidden.row(0) + w.config.d_model),
        &res.generation_cost);
  }
  res.wall_seconds = timer.seconds();
  return res;
}

GenerationResult decode_fmd(const DecoderWeights& w, const MultimodalInput& input,
                            const ForkConfig& cfg, const GenerateOptions& opts) {
  const int n = w.config.n_layers;
  const int l_fork = cfg.l_fork;
  cfg.validate(n);
  const int prompt_len = input.assembled.rows;
  check_sequence_budget(w.config, prompt_len, opts.max_tokens);
  const bool token_wise = input.layout.fusion_mode == FusionMode::token_wise;

  Timer timer;
  GenerationResult res;
  res.strategy = "fmd";

  double alpha = cfg.alpha;
  if (token_wise && cfg.alpha_mode == ForkConfig::AlphaMode::online) {
    res.fusion = estimate_alpha(w, input, cfg, &res.prefill_cost);
    alpha = res.fusion.alpha;
  } else {
    res.fusion.alpha = alpha;
  }

  // fork: both masked variants through layers [0, l_fork)
  ForkResult forked = fork(w, input, cfg, opts.capture, &res.prefill_cost);
  res.trace_branch_v = std::move(forked.trace_v);
  res.trace_branch_a = std::move(forked.trace_a);

  // merge at the fork layer, then the joint pass through the rest
  Matrix merged = token_wise ? merge_token_wise(forked.states, input.layout, alpha)
                             : merge_channel_wise(forked.states, input.layout);
  KVCache cache_m = KVCache::for_range(l_fork, n);
  ForwardResult pre =
      forward_range(w, std::move(merged), l_fork, n, &cache_m, opts.capture, &res.prefill_cost);
  res.trace_merged = std::move(pre.trace);
  std::vector<double> logits =
      project_logits(w, std::vector<double>(pre.hidden.row(prompt_len - 1),
                                            pre.hidden.row(prompt_len - 1) + w.config.d_model),
                     &res.prefill_cost);
  res.prefill_logits = logits;

  for (int t = 0; t < opts.max_tokens; ++t) {
    const int token = argmax_lowest(logits);
    record_step(res, logits, token);
    if (token == opts.eos_id) break;

    // generated tokens are language positions: fork them through both
    // branch caches and merge with the text rule (mean) at the fork layer
    Matrix row = next_token_row(w, input, token, prompt_len + t);
    ForwardResult sv = forward_range(w, row, 0, l_fork, &forked.cache_v, {}, &res.generation_cost);
    ForwardResult sa = forward_range(w, row, 0, l_fork, &forked.cache_a, {}, &res.generation_cost);
    Matrix merged_row(1, w.config.d_model);
    for (int c = 0; c < w.config.d_model; ++c)
      merged_row.at(0, c) = (sv.hidden.at(0, c) + sa.hidden.at(0, c)) / 2.0;
    ForwardResult step =
        forward_range(w, std::move(merged_row), l_fork, n, &cache_m, {}, &res.generation_cost);
    logits = project_logits(
        w, std::vector<double>(step.hidden.row(0), step.hidden.row(0) + w.config.d_model),
        &res.generation_cost);
  }
  res.wall_seconds = timer.seconds();
  return res;
}

GenerationResult decode_dola_lite(const DecoderWeights& w, const MultimodalInput& input,
                                  int early_layer, const GenerateOptions& opts) {
  const int n = w.config.n_layers;
  if (early_layer <= 0 || early_layer >= n)
    throw std::invalid_argument("dola: early layer " + std::to_string(early_layer) +
                                " outside (0," + std::to_string(n) + ")");
  const int prompt_len = input.assembled.rows;
  check_sequence_budget(w.config, prompt_len, opts.max_tokens);

  Timer timer;
  GenerationResult res;
  res.strategy = "dola";
  res.notes.push_back("single forward pass with a mid-stack snapshot; no adaptive plausibility "
                      "constraint, fixed early layer");

  KVCache cache = KVCache::for_range(0, n);
  auto contrast_from = [&](Matrix block, CostCounter* cost,
                           const CapturePolicy& cap) -> std::vector<double> {
    ForwardResult lo = forward_range(w, std::move(block), 0, early_layer, &cache, cap, cost);
    const int last = lo.hidden.rows - 1;
    std::vector<double> early_row(lo.hidden.row(last), lo.hidden.row(last) + w.config.d_model);
    ForwardResult hi = forward_range(w, std::move(lo.hidden), early_layer, n, &cache, cap, cost);
    std::vector<double> final_row(hi.hidden.row(last), hi.hidden.row(last) + w.config.d_model);
    std::vector<double> early_logits = project_logits(w, early_row, cost);
    std::vector<double> final_logits = project_logits(w, final_row, cost);
    if (res.prefill_logits.empty()) res.prefill_logits = final_logits;
    std::vector<double> ls_final = log_softmax(final_logits);
    std::vector<double> ls_early = log_softmax(early_logits);
    std::vector<double> contrast(ls_final.size());
    for (size_t i = 0; i < contrast.size(); ++i) contrast[i] = ls_final[i] - ls_early[i];
    return contrast;
  };

  std::vector<double> scores = contrast_from(input.assembled, &res.prefill_cost, opts.capture);
  for (int t = 0; t < opts.max_tokens; ++t) {
    const int token = argmax_lowest(scores);
    record_step(res, scores, token);
    if (token == opts.eos_id) break;
    Matrix row = next_token_row(w, input, token, prompt_len + t);
    scores = contrast_from(std::move(row), &res.generation_cost, {});
  }
  res.wall_seconds = timer.seconds();
  return res;
}

GenerationResult decode_vcd_lite(const DecoderWeights& w, const MultimodalInput& input,
                                 double gamma, uint64_t noise_seed, const GenerateOptions& opts) {
  if (gamma < 0.0) throw std::invalid_argument("vcd: gamma must be >= 0");
  const int n = w.config.n_layers;
  const int prompt_len = input.assembled.rows;
  check_sequence_budget(w.config, prompt_len, opts.max_tokens);

  Timer timer;
  GenerationResult res;
  res.strategy = "vcd";
  res.notes.push_back("both modalities gaussian-masked for the contrast pass; no adaptive "
                      "plausibility constraint");

  MultimodalInput noised =
      mask_modality(mask_modality(input, ModalityTarget::video, MaskMethod::gaussian, noise_seed),
                    ModalityTarget::audio, MaskMethod::gaussian, noise_seed + 1);

  KVCache cache_o = KVCache::for_range(0, n);
  KVCache cache_n = KVCache::for_range(0, n);

  auto logits_of = [&](Matrix block, KVCache& cache, CostCounter* cost,
                       const CapturePolicy& cap) -> std::vector<double> {
    ForwardResult r = forward_range(w, std::move(block), 0, n, &cache, cap, cost);
    const int last = r.hidden.rows - 1;
    return project_logits(
        w, std::vector<double>(r.hidden.row(last), r.hidden.row(last) + w.config.d_model), cost);
  };

  std::vector<double> logits_o =
      logits_of(input.assembled, cache_o, &res.prefill_cost, opts.capture);
  std::vector<double> logits_n = logits_of(noised.assembled, cache_n, &res.prefill_cost, {});
  res.prefill_logits = logits_o;

  auto contrast = [&]() {
    std::vector<double> s(logits_o.size());
    for (size_t i = 0; i < s.size(); ++i)
      s[i] = (1.0 + gamma) * logits_o[i] - gamma * logits_n[i];
    return s;
  };

  std::vector<double> scores = contrast();
  for (int t = 0; t < opts.max_tokens; ++t) {
    const int token = argmax_lowest(scores);
    record_step(res, scores, token);
    if (token == opts.eos_id) break;
    Matrix row = next_token_row(w, input, token, prompt_len + t);
    logits_o = logits_of(row, cache_o, &res.generation_cost, {});
    logits_n = logits_of(std::move(row), cache_n, &res.generation_cost, {});
    scores = contrast();
  }
  res.wall_seconds = timer.seconds();
  return res;
}

GenerationResult run_strategy(const std::string& name, const DecoderWeights& w,
                              const MultimodalInput& input, const StrategyOptions& opts) {
  if (name == "vanilla") return decode_vanilla(w, input, opts.generate);
  if (name == "fmd") return decode_fmd(w, input, opts.fork, opts.generate);
  if (name == "dola") return decode_dola_lite(w, input, opts.dola_early_layer, opts.generate);
  if (name == "vcd")
    return decode_vcd_lite(w, input, opts.vcd_gamma, opts.vcd_noise_seed, opts.generate);
  throw std::invalid_argument("unknown strategy '" + name +
                              "' (expected vanilla, fmd, dola or vcd)");
}

}  // namespace fmd
