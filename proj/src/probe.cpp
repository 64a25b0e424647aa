#include "fmd/probe.hpp"

#include <cmath>

namespace fmd {

namespace {

// rms_norm output of a hot channel in a row with `hot` channels of the
// given amplitude (everything else zero).
double normed_tag(int hot, double amplitude, int d_model) {
  const double mean_sq = hot * amplitude * amplitude / static_cast<double>(d_model);
  return amplitude / std::sqrt(mean_sq + kRmsEps);
}

}  // namespace

DecoderWeights build_probe_model(const ModelConfig& config, const ProbeSpec& spec) {
  config.validate();
  if (config.n_layers != 1 && config.n_layers != 2)
    throw std::invalid_argument("probe: n_layers must be 1 or 2, got " +
                                std::to_string(config.n_layers));
  if (config.n_heads != 1)
    throw std::invalid_argument("probe: n_heads must be 1, got " +
                                std::to_string(config.n_heads));
  if (config.d_model < kProbeMinWidth)
    throw std::invalid_argument("probe: d_model must be >= " + std::to_string(kProbeMinWidth) +
                                ", got " + std::to_string(config.d_model));
  if (spec.tag_amplitude <= 0.0)
    throw std::invalid_argument("probe: tag_amplitude must be positive");
  if (spec.video_token < 0 || spec.video_token >= config.vocab_size ||
      spec.audio_token < 0 || spec.audio_token >= config.vocab_size)
    throw std::invalid_argument("probe: planted token id outside vocab of " +
                                std::to_string(config.vocab_size));

  const int d = config.d_model;
  const double t = spec.tag_amplitude;
  // modality/text rows carry two hot channels, the query row three
  const double tag2 = normed_tag(2, t, d);
  const double tag3 = normed_tag(3, t, d);
  const double sqrt_dh = std::sqrt(static_cast<double>(d));

  DecoderWeights w;
  w.config = config;
  w.token_embedding = Matrix::zeros(config.vocab_size, d);
  w.layers.resize(config.n_layers);
  for (auto& lw : w.layers) {
    lw.attn_gain.assign(d, 1.0);
    lw.wq = Matrix::zeros(d, d);
    lw.wk = Matrix::zeros(d, d);
    lw.wv = Matrix::zeros(d, d);
    lw.wo = Matrix::zeros(d, d);
    lw.ffn_gain.assign(d, 1.0);
    lw.w_gate = Matrix::zeros(d, config.d_ff);
    lw.w_up = Matrix::zeros(d, config.d_ff);
    lw.w_down = Matrix::zeros(config.d_ff, d);
  }
  w.final_gain.assign(d, 1.0);
  w.lm_head = Matrix::zeros(d, config.vocab_size);

  // Only the top layer scores; any layer below it stays an exact identity
  // (zero attention values, zero feed-forward).
  LayerWeights& top = w.layers.back();
  // q[0] = sqrt(d_head) for the query row, so scores reduce to k[0]
  top.wq.at(kProbeQueryChannel, 0) = sqrt_dh / tag3;
  // k[0] = video_score / audio_score on unmasked modality rows, 0 elsewhere
  top.wk.at(kProbeVideoChannel, 0) = spec.video_score / tag2;
  top.wk.at(kProbeAudioChannel, 0) = spec.audio_score / tag2;

  if (spec.value_gain != 0.0) {
    top.wv.at(kProbeVideoChannel, kProbeVideoChannel) = spec.value_gain / tag2;
    top.wv.at(kProbeAudioChannel, kProbeAudioChannel) = spec.value_gain / tag2;
    top.wo.at(kProbeVideoChannel, kProbeVideoChannel) = 1.0;
    top.wo.at(kProbeAudioChannel, kProbeAudioChannel) = 1.0;
    w.lm_head.at(kProbeVideoChannel, spec.video_token) = spec.video_logit_weight;
    w.lm_head.at(kProbeAudioChannel, spec.audio_token) = spec.audio_logit_weight;
  }
  return w;
}

MultimodalInput build_probe_input(int M, int N, int L, int d_model, double tag_amplitude) {
  if (L < 1) throw std::invalid_argument("probe input: needs at least one text row");
  if (d_model < kProbeMinWidth)
    throw std::invalid_argument("probe input: d_model must be >= " +
                                std::to_string(kProbeMinWidth));
  const double t = tag_amplitude;

  MultimodalInput in;
  in.layout.fusion_mode = FusionMode::token_wise;
  in.layout.M = M;
  in.layout.N = N;
  in.layout.L = L;
  in.layout.validate();
  in.d_model = d_model;
  in.use_positions = false;  // scores must stay a pure function of the tags
  in.text_ids.assign(L, 0);

  const int T = in.layout.total_len();
  in.content = Matrix::zeros(T, d_model);
  for (int r = in.layout.video_begin(); r < in.layout.video_end(); ++r) {
    in.content.at(r, kProbeVideoChannel) = t;
    in.content.at(r, kProbeContentChannel) = t;
  }
  for (int r = in.layout.audio_begin(); r < in.layout.audio_end(); ++r) {
    in.content.at(r, kProbeAudioChannel) = t;
    in.content.at(r, kProbeContentChannel) = t;
  }
  for (int r = in.layout.text_begin(); r < in.layout.text_end(); ++r) {
    in.content.at(r, kProbeTextChannel) = t;
    in.content.at(r, kProbeContentChannel) = t;
  }
  in.content.at(T - 1, kProbeQueryChannel) = t;  // the query row

  in.visual = in.content.slice_rows(in.layout.video_begin(), in.layout.video_end());
  in.audio = in.content.slice_rows(in.layout.audio_begin(), in.layout.audio_end());
  in.assembled = in.content;
  return in;
}

}  // namespace fmd
