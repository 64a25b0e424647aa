#pragma once

#include "fmd/decoder.hpp"
#include "fmd/fusion.hpp"

namespace fmd {

// Hand-constructed single-head decoder whose attention behaviour is
// computable in closed form. Probe inputs carry one-hot modality tags
// (fixed channels, positional encoding disabled); all layers below the
// top are exact identities, and the top layer scores the last position's
// attention as: video rows -> video_score, audio rows -> audio_score,
// text and zeroed rows -> exactly 0.
//
// With value_gain > 0 the top layer additionally routes attention mass on
// the tag channels into the residual stream, and the vocabulary head maps
// the video channel to video_token (weight video_logit_weight) and the
// audio channel to audio_token. That turns the probe into a planted-signal
// task: the emitted first token reveals which modality carried more mass.
struct ProbeSpec {
  double video_score = 0.0;
  double audio_score = 0.0;
  double tag_amplitude = 1.0;  // amplitude of the tag channels in probe inputs
  double value_gain = 0.0;
  int video_token = 0;
  int audio_token = 1;
  double video_logit_weight = 1.0;
  double audio_logit_weight = 1.0;
};

// Tag channel assignments of probe inputs.
inline constexpr int kProbeQueryChannel = 0;
inline constexpr int kProbeVideoChannel = 1;
inline constexpr int kProbeAudioChannel = 2;
inline constexpr int kProbeContentChannel = 3;
inline constexpr int kProbeTextChannel = 4;
inline constexpr int kProbeMinWidth = 5;

// Requires n_layers in {1, 2}, n_heads == 1, d_model >= 5.
DecoderWeights build_probe_model(const ModelConfig& config, const ProbeSpec& spec);

// Token-wise probe input with the canonical tag rows; L >= 1 (the last
// text row is the query).
MultimodalInput build_probe_input(int M, int N, int L, int d_model, double tag_amplitude = 1.0);

}  // namespace fmd
