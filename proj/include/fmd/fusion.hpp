#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fmd/decoder.hpp"
#include "fmd/matrix.hpp"

namespace fmd {

enum class FusionMode { token_wise, channel_wise };
enum class ModalityTarget { video, audio };
enum class MaskMethod { zero_out, gaussian, identity };  // identity is a debug hook

std::string to_string(FusionMode m);
std::string to_string(ModalityTarget t);
std::string to_string(MaskMethod m);
FusionMode fusion_mode_from_string(const std::string& s);
MaskMethod mask_method_from_string(const std::string& s);

// Token counts and index ranges of one assembled sequence. Ranges are
// 0-based half-open. token_wise: [video | audio | text], T = M + N + L.
// channel_wise: [joint AV | text], T = U + L, with the visual half in
// channels [0, d/2) and the audio half in [d/2, d).
struct ModalityLayout {
  FusionMode fusion_mode = FusionMode::token_wise;
  int M = 0;  // visual token count (token_wise)
  int N = 0;  // audio token count (token_wise)
  int L = 0;  // text token count
  int U = 0;  // joint audio-visual position count (channel_wise)

  int total_len() const {
    return fusion_mode == FusionMode::token_wise ? M + N + L : U + L;
  }
  int video_begin() const { return 0; }
  int video_end() const { return M; }
  int audio_begin() const { return M; }
  int audio_end() const { return M + N; }
  int text_begin() const { return fusion_mode == FusionMode::token_wise ? M + N : U; }
  int text_end() const { return total_len(); }
  int av_begin() const { return 0; }
  int av_end() const { return U; }

  void validate() const;
};

// An assembled multimodal sequence. `content` holds the rows before
// positional encoding; `assembled` is what the decoder consumes. Masking
// operates on content and re-adds positions, so positions survive intact.
struct MultimodalInput {
  ModalityLayout layout;
  int d_model = 0;
  Matrix visual;              // M x d_model, or U x d_model/2
  Matrix audio;               // N x d_model, or U x d_model/2
  std::vector<int> text_ids;  // length L
  Matrix content;             // T x d_model, pre-position
  Matrix assembled;           // content + positions when use_positions
  bool use_positions = true;  // probe inputs disable this
};

// content = visual ++ audio ++ text embeddings; positions over the full T.
MultimodalInput assemble_token_wise(const Matrix& visual, const Matrix& audio,
                                    const std::vector<int>& text_ids, const DecoderWeights& w);

// content rows 0..U-1 = [visual_i ; audio_i], then text embeddings.
MultimodalInput assemble_channel_wise(const Matrix& visual, const Matrix& audio,
                                      const std::vector<int>& text_ids, const DecoderWeights& w);

// Returns a new input with the target modality's content replaced by zeros
// or by seeded Gaussian noise scaled to the mean RMS of the replaced rows.
// Everything outside the target region is preserved bit for bit.
MultimodalInput mask_modality(const MultimodalInput& input, ModalityTarget target,
                              MaskMethod method, uint64_t noise_seed = 0);

// ---------------------------------------------------------------------------
// fixture files: the JSON exchange format for synthetic inputs

struct Fixture {
  FusionMode fusion_mode = FusionMode::token_wise;
  int d_model = 0;
  int M = 0, N = 0, L = 0, U = 0;
  Matrix visual;
  Matrix audio;
  std::vector<int> text_tokens;
  uint64_t seed = 0;
};

// Seeded synthetic fixture: Gaussian modality embeddings, uniform text ids
// in [0, text_vocab).
Fixture make_fixture(FusionMode mode, int d_model, int M, int N, int L, int U, int text_vocab,
                     uint64_t seed);

std::string fixture_to_json(const Fixture& f);
Fixture fixture_from_json(const std::string& json_text);
void save_fixture(const Fixture& f, const std::string& path);
Fixture load_fixture(const std::string& path);

MultimodalInput assemble_fixture(const Fixture& f, const DecoderWeights& w);

}  // namespace fmd
