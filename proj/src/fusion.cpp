#include "fmd/fusion.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "fmd/rng.hpp"

#include "json.hpp"

namespace fmd {

std::string to_string(FusionMode m) {
  return m == FusionMode::token_wise ? "token_wise" : "channel_wise";
}
std::string to_string(ModalityTarget t) { return t == ModalityTarget::video ? "video" : "audio"; }
std::string to_string(MaskMethod m) {
  switch (m) {
    case MaskMethod::zero_out: return "zero_out";
    case MaskMethod::gaussian: return "gaussian";
    default: return "identity";
  }
}

FusionMode fusion_mode_from_string(const std::string& s) {
  if (s == "token_wise") return FusionMode::token_wise;
  if (s == "channel_wise") return FusionMode::channel_wise;
  throw std::invalid_argument("unknown fusion_mode '" + s + "'");
}

MaskMethod mask_method_from_string(const std::string& s) {
  if (s == "zero_out") return MaskMethod::zero_out;
  if (s == "gaussian") return MaskMethod::gaussian;
  if (s == "identity") return MaskMethod::identity;
  throw std::invalid_argument("unknown masking method '" + s + "'");
}

void ModalityLayout::validate() const {
  if (M < 0 || N < 0 || L < 0 || U < 0)
    throw std::invalid_argument("layout: negative token count");
  if (fusion_mode == FusionMode::channel_wise && U == 0 && L == 0)
    throw std::invalid_argument("layout: empty channel_wise sequence");
  if (total_len() == 0) throw std::invalid_argument("layout: empty sequence");
}

namespace {

Matrix text_embeddings(const std::vector<int>& text_ids, const DecoderWeights& w) {
  return embed_tokens(w, text_ids);
}

void finish_assembly(MultimodalInput& in) {
  in.assembled = in.content;
  if (in.use_positions) add_position_encoding(in.assembled, 0);
}

}  // namespace

MultimodalInput assemble_token_wise(const Matrix& visual, const Matrix& audio,
                                    const std::vector<int>& text_ids, const DecoderWeights& w) {
  const int d = w.config.d_model;
  if (visual.rows > 0 && visual.cols != d)
    throw std::invalid_argument("assemble: visual width " + std::to_string(visual.cols) +
                                " does not match d_model " + std::to_string(d));
  if (audio.rows > 0 && audio.cols != d)
    throw std::invalid_argument("assemble: audio width " + std::to_string(audio.cols) +
                                " does not match d_model " + std::to_string(d));

  MultimodalInput in;
  in.layout.fusion_mode = FusionMode::token_wise;
  in.layout.M = visual.rows;
  in.layout.N = audio.rows;
  in.layout.L = static_cast<int>(text_ids.size());
  in.layout.validate();
  in.d_model = d;
  in.visual = visual;
  in.audio = audio;
  in.text_ids = text_ids;

  in.content = Matrix(in.layout.total_len(), d);
  if (visual.rows > 0) in.content.set_rows(0, visual);
  if (audio.rows > 0) in.content.set_rows(in.layout.audio_begin(), audio);
  if (!text_ids.empty()) in.content.set_rows(in.layout.text_begin(), text_embeddings(text_ids, w));
  finish_assembly(in);
  return in;
}

MultimodalInput assemble_channel_wise(const Matrix& visual, const Matrix& audio,
                                      const std::vector<int>& text_ids, const DecoderWeights& w) {
  const int d = w.config.d_model;
  if (d % 2 != 0)
    throw std::invalid_argument("assemble: channel_wise needs even d_model, got " +
                                std::to_string(d));
  if (visual.rows != audio.rows)
    throw std::invalid_argument("assemble: visual rows " + std::to_string(visual.rows) +
                                " != audio rows " + std::to_string(audio.rows));
  const int half = d / 2;
  if (visual.rows > 0 && (visual.cols != half || audio.cols != half))
    throw std::invalid_argument("assemble: channel halves must be d_model/2 = " +
                                std::to_string(half) + " wide, got " +
                                std::to_string(visual.cols) + " and " +
                                std::to_string(audio.cols));

  MultimodalInput in;
  in.layout.fusion_mode = FusionMode::channel_wise;
  in.layout.U = visual.rows;
  in.layout.L = static_cast<int>(text_ids.size());
  in.layout.validate();
  in.d_model = d;
  in.visual = visual;
  in.audio = audio;
  in.text_ids = text_ids;

  in.content = Matrix(in.layout.total_len(), d);
  for (int i = 0; i < in.layout.U; ++i) {
    std::copy(visual.row(i), visual.row(i) + half, in.content.row(i));
    std::copy(audio.row(i), audio.row(i) + half, in.content.row(i) + half);
  }
  if (!text_ids.empty()) in.content.set_rows(in.layout.U, text_embeddings(text_ids, w));
  finish_assembly(in);
  return in;
}

namespace {

double block_mean_rms(const Matrix& m, int row_lo, int row_hi, int col_lo, int col_hi) {
  const int rows = row_hi - row_lo;
  const int cols = col_hi - col_lo;
  if (rows <= 0 || cols <= 0) return 0.0;
  double acc = 0.0;
  for (int r = row_lo; r < row_hi; ++r) {
    double sumsq = 0.0;
    for (int c = col_lo; c < col_hi; ++c) sumsq += m.at(r, c) * m.at(r, c);
    acc += std::sqrt(sumsq / cols);
  }
  return acc / rows;
}

void replace_block(Matrix& m, int row_lo, int row_hi, int col_lo, int col_hi, MaskMethod method,
                   uint64_t seed) {
  if (method == MaskMethod::zero_out) {
    for (int r = row_lo; r < row_hi; ++r)
      for (int c = col_lo; c < col_hi; ++c) m.at(r, c) = 0.0;
    return;
  }
  // gaussian: replacement noise matched to the mean RMS of the rows it
  // replaces, so magnitudes stay comparable
  const double scale = block_mean_rms(m, row_lo, row_hi, col_lo, col_hi);
  Rng rng(seed);
  Matrix noise = seeded_gaussian(rng, row_hi - row_lo, col_hi - col_lo, 0.0, scale);
  for (int r = row_lo; r < row_hi; ++r)
    for (int c = col_lo; c < col_hi; ++c) m.at(r, c) = noise.at(r - row_lo, c - col_lo);
}

}  // namespace

MultimodalInput mask_modality(const MultimodalInput& input, ModalityTarget target,
                              MaskMethod method, uint64_t noise_seed) {
  if (input.content.rows != input.layout.total_len())
    throw std::invalid_argument("mask_modality: input not assembled");
  MultimodalInput out = input;
  if (method == MaskMethod::identity) return out;

  const ModalityLayout& lay = input.layout;
  if (lay.fusion_mode == FusionMode::token_wise) {
    const int lo = target == ModalityTarget::video ? lay.video_begin() : lay.audio_begin();
    const int hi = target == ModalityTarget::video ? lay.video_end() : lay.audio_end();
    replace_block(out.content, lo, hi, 0, input.d_model, method, noise_seed);
  } else {
    const int half = input.d_model / 2;
    const int col_lo = target == ModalityTarget::video ? 0 : half;
    const int col_hi = target == ModalityTarget::video ? half : input.d_model;
    replace_block(out.content, lay.av_begin(), lay.av_end(), col_lo, col_hi, method, noise_seed);
  }
  finish_assembly(out);
  return out;
}

// ---------------------------------------------------------------------------
// fixtures

Fixture make_fixture(FusionMode mode, int d_model, int M, int N, int L, int U, int text_vocab,
                     uint64_t seed) {
  if (d_model < 1) throw std::invalid_argument("fixture: d_model must be >= 1");
  if (text_vocab < 1) throw std::invalid_argument("fixture: text vocab must be >= 1");
  Fixture f;
  f.fusion_mode = mode;
  f.d_model = d_model;
  f.seed = seed;
  Rng rng(seed);
  if (mode == FusionMode::token_wise) {
    f.M = M;
    f.N = N;
    f.L = L;
    f.visual = seeded_gaussian(rng, M, d_model, 0.0, 1.0);
    f.audio = seeded_gaussian(rng, N, d_model, 0.0, 1.0);
  } else {
    if (d_model % 2 != 0)
      throw std::invalid_argument("fixture: channel_wise needs even d_model");
    f.U = U;
    f.L = L;
    f.visual = seeded_gaussian(rng, U, d_model / 2, 0.0, 1.0);
    f.audio = seeded_gaussian(rng, U, d_model / 2, 0.0, 1.0);
  }
  f.text_tokens.resize(L);
  for (int i = 0; i < L; ++i) f.text_tokens[i] = rng.uniform_int(text_vocab);
  return f;
}

namespace {

nlohmann::json matrix_to_json(const Matrix& m) {
  nlohmann::json rows = nlohmann::json::array();
  for (int r = 0; r < m.rows; ++r) {
    nlohmann::json row = nlohmann::json::array();
    for (int c = 0; c < m.cols; ++c) row.push_back(m.at(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Matrix matrix_from_json(const nlohmann::json& j, const char* what) {
  if (!j.is_array()) throw std::invalid_argument(std::string("fixture: ") + what + " not an array");
  const int rows = static_cast<int>(j.size());
  int cols = 0;
  if (rows > 0) cols = static_cast<int>(j[0].size());
  Matrix m(rows, cols);
  for (int r = 0; r < rows; ++r) {
    if (static_cast<int>(j[r].size()) != cols)
      throw std::invalid_argument(std::string("fixture: ragged rows in ") + what);
    for (int c = 0; c < cols; ++c) m.at(r, c) = j[r][c].get<double>();
  }
  if (!m.all_finite())
    throw std::invalid_argument(std::string("fixture: non-finite values in ") + what);
  return m;
}

}  // namespace

std::string fixture_to_json(const Fixture& f) {
  nlohmann::json j;
  j["fusion_mode"] = to_string(f.fusion_mode);
  j["d_model"] = f.d_model;
  j["M"] = f.M;
  j["N"] = f.N;
  j["L"] = f.L;
  if (f.fusion_mode == FusionMode::channel_wise) j["U"] = f.U;
  j["visual"] = matrix_to_json(f.visual);
  j["audio"] = matrix_to_json(f.audio);
  j["text_tokens"] = f.text_tokens;
  j["seed"] = f.seed;
  return j.dump(2) + "\n";
}

Fixture fixture_from_json(const std::string& json_text) {
  nlohmann::json j = nlohmann::json::parse(json_text);
  Fixture f;
  f.fusion_mode = fusion_mode_from_string(j.at("fusion_mode").get<std::string>());
  f.d_model = j.at("d_model").get<int>();
  f.M = j.at("M").get<int>();
  f.N = j.at("N").get<int>();
  f.L = j.at("L").get<int>();
  if (j.contains("U")) f.U = j.at("U").get<int>();
  f.visual = matrix_from_json(j.at("visual"), "visual");
  f.audio = matrix_from_json(j.at("audio"), "audio");
  f.text_tokens = j.at("text_tokens").get<std::vector<int>>();
  f.seed = j.at("seed").get<uint64_t>();
  if (f.fusion_mode == FusionMode::channel_wise && !j.contains("U"))
    throw std::invalid_argument("fixture: channel_wise requires U");
  return f;
}

void save_fixture(const Fixture& f, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("fixture: cannot write " + path);
  os << fixture_to_json(f);
  if (!os) throw std::runtime_error("fixture: write failed for " + path);
}

Fixture load_fixture(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("fixture: cannot read " + path);
  std::stringstream ss;
  ss << is.rdbuf();
  return fixture_from_json(ss.str());
}

MultimodalInput assemble_fixture(const Fixture& f, const DecoderWeights& w) {
  if (f.d_model != w.config.d_model)
    throw std::invalid_argument("fixture: d_model " + std::to_string(f.d_model) +
                                " does not match model d_model " +
                                std::to_string(w.config.d_model));
  if (f.fusion_mode == FusionMode::token_wise)
    return assemble_token_wise(f.visual, f.audio, f.text_tokens, w);
  return assemble_channel_wise(f.visual, f.audio, f.text_tokens, w);
}

}  // namespace fmd
