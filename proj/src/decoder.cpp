#include "fmd/decoder.hpp"

#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "fmd/rng.hpp"

namespace fmd {

void ModelConfig::validate() const {
  auto positive = [](int v, const char* name) {
    if (v < 1) throw std::invalid_argument(std::string("config: ") + name + " must be >= 1");
  };
  positive(n_layers, "n_layers");
  positive(n_heads, "n_heads");
  positive(d_model, "d_model");
  positive(d_ff, "d_ff");
  positive(vocab_size, "vocab_size");
  positive(max_seq_len, "max_seq_len");
  if (d_model % n_heads != 0)
    throw std::invalid_argument("config: d_model " + std::to_string(d_model) +
                                " not divisible by n_heads " + std::to_string(n_heads));
}

DecoderWeights init_weights(const ModelConfig& config, uint64_t seed) {
  config.validate();
  Rng rng(seed);
  const double proj_std = 1.0 / std::sqrt(static_cast<double>(config.d_model));

  DecoderWeights w;
  w.config = config;
  w.token_embedding = seeded_gaussian(rng, config.vocab_size, config.d_model, 0.0, 1.0);
  w.layers.resize(config.n_layers);
  for (auto& lw : w.layers) {
    lw.attn_gain.assign(config.d_model, 1.0);
    lw.wq = seeded_gaussian(rng, config.d_model, config.d_model, 0.0, proj_std);
    lw.wk = seeded_gaussian(rng, config.d_model, config.d_model, 0.0, proj_std);
    lw.wv = seeded_gaussian(rng, config.d_model, config.d_model, 0.0, proj_std);
    lw.wo = seeded_gaussian(rng, config.d_model, config.d_model, 0.0, proj_std);
    lw.ffn_gain.assign(config.d_model, 1.0);
    lw.w_gate = seeded_gaussian(rng, config.d_model, config.d_ff, 0.0, proj_std);
    lw.w_up = seeded_gaussian(rng, config.d_model, config.d_ff, 0.0, proj_std);
    lw.w_down = seeded_gaussian(rng, config.d_ff, config.d_model, 0.0, proj_std);
  }
  w.final_gain.assign(config.d_model, 1.0);
  w.lm_head = seeded_gaussian(rng, config.d_model, config.vocab_size, 0.0, proj_std);
  return w;
}

KVCache KVCache::for_range(int lo, int hi) {
  if (lo < 0 || hi < lo) throw std::invalid_argument("kv cache: bad layer range");
  KVCache c;
  c.layer_lo = lo;
  c.layers.resize(hi - lo);
  return c;
}

KVCache::LayerKV& KVCache::layer(int abs_index) {
  const int i = abs_index - layer_lo;
  if (i < 0 || i >= static_cast<int>(layers.size()))
    throw std::invalid_argument("kv cache: layer " + std::to_string(abs_index) +
                                " outside covered range [" + std::to_string(layer_lo) + "," +
                                std::to_string(layer_hi()) + ")");
  return layers[i];
}

namespace {

// One decoder layer over the new rows; appends K/V to the cache layer when
// present. `probs_mean` (new x total) is filled when capture wants it.
void run_layer(const ModelConfig& cfg, const LayerWeights& lw, Matrix& x, KVCache::LayerKV* kv,
               const CapturePolicy& capture, int abs_layer, AttentionTrace& trace,
               CostCounter* cost) {
  const int t_new = x.rows;
  const int d = cfg.d_model;
  const int heads = cfg.n_heads;
  const int dh = cfg.d_head();

  Matrix attn_in = rms_norm_rows(x, lw.attn_gain, kRmsEps);
  Matrix q = matmul(attn_in, lw.wq);
  Matrix k_new = matmul(attn_in, lw.wk);
  Matrix v_new = matmul(attn_in, lw.wv);

  int offset = 0;
  const Matrix* k_all = &k_new;
  const Matrix* v_all = &v_new;
  if (kv != nullptr) {
    offset = kv->k.rows;
    kv->k.append_rows(k_new);
    kv->v.append_rows(v_new);
    k_all = &kv->k;
    v_all = &kv->v;
  }
  const int total = k_all->rows;
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  const bool want_capture =
      capture.last_row_mean_heads || capture.per_head_rows || capture.full_matrices;

  Matrix attn_out(t_new, d);
  Matrix probs_sum;
  if (want_capture) probs_sum = Matrix::zeros(t_new, total);

  for (int h = 0; h < heads; ++h) {
    Matrix qh = q.slice_cols(h * dh, (h + 1) * dh);
    Matrix kh = k_all->slice_cols(h * dh, (h + 1) * dh);
    Matrix scores = matmul_nt(qh, kh);
    for (int i = 0; i < t_new; ++i) {
      double* row = scores.row(i);
      const int visible = offset + i + 1;  // keys at positions <= this query
      for (int j = 0; j < visible; ++j) row[j] *= inv_sqrt_dh;
      for (int j = visible; j < total; ++j) row[j] = kMaskScore;
    }
    Matrix probs = softmax_rows(scores);
    if (want_capture) {
      add_inplace(probs_sum, probs);
      if (capture.per_head_rows) {
        const double* last = probs.row(t_new - 1);
        trace.per_head[abs_layer].emplace_back(last, last + total);
      }
    }
    Matrix vh = v_all->slice_cols(h * dh, (h + 1) * dh);
    Matrix mixed = matmul(probs, vh);
    attn_out.set_cols(h * dh, mixed);
  }

  if (want_capture) {
    for (double& v : probs_sum.values) v /= static_cast<double>(heads);
    if (capture.last_row_mean_heads) {
      const double* last = probs_sum.row(t_new - 1);
      trace.last_row[abs_layer] = std::vector<double>(last, last + total);
    }
    if (capture.full_matrices) trace.full[abs_layer] = probs_sum;
  }

  Matrix attn_proj = matmul(attn_out, lw.wo);
  add_inplace(x, attn_proj);

  Matrix ffn_in = rms_norm_rows(x, lw.ffn_gain, kRmsEps);
  Matrix gate = matmul(ffn_in, lw.w_gate);
  Matrix up = matmul(ffn_in, lw.w_up);
  silu_mul_inplace(gate, up);
  Matrix down = matmul(gate, lw.w_down);
  add_inplace(x, down);

  if (cost != nullptr) {
    cost->layer_applications += 1;
    const long long tn = t_new, tt = total, dd = d, dff = cfg.d_ff;
    cost->flops += 8 * tn * dd * dd;   // q/k/v/o projections
    cost->flops += 4 * tn * tt * dd;   // scores + value mix over all heads
    cost->flops += 6 * tn * dd * dff;  // gated feed-forward
  }
}

}  // namespace

ForwardResult forward_range(const DecoderWeights& w, Matrix hidden, int layer_lo, int layer_hi,
                            KVCache* cache, const CapturePolicy& capture, CostCounter* cost) {
  const ModelConfig& cfg = w.config;
  if (layer_lo < 0 || layer_hi < layer_lo || layer_hi > cfg.n_layers)
    throw std::invalid_argument("forward_range: layer range [" + std::to_string(layer_lo) + "," +
                                std::to_string(layer_hi) + ") outside 0.." +
                                std::to_string(cfg.n_layers));
  if (hidden.cols != cfg.d_model)
    throw std::invalid_argument("forward_range: hidden width " + std::to_string(hidden.cols) +
                                " does not match d_model " + std::to_string(cfg.d_model));
  if (cache != nullptr && layer_hi > layer_lo) {
    if (layer_lo < cache->layer_lo || layer_hi > cache->layer_hi())
      throw std::invalid_argument("forward_range: cache covers [" +
                                  std::to_string(cache->layer_lo) + "," +
                                  std::to_string(cache->layer_hi()) + "), asked for [" +
                                  std::to_string(layer_lo) + "," + std::to_string(layer_hi) + ")");
    const Matrix& k0 = cache->layer(layer_lo).k;
    if (k0.rows > 0 && k0.cols != cfg.d_model)
      throw std::invalid_argument("forward_range: cache width does not match model");
  }

  ForwardResult result;
  for (int l = layer_lo; l < layer_hi; ++l) {
    KVCache::LayerKV* kv = cache != nullptr ? &cache->layer(l) : nullptr;
    run_layer(cfg, w.layers[l], hidden, kv, capture, l, result.trace, cost);
  }
  result.hidden = std::move(hidden);
  return result;
}

std::vector<double> project_logits(const DecoderWeights& w, const std::vector<double>& hidden_row,
                                   CostCounter* cost) {
  if (static_cast<int>(hidden_row.size()) != w.config.d_model)
    throw std::invalid_argument("project_logits: row length " +
                                std::to_string(hidden_row.size()) + " does not match d_model " +
                                std::to_string(w.config.d_model));
  std::vector<double> normed = rms_norm(hidden_row, w.final_gain, kRmsEps);
  Matrix row(1, w.config.d_model, std::move(normed));
  Matrix logits = matmul(row, w.lm_head);
  if (cost != nullptr)
    cost->flops += 2LL * w.config.d_model * w.config.vocab_size;
  return logits.values;
}

std::vector<double> position_row(int pos, int d_model) {
  std::vector<double> pe(d_model, 0.0);
  for (int i = 0; i < d_model; i += 2) {
    const double freq = std::pow(10000.0, -static_cast<double>(i) / d_model);
    pe[i] = std::sin(pos * freq);
    if (i + 1 < d_model) pe[i + 1] = std::cos(pos * freq);
  }
  return pe;
}

void add_position_encoding(Matrix& rows, int start_pos) {
  for (int r = 0; r < rows.rows; ++r) {
    std::vector<double> pe = position_row(start_pos + r, rows.cols);
    double* dst = rows.row(r);
    for (int c = 0; c < rows.cols; ++c) dst[c] += pe[c];
  }
}

Matrix embed_tokens(const DecoderWeights& w, const std::vector<int>& ids) {
  Matrix out(static_cast<int>(ids.size()), w.config.d_model);
  for (size_t i = 0; i < ids.size(); ++i) {
    const int id = ids[i];
    if (id < 0 || id >= w.config.vocab_size)
      throw std::invalid_argument("embed_tokens: token id " + std::to_string(id) +
                                  " outside vocab of " + std::to_string(w.config.vocab_size));
    std::copy(w.token_embedding.row(id), w.token_embedding.row(id) + w.config.d_model, out.row(i));
  }
  return out;
}

// ---------------------------------------------------------------------------
// checkpoint io

namespace {

constexpr char kMagic[8] = {'F', 'M', 'D', 'M', 'O', 'D', 'E', 'L'};
constexpr uint32_t kVersion = 1;

void put_u64(std::ostream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  os.write(reinterpret_cast<const char*>(b), 8);
}

uint64_t get_u64(std::istream& is) {
  unsigned char b[8];
  is.read(reinterpret_cast<char*>(b), 8);
  uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return v;
}

void put_doubles(std::ostream& os, const std::vector<double>& v) {
  for (double d : v) put_u64(os, std::bit_cast<uint64_t>(d));
}

void get_doubles(std::istream& is, std::vector<double>& v) {
  for (double& d : v) d = std::bit_cast<double>(get_u64(is));
}

void put_matrix(std::ostream& os, const Matrix& m) { put_doubles(os, m.values); }

void get_matrix(std::istream& is, Matrix& m, int rows, int cols) {
  m = Matrix(rows, cols);
  get_doubles(is, m.values);
}

}  // namespace

void save_checkpoint(const DecoderWeights& w, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("checkpoint: cannot write " + path);
  os.write(kMagic, 8);
  put_u64(os, kVersion);
  put_u64(os, w.config.n_layers);
  put_u64(os, w.config.n_heads);
  put_u64(os, w.config.d_model);
  put_u64(os, w.config.d_ff);
  put_u64(os, w.config.vocab_size);
  put_u64(os, w.config.max_seq_len);
  put_matrix(os, w.token_embedding);
  for (const auto& lw : w.layers) {
    put_doubles(os, lw.attn_gain);
    put_matrix(os, lw.wq);
    put_matrix(os, lw.wk);
    put_matrix(os, lw.wv);
    put_matrix(os, lw.wo);
    put_doubles(os, lw.ffn_gain);
    put_matrix(os, lw.w_gate);
    put_matrix(os, lw.w_up);
    put_matrix(os, lw.w_down);
  }
  put_doubles(os, w.final_gain);
  put_matrix(os, w.lm_head);
  if (!os) throw std::runtime_error("checkpoint: write failed for " + path);
}

DecoderWeights load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("checkpoint: cannot read " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || !std::equal(magic, magic + 8, kMagic))
    throw std::runtime_error("checkpoint: bad magic in " + path);
  const uint64_t version = get_u64(is);
  if (version != kVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));

  ModelConfig cfg;
  cfg.n_layers = static_cast<int>(get_u64(is));
  cfg.n_heads = static_cast<int>(get_u64(is));
  cfg.d_model = static_cast<int>(get_u64(is));
  cfg.d_ff = static_cast<int>(get_u64(is));
  cfg.vocab_size = static_cast<int>(get_u64(is));
  cfg.max_seq_len = static_cast<int>(get_u64(is));
  cfg.validate();

  DecoderWeights w;
  w.config = cfg;
  get_matrix(is, w.token_embedding, cfg.vocab_size, cfg.d_model);
  w.layers.resize(cfg.n_layers);
  for (auto& lw : w.layers) {
    lw.attn_gain.resize(cfg.d_model);
    get_doubles(is, lw.attn_gain);
    get_matrix(is, lw.wq, cfg.d_model, cfg.d_model);
    get_matrix(is, lw.wk, cfg.d_model, cfg.d_model);
    get_matrix(is, lw.wv, cfg.d_model, cfg.d_model);
    get_matrix(is, lw.wo, cfg.d_model, cfg.d_model);
    lw.ffn_gain.resize(cfg.d_model);
    get_doubles(is, lw.ffn_gain);
    get_matrix(is, lw.w_gate, cfg.d_model, cfg.d_ff);
    get_matrix(is, lw.w_up, cfg.d_model, cfg.d_ff);
    get_matrix(is, lw.w_down, cfg.d_ff, cfg.d_model);
  }
  w.final_gain.resize(cfg.d_model);
  get_doubles(is, w.final_gain);
  get_matrix(is, w.lm_head, cfg.d_model, cfg.vocab_size);
  if (!is) throw std::runtime_error("checkpoint: truncated file " + path);

  char extra;
  if (is.read(&extra, 1))
    throw std::runtime_error("checkpoint: trailing bytes in " + path);
  if (!w.token_embedding.all_finite() || !w.lm_head.all_finite())
    throw std::runtime_error("checkpoint: non-finite values in " + path);
  return w;
}

}  // namespace fmd
