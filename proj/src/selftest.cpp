#include "fmd/selftest.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

#include "fmd/analysis.hpp"
#include "fmd/engine.hpp"
#include "fmd/probe.hpp"
#include "fmd/rng.hpp"

namespace fmd {

namespace {

// embedded copy of tests/data/rng_golden_seed42.txt
const char* const kRngGolden[64] = {
    "0.74156487877182331", "0.1599103928769201", "0.27860113025513866", "0.34419071652363753",
    "0.038030168540246212", "0.86822807654653233", "0.21840519371218436", "0.80063187671350333",
    "0.33993103891702059", "0.61848206635613479", "0.20490183179877552", "0.49298918579469242",
    "0.51339611632214943", "0.52001329960324016", "0.66515941079970109", "0.20343510930023068",
    "0.10357423567927071", "0.49549865814924343", "0.093427655353168881", "0.68894637240141321",
    "0.95732523766158417", "0.073053769103464838", "0.59981630393375718", "0.61981903489909762",
    "0.074160811063591292", "0.27756737998567216", "0.74197930587081606", "0.78549945949609989",
    "0.9419273254004864", "0.69417757432106109", "0.7899082678505488", "0.84051648208752694",
    "0.64709462560462661", "0.78215628914385416", "0.6375291645032517", "0.38002286858221768",
    "0.063024994207397045", "0.26605282841334288", "0.76120512014869257", "0.091966967213678585",
    "0.53025413468168436", "0.15905491002028571", "0.2730644319655765", "0.77478312226834822",
    "0.66829464258559668", "0.32139128933780203", "0.084481777299961092", "0.14250189976805827",
    "0.50487116427269052", "0.9693712379675522", "0.3681666875762265", "0.18849745635444504",
    "0.15432260586548863", "0.32015186103378757", "0.026077688930506215", "0.82250231133115226",
    "0.6837164912848922", "0.5559649975042259", "0.87513963413554197", "0.032260281541106939",
    "0.25914763262366258", "0.96480268501434063", "0.60951185779014794", "0.044888247773658629"};

struct Check {
  std::vector<SelftestResult>& out;

  void run(const std::string& name, const std::function<std::string()>& body) {
    SelftestResult r;
    r.name = name;
    try {
      r.detail = body();
      r.pass = true;
    } catch (const std::exception& e) {
      r.pass = false;
      r.detail = e.what();
    }
    out.push_back(std::move(r));
  }
};

void expect(bool cond, const std::string& msg) {
  if (!cond) throw std::runtime_error(msg);
}

Matrix random_matrix(Rng& rng, int r, int c, double lo, double hi) {
  Matrix m(r, c);
  for (double& v : m.values) v = lo + (hi - lo) * rng.uniform();
  return m;
}

Matrix naive_matmul(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows, b.cols);
  for (int i = 0; i < a.rows; ++i)
    for (int j = 0; j < b.cols; ++j) {
      double acc = 0.0;
      for (int k = 0; k < a.cols; ++k) acc += a.at(i, k) * b.at(k, j);
      out.at(i, j) = acc;
    }
  return out;
}

ModelConfig tiny_config(int layers = 4, int heads = 2, int d = 32, int dff = 48, int vocab = 64) {
  ModelConfig cfg;
  cfg.n_layers = layers;
  cfg.n_heads = heads;
  cfg.d_model = d;
  cfg.d_ff = dff;
  cfg.vocab_size = vocab;
  cfg.max_seq_len = 256;
  return cfg;
}

MultimodalInput fixture_input(const DecoderWeights& w, uint64_t seed, int m = 4, int n = 4,
                              int l = 4) {
  Fixture f = make_fixture(FusionMode::token_wise, w.config.d_model, m, n, l,
                           0, w.config.vocab_size, seed);
  return assemble_fixture(f, w);
}

std::string check_rng_golden(const std::string& path) {
  std::vector<double> expected;
  if (path.empty()) {
    for (const char* s : kRngGolden) expected.push_back(std::strtod(s, nullptr));
  } else {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot read golden file " + path);
    std::string line;
    while (std::getline(is, line))
      if (!line.empty()) expected.push_back(std::strtod(line.c_str(), nullptr));
    if (expected.size() != 64)
      throw std::runtime_error("golden file has " + std::to_string(expected.size()) +
                               " values, expected 64");
  }
  Rng rng(42);
  for (size_t i = 0; i < expected.size(); ++i) {
    const double got = rng.uniform();
    if (got != expected[i])
      throw std::runtime_error("draw " + std::to_string(i) + " mismatch: got " +
                               std::to_string(got) + ", golden " + std::to_string(expected[i]));
  }
  return "64 draws bit-exact";
}

}  // namespace

std::vector<SelftestResult> run_selftest(const SelftestOptions& opts) {
  std::vector<SelftestResult> results;
  Check check{results};

  check.run("rng.golden_stream", [&] { return check_rng_golden(opts.rng_golden_path); });

  check.run("rng.determinism", [] {
    Rng a(9001), b(9001);
    for (int i = 0; i < 256; ++i) expect(a.next_u64() == b.next_u64(), "streams diverged");
    Rng c(5);
    Matrix z = seeded_gaussian(c, 3, 3, 2.5, 0.0);
    for (double v : z.values) expect(v == 2.5, "std=0 draw is not the mean");
    return std::string("same-seed streams identical; std=0 collapses to mean");
  });

  check.run("rng.gaussian_moments", [] {
    Rng rng(1234);
    Matrix m = seeded_gaussian(rng, 100000, 1, 0.0, 1.0);
    double mean = 0.0;
    for (double v : m.values) mean += v;
    mean /= m.values.size();
    double var = 0.0;
    for (double v : m.values) var += (v - mean) * (v - mean);
    var /= m.values.size();
    const double sd = std::sqrt(var);
    expect(std::abs(mean) <= 0.02, "sample mean " + std::to_string(mean) + " off by > 0.02");
    expect(std::abs(sd - 1.0) <= 0.02, "sample std " + std::to_string(sd) + " off by > 0.02");
    char buf[64];
    std::snprintf(buf, sizeof(buf), "mean %.4f std %.4f over 1e5 draws", mean, sd);
    return std::string(buf);
  });

  check.run("tensor.softmax_invariants", [] {
    Rng rng(7);
    for (int trial = 0; trial < 200; ++trial) {
      Matrix m = random_matrix(rng, 3, 8, -50.0, 50.0);
      Matrix s = softmax_rows(m);
      for (int r = 0; r < s.rows; ++r) {
        double sum = 0.0;
        for (int c = 0; c < s.cols; ++c) {
          expect(s.at(r, c) >= 0.0, "negative softmax output");
          sum += s.at(r, c);
        }
        expect(std::abs(sum - 1.0) <= 1e-6, "row sum " + std::to_string(sum));
      }
    }
    Matrix two(1, 2, {0.0, 0.0});
    Matrix s2 = softmax_rows(two);
    expect(s2.at(0, 0) == 0.5 && s2.at(0, 1) == 0.5, "symmetric row not 0.5/0.5");
    Matrix masked(1, 3, {1.0, -1e9, 2.0});
    Matrix sm = softmax_rows(masked);
    expect(sm.at(0, 1) <= 1e-30, "masked entry above 1e-30");
    return std::string("200 random rows sum to 1; -1e9 saturates");
  });

  check.run("tensor.matmul_oracle", [] {
    Rng rng(11);
    Matrix a = random_matrix(rng, 3, 3, -2.0, 2.0);
    Matrix id3 = Matrix::identity(3);
    expect(matmul(id3, a) == a, "identity product changed the matrix");
    Matrix s1(1, 1, {2.0}), s2(1, 1, {3.0});
    expect(matmul(s1, s2).at(0, 0) == 6.0, "1x1 product wrong");
    Matrix x = random_matrix(rng, 4, 4, -1.0, 1.0);
    Matrix y = random_matrix(rng, 4, 4, -1.0, 1.0);
    expect(max_abs_diff(matmul(x, y), naive_matmul(x, y)) <= 1e-12, "naive oracle disagrees");
    Matrix p = random_matrix(rng, 5, 5, -1.0, 1.0);
    Matrix q = random_matrix(rng, 5, 5, -1.0, 1.0);
    Matrix r = random_matrix(rng, 5, 5, -1.0, 1.0);
    Matrix lhs = matmul(matmul(p, q), r);
    Matrix rhs = matmul(p, matmul(q, r));
    double scale = 0.0;
    for (double v : lhs.values) scale = std::max(scale, std::abs(v));
    expect(max_abs_diff(lhs, rhs) <= 1e-9 * std::max(scale, 1.0), "associativity above 1e-9 rel");
    bool threw = false;
    try {
      matmul(Matrix(2, 3), Matrix(2, 3));
    } catch (const std::invalid_argument&) {
      threw = true;
    }
    expect(threw, "dimension mismatch not reported");
    return std::string("identity, scalar, naive-oracle and associativity hold");
  });

  check.run("tensor.rms_norm", [] {
    std::vector<double> ones(8, 1.0), gain(8, 1.0);
    std::vector<double> out = rms_norm(ones, gain, 0.0);
    for (double v : out) expect(v == 1.0, "all-ones input changed");
    std::vector<double> zeros(8, 0.0);
    out = rms_norm(zeros, gain, 1e-5);
    for (double v : out) expect(v == 0.0, "all-zeros input changed");
    std::vector<double> v34 = {3.0, 4.0};
    out = rms_norm(v34, {1.0, 1.0}, 0.0);
    const double expected = 3.0 / std::sqrt(12.5);
    expect(std::abs(out[0] - expected) <= 1e-15 && std::abs(out[1] - 4.0 / std::sqrt(12.5)) <= 1e-15,
           "[3,4] scaling off");
    return std::string("unit, zero and scalar-recompute cases hold");
  });

  check.run("tensor.backend_bitwise", [] {
    Rng rng(21);
    const KernelBackend saved = kernel_backend();
    for (auto [m, k, n] : {std::tuple{7, 5, 9}, {1, 16, 1}, {33, 17, 13}}) {
      Matrix a = random_matrix(rng, m, k, -3.0, 3.0);
      Matrix b = random_matrix(rng, k, n, -3.0, 3.0);
      Matrix bt = random_matrix(rng, n, k, -3.0, 3.0);
      set_kernel_backend(KernelBackend::serial);
      Matrix p1 = matmul(a, b), nt1 = matmul_nt(a, bt), sm1 = softmax_rows(a);
      Matrix rn1 = rms_norm_rows(a, std::vector<double>(k, 1.0), kRmsEps);
      set_kernel_backend(KernelBackend::openmp);
      Matrix p2 = matmul(a, b), nt2 = matmul_nt(a, bt), sm2 = softmax_rows(a);
      Matrix rn2 = rms_norm_rows(a, std::vector<double>(k, 1.0), kRmsEps);
      expect(p1 == p2 && nt1 == nt2 && sm1 == sm2 && rn1 == rn2,
             "serial and openmp outputs differ");
    }
    set_kernel_backend(saved);
    return std::string("serial and openmp kernels bit-identical");
  });

  check.run("decoder.causality", [] {
    DecoderWeights w = init_weights(tiny_config(), 3);
    MultimodalInput in = fixture_input(w, 17);
    CapturePolicy cap;
    cap.full_matrices = true;
    ForwardResult r = forward_range(w, in.assembled, 0, w.config.n_layers, nullptr, cap);
    for (const auto& [layer, probs] : r.trace.full) {
      (void)layer;
      for (int i = 0; i < probs.rows; ++i)
        for (int j = i + 1; j < probs.cols; ++j)
          expect(probs.at(i, j) == 0.0, "attention to a future position is nonzero");
    }
    return std::string("future-position attention exactly 0 in every layer");
  });

  check.run("decoder.composition", [] {
    ModelConfig cfg = tiny_config(8, 4, 32, 48, 64);
    DecoderWeights w = init_weights(cfg, 4);
    MultimodalInput in = fixture_input(w, 18);
    Matrix full = forward_range(w, in.assembled, 0, cfg.n_layers).hidden;
    for (int k = 0; k <= cfg.n_layers; ++k) {
      Matrix lo = forward_range(w, in.assembled, 0, k).hidden;
      Matrix hi = forward_range(w, std::move(lo), k, cfg.n_layers).hidden;
      expect(max_abs_diff(hi, full) <= 1e-9,
             "split at " + std::to_string(k) + " deviates above 1e-9");
    }
    return std::string("every split point composes within 1e-9");
  });

  check.run("decoder.cache_incremental", [] {
    DecoderWeights w = init_weights(tiny_config(), 5);
    MultimodalInput in = fixture_input(w, 19);
    GenerateOptions opts;
    opts.max_tokens = 32;
    GenerationResult cached = decode_vanilla(w, in, opts);

    // no-cache oracle: recompute the whole prefix every step
    std::vector<int> tokens;
    Matrix seq = in.assembled;
    for (int t = 0; t < opts.max_tokens; ++t) {
      ForwardResult r = forward_range(w, seq, 0, w.config.n_layers);
      const int last = r.hidden.rows - 1;
      std::vector<double> logits = project_logits(
          w, std::vector<double>(r.hidden.row(last), r.hidden.row(last) + w.config.d_model));
      const int tok = argmax_lowest(logits);
      tokens.push_back(tok);
      Matrix row = embed_tokens(w, {tok});
      add_position_encoding(row, seq.rows);
      seq.append_rows(row);
    }
    expect(tokens == cached.tokens, "cached and recomputed token sequences differ");
    return std::string("32-step cached generation matches full recomputation");
  });

  check.run("decoder.determinism", [] {
    DecoderWeights w1 = init_weights(tiny_config(), 77);
    DecoderWeights w2 = init_weights(tiny_config(), 77);
    expect(w1.token_embedding == w2.token_embedding && w1.lm_head == w2.lm_head,
           "same seed gave different weights");
    MultimodalInput in = fixture_input(w1, 20);
    Matrix h1 = forward_range(w1, in.assembled, 0, w1.config.n_layers).hidden;
    Matrix h2 = forward_range(w2, in.assembled, 0, w2.config.n_layers).hidden;
    expect(h1 == h2, "same weights and input gave different hidden states");
    return std::string("weights and forward passes bit-identical across runs");
  });

  check.run("fusion.masking", [] {
    DecoderWeights w = init_weights(tiny_config(), 6);
    MultimodalInput in = fixture_input(w, 21);
    MultimodalInput mv = mask_modality(in, ModalityTarget::video, MaskMethod::zero_out);
    expect(mv.content.rows == in.content.rows, "masking changed T");
    for (int r = in.layout.audio_begin(); r < in.layout.text_end(); ++r)
      for (int c = 0; c < in.d_model; ++c)
        expect(mv.content.at(r, c) == in.content.at(r, c), "non-target row changed");
    for (int r = in.layout.video_begin(); r < in.layout.video_end(); ++r)
      for (int c = 0; c < in.d_model; ++c)
        expect(mv.content.at(r, c) == 0.0, "video row not zeroed");
    MultimodalInput mvv = mask_modality(mv, ModalityTarget::video, MaskMethod::zero_out);
    expect(mvv.content == mv.content, "zero_out not idempotent");

    MultimodalInput g1 = mask_modality(in, ModalityTarget::video, MaskMethod::gaussian, 99);
    MultimodalInput g2 = mask_modality(in, ModalityTarget::video, MaskMethod::gaussian, 99);
    expect(g1.content == g2.content, "gaussian masking not seed-reproducible");

    Fixture cf = make_fixture(FusionMode::channel_wise, w.config.d_model, 0, 0, 3, 5,
                              w.config.vocab_size, 23);
    MultimodalInput cin = assemble_fixture(cf, w);
    MultimodalInput both = mask_modality(
        mask_modality(cin, ModalityTarget::video, MaskMethod::zero_out), ModalityTarget::audio,
        MaskMethod::zero_out);
    for (int r = 0; r < cin.layout.av_end(); ++r)
      for (int c = 0; c < cin.d_model; ++c)
        expect(both.content.at(r, c) == 0.0, "channel AV block not fully zeroed");
    return std::string("zero_out exact and idempotent; gaussian reproducible");
  });

  check.run("engine.merge_oracle", [] {
    Rng rng(31);
    ModalityLayout lay;
    lay.fusion_mode = FusionMode::token_wise;
    lay.M = 3;
    lay.N = 4;
    lay.L = 2;
    const int d = 6, T = lay.total_len();
    ForkStates s{random_matrix(rng, T, d, -2.0, 2.0), random_matrix(rng, T, d, -2.0, 2.0)};
    for (double alpha : {0.0, 0.25, 0.5, 0.8, 1.0}) {
      Matrix got = merge_token_wise(s, lay, alpha);
      for (int r = 0; r < T; ++r)
        for (int c = 0; c < d; ++c) {
          double want;
          if (r < lay.video_end())
            want = (1.0 - alpha) * s.h_v_fork.at(r, c) + alpha * s.h_a_fork.at(r, c);
          else if (r < lay.audio_end())
            want = alpha * s.h_v_fork.at(r, c) + (1.0 - alpha) * s.h_a_fork.at(r, c);
          else
            want = 0.5 * (s.h_v_fork.at(r, c) + s.h_a_fork.at(r, c));
          expect(std::abs(got.at(r, c) - want) <= 1e-12, "token merge deviates from loop oracle");
        }
    }
    Matrix excl = merge_token_wise(s, lay, 1.0);
    for (int r = 0; r < lay.video_end(); ++r)
      for (int c = 0; c < d; ++c)
        expect(excl.at(r, c) == s.h_a_fork.at(r, c), "alpha=1 video row not spliced");
    for (int r = lay.audio_begin(); r < lay.audio_end(); ++r)
      for (int c = 0; c < d; ++c)
        expect(excl.at(r, c) == s.h_v_fork.at(r, c), "alpha=1 audio row not spliced");
    ForkStates same{s.h_v_fork, s.h_v_fork};
    for (double alpha : {0.0, 0.25, 0.5, 0.8, 1.0})
      expect(merge_token_wise(same, lay, alpha) == s.h_v_fork,
             "identical branches not a fixpoint");

    ModalityLayout clay;
    clay.fusion_mode = FusionMode::channel_wise;
    clay.U = 4;
    clay.L = 3;
    const int cT = clay.total_len();
    ForkStates cs{random_matrix(rng, cT, d, -2.0, 2.0), random_matrix(rng, cT, d, -2.0, 2.0)};
    Matrix cm = merge_channel_wise(cs, clay);
    for (int r = 0; r < cT; ++r)
      for (int c = 0; c < d; ++c) {
        const double want = r < clay.av_end()
                                ? cs.h_v_fork.at(r, c) + cs.h_a_fork.at(r, c)
                                : 0.5 * (cs.h_v_fork.at(r, c) + cs.h_a_fork.at(r, c));
        expect(std::abs(cm.at(r, c) - want) <= 1e-12, "channel merge deviates from loop oracle");
      }
    return std::string("token and channel merges match loop oracles to 1e-12");
  });

  check.run("engine.alpha", [] {
    ModelConfig cfg;
    cfg.n_layers = 1;
    cfg.n_heads = 1;
    cfg.d_model = 8;
    cfg.d_ff = 8;
    cfg.vocab_size = 16;
    cfg.max_seq_len = 64;
    ForkConfig fc;
    fc.l_fork = 1;

    ProbeSpec uniform;  // all scores zero
    DecoderWeights wu = build_probe_model(cfg, uniform);
    MultimodalInput inu = build_probe_input(4, 4, 3, cfg.d_model);
    FusionWeights fwu = estimate_alpha(wu, inu, fc);
    expect(fwu.alpha_a == 0.5 && fwu.alpha_v == 0.5 && fwu.alpha == 0.5,
           "uniform attention with M == N did not give exactly 0.5");

    ProbeSpec skew;
    skew.video_score = 1.7;
    skew.audio_score = 0.9;
    DecoderWeights ws = build_probe_model(cfg, skew);
    MultimodalInput ins = build_probe_input(3, 5, 2, cfg.d_model);
    FusionWeights fws = estimate_alpha(ws, ins, fc);
    // closed form: alpha_a = N e^a / (N e^a + M); alpha_v = M e^v / (M e^v + N)
    const double ea = std::exp(skew.audio_score), ev = std::exp(skew.video_score);
    const double want_a = 5 * ea / (5 * ea + 3), want_v = 3 * ev / (3 * ev + 5);
    expect(std::abs(fws.alpha_a - want_a) <= 1e-9, "alpha_a deviates from closed form");
    expect(std::abs(fws.alpha_v - want_v) <= 1e-9, "alpha_v deviates from closed form");
    expect(std::abs(fws.alpha - 0.5 * (want_a + want_v)) <= 1e-9, "alpha deviates");

    ProbeSpec extreme;
    extreme.video_score = 80.0;
    extreme.audio_score = 80.0;
    DecoderWeights we = build_probe_model(cfg, extreme);
    FusionWeights fwe = estimate_alpha(we, build_probe_input(4, 4, 2, cfg.d_model), fc);
    expect(fwe.alpha == 1.0, "all-mass-on-unmasked case did not give alpha == 1");

    Rng rng(41);
    for (int i = 0; i < 200; ++i) {
      ModelConfig rc = tiny_config(2, 2, 16, 24, 32);
      DecoderWeights rw = init_weights(rc, rng.next_u64());
      MultimodalInput rin = fixture_input(rw, rng.next_u64(), 2 + rng.uniform_int(4),
                                          2 + rng.uniform_int(4), 2 + rng.uniform_int(3));
      FusionWeights fw = estimate_alpha(rw, rin, fc);
      expect(fw.alpha_a >= 0.0 && fw.alpha_a <= 1.0 && fw.alpha_v >= 0.0 && fw.alpha_v <= 1.0 &&
                 fw.alpha >= 0.0 && fw.alpha <= 1.0,
             "fuzzed alpha escaped [0,1]");
    }
    return std::string("uniform=0.5 exact, closed form to 1e-9, 200 fuzzed in bounds");
  });

  check.run("engine.fmd_reduction", [] {
    for (uint64_t seed : {101ull, 102ull, 103ull}) {
      DecoderWeights w = init_weights(tiny_config(), seed);
      MultimodalInput in = fixture_input(w, seed + 1000);
      GenerateOptions opts;
      opts.max_tokens = 8;
      ForkConfig fc;
      fc.l_fork = 2;
      fc.masking = MaskMethod::identity;
      GenerationResult vanilla = decode_vanilla(w, in, opts);
      GenerationResult fmd = decode_fmd(w, in, fc, opts);
      expect(vanilla.tokens == fmd.tokens, "identity masking changed the token sequence");
      for (size_t t = 0; t < vanilla.step_scores.size(); ++t)
        for (size_t i = 0; i < vanilla.step_scores[t].size(); ++i)
          expect(std::abs(vanilla.step_scores[t][i] - fmd.step_scores[t][i]) <= 1e-6,
                 "identity masking moved logits above 1e-6");
    }
    return std::string("identity masking reproduces vanilla decoding");
  });

  check.run("engine.cost_counters", [] {
    DecoderWeights w = init_weights(tiny_config(8, 4, 32, 48, 64), 51);
    MultimodalInput in = fixture_input(w, 52);
    GenerateOptions opts;
    opts.max_tokens = 6;
    ForkConfig fc;
    fc.l_fork = 2;
    GenerationResult v = decode_vanilla(w, in, opts);
    GenerationResult f = decode_fmd(w, in, fc, opts);
    GenerationResult c = decode_vcd_lite(w, in, 1.0, 3, opts);
    const long long n = w.config.n_layers, tok = opts.max_tokens;
    expect(v.generation_cost.layer_applications == tok * n, "vanilla per-token count wrong");
    expect(f.generation_cost.layer_applications == tok * (n + fc.l_fork),
           "fork-merge per-token count wrong");
    expect(c.generation_cost.layer_applications == 2 * tok * n, "vcd per-token count wrong");
    return std::string("per-token layer applications exact for vanilla, fmd, vcd");
  });

  check.run("analysis.mass_probability", [] {
    DecoderWeights w = init_weights(tiny_config(), 61);
    MultimodalInput in = fixture_input(w, 62);
    CapturePolicy cap;
    cap.last_row_mean_heads = true;
    ForwardResult r = forward_range(w, in.assembled, 0, w.config.n_layers, nullptr, cap);
    std::vector<AttentionMassReport> reports = modality_attention_mass_all(r.trace, in.layout);
    expect(reports.size() == static_cast<size_t>(w.config.n_layers), "missing layers");
    for (const auto& m : reports) {
      expect(m.video_mass >= 0.0 && m.video_mass <= 1.0 && m.audio_mass >= 0.0 &&
                 m.audio_mass <= 1.0 && m.text_mass >= 0.0 && m.text_mass <= 1.0,
             "mass outside [0,1]");
      expect(std::abs(m.video_mass + m.audio_mass + m.text_mass - 1.0) <= 1e-6,
             "masses do not sum to 1");
    }
    return std::string("per-layer masses form probability vectors");
  });

  check.run("analysis.skew_gap", [] {
    ModelConfig cfg;
    cfg.n_layers = 2;
    cfg.n_heads = 1;
    cfg.d_model = 8;
    cfg.d_ff = 8;
    cfg.vocab_size = 16;
    cfg.max_seq_len = 64;
    ProbeSpec spec;
    spec.video_score = 2.0;
    spec.tag_amplitude = 1e-3;
    DecoderWeights w = build_probe_model(cfg, spec);
    MultimodalInput in = build_probe_input(4, 4, 4, cfg.d_model, spec.tag_amplitude);

    GenerateOptions opts;
    opts.max_tokens = 0;
    opts.capture.last_row_mean_heads = true;
    GenerationResult v = decode_vanilla(w, in, opts);
    ForkConfig fc;
    fc.l_fork = 1;
    GenerationResult f = decode_fmd(w, in, fc, opts);
    AttentionMassReport mv = modality_attention_mass(v.trace_merged, in.layout, 1);
    AttentionMassReport mf = modality_attention_mass(f.trace_merged, in.layout, 1);
    const double gap_v = std::abs(mv.video_mass - mv.audio_mass);
    const double gap_f = std::abs(mf.video_mass - mf.audio_mass);
    expect(gap_f < gap_v, "merged pass did not shrink the modality gap");
    return std::string("fork-merge shrinks the video/audio attention gap (" +
                       std::to_string(gap_v) + " -> " + std::to_string(gap_f) + ")");
  });

  check.run("analysis.cosine", [] {
    DecoderWeights w = init_weights(tiny_config(), 71);
    MultimodalInput in = fixture_input(w, 72);
    const double same =
        hidden_cosine_probe(w, in, ModalityTarget::video, MaskMethod::identity);
    expect(std::abs(same - 1.0) <= 1e-12, "identity perturbation cosine is not 1");
    const double z = hidden_cosine_probe(w, in, ModalityTarget::video, MaskMethod::zero_out);
    const double g = hidden_cosine_probe(w, in, ModalityTarget::video, MaskMethod::gaussian, 5);
    expect(z >= -1.0 - 1e-12 && z <= 1.0 + 1e-12 && g >= -1.0 - 1e-12 && g <= 1.0 + 1e-12,
           "cosine escaped [-1,1]");
    return std::string("identity cosine 1.0; perturbed cosines bounded");
  });

  check.run("analysis.determinism", [] {
    PlantedScenario sc = make_planted_scenario(6, 81);
    ForkConfig fc;
    fc.l_fork = 1;
    std::vector<int> candidates = {0, 1, 2};
    std::string csv1 = sweep_to_csv(layer_sweep(sc.model, sc.inputs, candidates, fc, sc.targets));
    std::string csv2 = sweep_to_csv(layer_sweep(sc.model, sc.inputs, candidates, fc, sc.targets));
    expect(csv1 == csv2, "sweep reruns differ byte-wise");
    return std::string("sweep output byte-identical across reruns");
  });

  return results;
}

bool all_passed(const std::vector<SelftestResult>& results) {
  for (const auto& r : results)
    if (!r.pass) return false;
  return true;
}

}  // namespace fmd
