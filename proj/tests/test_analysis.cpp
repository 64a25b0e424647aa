#include "doctest.h"

#include <cmath>

#include "fmd/analysis.hpp"
#include "fmd/probe.hpp"
#include "fmd/rng.hpp"

using namespace fmd;

namespace {

ModalityLayout token_layout(int m, int n, int l) {
  ModalityLayout lay;
  lay.fusion_mode = FusionMode::token_wise;
  lay.M = m;
  lay.N = n;
  lay.L = l;
  return lay;
}

ModelConfig probe_config(int layers = 2) {
  ModelConfig cfg;
  cfg.n_layers = layers;
  cfg.n_heads = 1;
  cfg.d_model = 8;
  cfg.d_ff = 8;
  cfg.vocab_size = 16;
  cfg.max_seq_len = 64;
  return cfg;
}

ModelConfig toy_config() {
  ModelConfig cfg;
  cfg.n_layers = 4;
  cfg.n_heads = 2;
  cfg.d_model = 32;
  cfg.d_ff = 48;
  cfg.vocab_size = 64;
  cfg.max_seq_len = 256;
  return cfg;
}

MultimodalInput toy_input(const DecoderWeights& w, uint64_t seed) {
  return assemble_fixture(
      make_fixture(FusionMode::token_wise, w.config.d_model, 4, 3, 3, 0, w.config.vocab_size,
                   seed),
      w);
}

}  // namespace

TEST_CASE("attention mass of a uniform row is the range share") {
  AttentionTrace trace;
  const int M = 3, N = 5, L = 4, T = M + N + L;
  trace.last_row[0] = std::vector<double>(T, 1.0 / T);
  AttentionMassReport r = modality_attention_mass(trace, token_layout(M, N, L), 0);
  CHECK(r.video_mass == doctest::Approx(double(M) / T).epsilon(1e-12));
  CHECK(r.audio_mass == doctest::Approx(double(N) / T).epsilon(1e-12));
  CHECK(r.text_mass == doctest::Approx(double(L) / T).epsilon(1e-12));
}

TEST_CASE("attention mass of a one-hot video row is (1, 0, 0)") {
  AttentionTrace trace;
  std::vector<double> row(10, 0.0);
  row[1] = 1.0;  // a video index
  trace.last_row[2] = row;
  AttentionMassReport r = modality_attention_mass(trace, token_layout(3, 4, 3), 2);
  CHECK(r.video_mass == 1.0);
  CHECK(r.audio_mass == 0.0);
  CHECK(r.text_mass == 0.0);
}

TEST_CASE("attention mass validates its inputs") {
  AttentionTrace trace;
  trace.last_row[0] = std::vector<double>(5, 0.2);
  CHECK_THROWS_AS(modality_attention_mass(trace, token_layout(2, 2, 1), 3),
                  std::invalid_argument);
  ModalityLayout chan;
  chan.fusion_mode = FusionMode::channel_wise;
  chan.U = 3;
  chan.L = 2;
  CHECK_THROWS_AS(modality_attention_mass(trace, chan, 0), std::invalid_argument);
  trace.last_row[1] = std::vector<double>(3, 0.3);  // shorter than T
  CHECK_THROWS_AS(modality_attention_mass(trace, token_layout(2, 2, 1), 1),
                  std::invalid_argument);
}

TEST_CASE("probe masses match the closed-form softmax") {
  ProbeSpec spec;
  spec.video_score = 1.5;
  DecoderWeights w = build_probe_model(probe_config(1), spec);
  const int M = 4, N = 3, L = 3;
  MultimodalInput in = build_probe_input(M, N, L, 8);
  CapturePolicy cap;
  cap.last_row_mean_heads = true;
  ForwardResult fr = forward_range(w, in.assembled, 0, 1, nullptr, cap);
  AttentionMassReport r = modality_attention_mass(fr.trace, in.layout, 0);
  const double ec = std::exp(spec.video_score);
  const double z = M * ec + N + L;
  CHECK(r.video_mass == doctest::Approx(M * ec / z).epsilon(1e-9));
  CHECK(r.audio_mass == doctest::Approx(N / z).epsilon(1e-9));
  CHECK(r.text_mass == doctest::Approx(L / z).epsilon(1e-9));
  CHECK(r.video_mass + r.audio_mass + r.text_mass == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("layer sweep at a full-depth fork equals the branch-only analysis") {
  PlantedScenario sc = make_planted_scenario(4, 7);
  const int n = sc.model.config.n_layers;
  ForkConfig fc;
  std::vector<SweepRow> rows = layer_sweep(sc.model, sc.inputs, {n}, fc, sc.targets);
  REQUIRE(rows.size() == 1);

  // direct branch analysis: average the two branch traces over all inputs
  GenerateOptions opts;
  opts.max_tokens = 1;
  opts.capture.last_row_mean_heads = true;
  ForkConfig full = fc;
  full.l_fork = n;
  double video = 0.0, audio = 0.0;
  for (const auto& in : sc.inputs) {
    GenerationResult r = decode_fmd(sc.model, in, full, opts);
    AttentionMassReport mv = modality_attention_mass(r.trace_branch_v, in.layout, n - 1);
    AttentionMassReport ma = modality_attention_mass(r.trace_branch_a, in.layout, n - 1);
    video += 0.5 * (mv.video_mass + ma.video_mass);
    audio += 0.5 * (mv.audio_mass + ma.audio_mass);
  }
  CHECK(rows[0].video_mass == doctest::Approx(video / 4).epsilon(1e-12));
  CHECK(rows[0].audio_mass == doctest::Approx(audio / 4).epsilon(1e-12));
  CHECK(rows[0].samples == 4);
}

TEST_CASE("identity masking makes the sweep flat across 0 and n_layers") {
  DecoderWeights w = init_weights(toy_config(), 61);
  std::vector<MultimodalInput> inputs = {toy_input(w, 62), toy_input(w, 63)};
  ForkConfig fc;
  fc.masking = MaskMethod::identity;
  std::vector<SweepRow> rows = layer_sweep(w, inputs, {0, w.config.n_layers}, fc);
  REQUIRE(rows.size() == 2);
  CHECK(rows[0].video_mass == doctest::Approx(rows[1].video_mass).epsilon(1e-9));
  CHECK(rows[0].audio_mass == doctest::Approx(rows[1].audio_mass).epsilon(1e-9));
  CHECK(rows[0].text_mass == doctest::Approx(rows[1].text_mass).epsilon(1e-9));
}

TEST_CASE("sweep CSV has the pinned schema and is reproducible") {
  PlantedScenario sc = make_planted_scenario(3, 8);
  ForkConfig fc;
  std::vector<int> candidates = {0, 1, 2};
  std::string csv1 = sweep_to_csv(layer_sweep(sc.model, sc.inputs, candidates, fc, sc.targets));
  std::string csv2 = sweep_to_csv(layer_sweep(sc.model, sc.inputs, candidates, fc, sc.targets));
  CHECK(csv1 == csv2);
  CHECK(csv1.rfind("l_fork,video_mass,audio_mass,text_mass,metric,samples\n", 0) == 0);
  CHECK(std::count(csv1.begin(), csv1.end(), '\n') == 4);  // header + one row per candidate
}

TEST_CASE("sweep without targets reports a NaN metric") {
  DecoderWeights w = init_weights(toy_config(), 64);
  std::vector<MultimodalInput> inputs = {toy_input(w, 65)};
  std::vector<SweepRow> rows = layer_sweep(w, inputs, {1}, ForkConfig{});
  CHECK(std::isnan(rows[0].metric));
  const std::string csv = sweep_to_csv(rows);
  CHECK(csv.find("nan") != std::string::npos);
}

TEST_CASE("sweep validates candidates and inputs") {
  DecoderWeights w = init_weights(toy_config(), 66);
  std::vector<MultimodalInput> inputs = {toy_input(w, 67)};
  CHECK_THROWS_AS(layer_sweep(w, {}, {0}, ForkConfig{}), std::invalid_argument);
  CHECK_THROWS_AS(layer_sweep(w, inputs, {99}, ForkConfig{}), std::invalid_argument);
  CHECK_THROWS_AS(layer_sweep(w, inputs, {0}, ForkConfig{}, {1, 2}), std::invalid_argument);
}

TEST_CASE("per-head masses average to the head-averaged masses") {
  DecoderWeights w = init_weights(toy_config(), 59);
  MultimodalInput in = toy_input(w, 60);
  CapturePolicy cap;
  cap.last_row_mean_heads = true;
  cap.per_head_rows = true;
  ForwardResult fr = forward_range(w, in.assembled, 0, w.config.n_layers, nullptr, cap);
  const int layer = w.config.n_layers - 1;
  AttentionMassReport mean = modality_attention_mass(fr.trace, in.layout, layer);
  std::vector<AttentionMassReport> heads =
      modality_attention_mass_per_head(fr.trace, in.layout, layer);
  REQUIRE(heads.size() == static_cast<size_t>(w.config.n_heads));
  double video = 0.0, audio = 0.0, text = 0.0;
  for (const auto& h : heads) {
    CHECK(h.video_mass + h.audio_mass + h.text_mass == doctest::Approx(1.0).epsilon(1e-6));
    video += h.video_mass;
    audio += h.audio_mass;
    text += h.text_mass;
  }
  // summing over ranges is linear, so both head aggregations agree
  CHECK(mean.video_mass == doctest::Approx(video / heads.size()).epsilon(1e-12));
  CHECK(mean.audio_mass == doctest::Approx(audio / heads.size()).epsilon(1e-12));
  CHECK(mean.text_mass == doctest::Approx(text / heads.size()).epsilon(1e-12));

  AttentionTrace empty;
  CHECK_THROWS_AS(modality_attention_mass_per_head(empty, in.layout, 0), std::invalid_argument);
}

TEST_CASE("cosine kernel: orthogonal, parallel and degenerate inputs") {
  CHECK(cosine_similarity({1.0, 0.0}, {0.0, 1.0}) == 0.0);
  CHECK(cosine_similarity({2.0, 0.0}, {5.0, 0.0}) == 1.0);
  CHECK(cosine_similarity({1.0, 1.0}, {-1.0, -1.0}) == doctest::Approx(-1.0).epsilon(1e-15));
  CHECK_THROWS_AS(cosine_similarity({0.0, 0.0}, {1.0, 0.0}), std::runtime_error);
  CHECK_THROWS_AS(cosine_similarity({1.0}, {1.0, 2.0}), std::invalid_argument);
}

TEST_CASE("hidden cosine probe: identity perturbation gives 1.0") {
  DecoderWeights w = init_weights(toy_config(), 68);
  MultimodalInput in = toy_input(w, 69);
  CHECK(hidden_cosine_probe(w, in, ModalityTarget::video, MaskMethod::identity) ==
        doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("hidden cosine probe matches the scalar oracle") {
  DecoderWeights w = init_weights(toy_config(), 70);
  MultimodalInput in = toy_input(w, 71);
  for (auto method : {MaskMethod::zero_out, MaskMethod::gaussian}) {
    const double got = hidden_cosine_probe(w, in, ModalityTarget::audio, method, 5);

    MultimodalInput pert = mask_modality(in, ModalityTarget::audio, method, 5);
    Matrix h1 = forward_range(w, in.assembled, 0, w.config.n_layers).hidden;
    Matrix h2 = forward_range(w, pert.assembled, 0, w.config.n_layers).hidden;
    const int last = h1.rows - 1;
    double dot = 0.0, n1 = 0.0, n2 = 0.0;
    for (int c = 0; c < w.config.d_model; ++c) {
      dot += h1.at(last, c) * h2.at(last, c);
      n1 += h1.at(last, c) * h1.at(last, c);
      n2 += h2.at(last, c) * h2.at(last, c);
    }
    const double want = dot / (std::sqrt(n1) * std::sqrt(n2));
    CHECK(got == doctest::Approx(want).epsilon(1e-9));
    CHECK(got >= -1.0 - 1e-12);
    CHECK(got <= 1.0 + 1e-12);
  }
}

TEST_CASE("bench records carry exact analytic counters") {
  DecoderWeights w = init_weights(toy_config(), 72);
  std::vector<MultimodalInput> inputs = {toy_input(w, 73), toy_input(w, 74)};
  BenchOptions opts;
  opts.max_tokens = 4;
  opts.warmup_runs = 0;
  opts.strategy.fork.l_fork = 1;
  std::vector<BenchRecord> recs = bench_decoding(w, inputs, {"vanilla", "fmd", "vcd"}, opts);
  REQUIRE(recs.size() == 3);
  const long long n = w.config.n_layers;
  const long long tokens = 2 * 4;  // two inputs, four tokens each
  CHECK(recs[0].tokens == tokens);
  CHECK(recs[0].layer_applications == tokens * n);
  CHECK(recs[1].layer_applications == tokens * (n + 1));
  CHECK(recs[2].layer_applications == 2 * tokens * n);
  // analytic ordering independent of wall time
  CHECK(recs[0].layer_applications < recs[1].layer_applications);
  CHECK(recs[1].layer_applications < recs[2].layer_applications);
  for (const auto& r : recs) {
    CHECK(r.tokens_per_second == doctest::Approx(r.tokens / r.wall_seconds).epsilon(1e-9));
    CHECK(r.layer_applications_per_token == r.layer_applications / r.tokens);
  }
}

TEST_CASE("planted scenario separates vanilla from fork-merge decoding") {
  PlantedScenario sc = make_planted_scenario(6, 81);
  GenerateOptions opts;
  opts.max_tokens = 1;
  ForkConfig fc;
  fc.l_fork = 1;
  int vanilla_hits = 0, fmd_hits = 0;
  for (size_t i = 0; i < sc.inputs.size(); ++i) {
    if (decode_vanilla(sc.model, sc.inputs[i], opts).tokens[0] == sc.targets[i]) ++vanilla_hits;
    if (decode_fmd(sc.model, sc.inputs[i], fc, opts).tokens[0] == sc.targets[i]) ++fmd_hits;
  }
  CHECK(vanilla_hits == 0);
  CHECK(fmd_hits == 6);
}

TEST_CASE("video-skew probe: merged pass shrinks the modality gap") {
  ProbeSpec spec;
  spec.video_score = 2.0;
  spec.tag_amplitude = 1e-3;
  DecoderWeights w = build_probe_model(probe_config(2), spec);
  MultimodalInput in = build_probe_input(4, 4, 4, 8, spec.tag_amplitude);
  GenerateOptions opts;
  opts.max_tokens = 0;
  opts.capture.last_row_mean_heads = true;

  GenerationResult v = decode_vanilla(w, in, opts);
  ForkConfig fc;
  fc.l_fork = 1;
  GenerationResult f = decode_fmd(w, in, fc, opts);
  AttentionMassReport mv = modality_attention_mass(v.trace_merged, in.layout, 1);
  AttentionMassReport mf = modality_attention_mass(f.trace_merged, in.layout, 1);
  CHECK(std::abs(mf.video_mass - mf.audio_mass) < std::abs(mv.video_mass - mv.audio_mass));
}
