// Command-line front-end: fixture generation, decoding runs, fusion-weight
// calibration, attention analyses, benchmarks and the invariant selftest.
//
// Exit codes: 0 success, 1 validation error, 2 runtime error.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "fmd/analysis.hpp"
#include "fmd/engine.hpp"
#include "fmd/probe.hpp"
#include "fmd/selftest.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// config-file support: strict keys, precedence CLI flag > file > default

struct ConfigBinder {
  struct Entry {
    CLI::Option* opt = nullptr;
    std::function<void(const json&)> set;
  };
  std::map<std::string, Entry> entries;

  void bind(const std::string& key, CLI::Option* opt, std::function<void(const json&)> set) {
    entries[key] = Entry{opt, std::move(set)};
  }

  void apply_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("config: cannot read " + path);
    json j;
    try {
      is >> j;
    } catch (const json::exception& e) {
      throw std::invalid_argument("config: " + path + " is not valid JSON: " + e.what());
    }
    if (!j.is_object()) throw std::invalid_argument("config: top level must be an object");
    for (const auto& [key, value] : j.items()) {
      auto it = entries.find(key);
      if (it == entries.end())
        throw std::invalid_argument("config: unknown key '" + key + "' in " + path);
      if (it->second.opt != nullptr && it->second.opt->count() > 0) continue;  // CLI wins
      try {
        it->second.set(value);
      } catch (const json::exception& e) {
        throw std::invalid_argument("config: bad value for key '" + key + "': " + e.what());
      }
    }
  }
};

std::string default_out_dir() {
  const char* env = std::getenv("FMD_OUT_DIR");
  return env != nullptr && *env != '\0' ? std::string(env) : std::string(".");
}

std::string resolve_out(const std::string& out, const std::string& fallback_name) {
  if (!out.empty()) return out;
  return (fs::path(default_out_dir()) / fallback_name).string();
}

void write_text(const std::string& path, const std::string& text) {
  fs::path p(path);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path);
  os << text;
  if (!os) throw std::runtime_error("write failed for " + path);
}

// ---------------------------------------------------------------------------
// shared option groups

struct ModelOpts {
  std::string checkpoint;
  uint64_t seed = 1;
  int layers = 8;
  int heads = 4;
  int d_model = 64;
  int d_ff = 128;
  int vocab = 256;
  int max_seq_len = 512;
  std::string dump_path;

  void add(CLI::App* cmd, ConfigBinder& cfgb) {
    auto* o1 = cmd->add_option("--model", checkpoint, "weight checkpoint to load");
    auto* o2 = cmd->add_option("--model-seed", seed, "seed for a random toy model");
    auto* o3 = cmd->add_option("--layers", layers, "decoder depth");
    auto* o4 = cmd->add_option("--heads", heads, "attention heads");
    auto* o5 = cmd->add_option("--d-model", d_model, "embedding width");
    auto* o6 = cmd->add_option("--d-ff", d_ff, "feed-forward width");
    auto* o7 = cmd->add_option("--vocab", vocab, "vocabulary size");
    auto* o8 = cmd->add_option("--max-seq-len", max_seq_len, "sequence budget");
    auto* o9 = cmd->add_option("--dump-model", dump_path, "save the model checkpoint here");
    cfgb.bind("model", o1, [this](const json& j) { checkpoint = j.get<std::string>(); });
    cfgb.bind("model-seed", o2, [this](const json& j) { seed = j.get<uint64_t>(); });
    cfgb.bind("layers", o3, [this](const json& j) { layers = j.get<int>(); });
    cfgb.bind("heads", o4, [this](const json& j) { heads = j.get<int>(); });
    cfgb.bind("d-model", o5, [this](const json& j) { d_model = j.get<int>(); });
    cfgb.bind("d-ff", o6, [this](const json& j) { d_ff = j.get<int>(); });
    cfgb.bind("vocab", o7, [this](const json& j) { vocab = j.get<int>(); });
    cfgb.bind("max-seq-len", o8, [this](const json& j) { max_seq_len = j.get<int>(); });
    cfgb.bind("dump-model", o9, [this](const json& j) { dump_path = j.get<std::string>(); });
  }

  fmd::DecoderWeights build() const {
    fmd::DecoderWeights w;
    if (!checkpoint.empty()) {
      w = fmd::load_checkpoint(checkpoint);
    } else {
      fmd::ModelConfig cfg;
      cfg.n_layers = layers;
      cfg.n_heads = heads;
      cfg.d_model = d_model;
      cfg.d_ff = d_ff;
      cfg.vocab_size = vocab;
      cfg.max_seq_len = max_seq_len;
      w = fmd::init_weights(cfg, seed);
    }
    if (!dump_path.empty()) fmd::save_checkpoint(w, dump_path);
    return w;
  }

  void describe(std::map<std::string, std::string>& out) const {
    if (!checkpoint.empty()) {
      out["model"] = checkpoint;
    } else {
      out["model-seed"] = std::to_string(seed);
      out["layers"] = std::to_string(layers);
      out["heads"] = std::to_string(heads);
      out["d-model"] = std::to_string(d_model);
      out["d-ff"] = std::to_string(d_ff);
      out["vocab"] = std::to_string(vocab);
      out["max-seq-len"] = std::to_string(max_seq_len);
    }
  }
};

struct ForkOpts {
  int l_fork = 2;
  double alpha = 0.8;
  std::string alpha_mode = "fixed";
  std::string masking = "zero_out";
  uint64_t noise_seed = 0;

  void add(CLI::App* cmd, ConfigBinder& cfgb) {
    auto* o1 = cmd->add_option("--l-fork", l_fork, "merge layer (branches run layers below it)");
    auto* o2 = cmd->add_option("--alpha", alpha, "fusion weight in [0,1]");
    auto* o3 = cmd->add_option("--alpha-mode", alpha_mode, "fixed | online")
                   ->check(CLI::IsMember({"fixed", "online"}));
    auto* o4 = cmd->add_option("--masking", masking, "zero_out | gaussian | identity")
                   ->check(CLI::IsMember({"zero_out", "gaussian", "identity"}));
    auto* o5 = cmd->add_option("--noise-seed", noise_seed, "seed for gaussian masking");
    cfgb.bind("l-fork", o1, [this](const json& j) { l_fork = j.get<int>(); });
    cfgb.bind("alpha", o2, [this](const json& j) { alpha = j.get<double>(); });
    cfgb.bind("alpha-mode", o3, [this](const json& j) { alpha_mode = j.get<std::string>(); });
    cfgb.bind("masking", o4, [this](const json& j) { masking = j.get<std::string>(); });
    cfgb.bind("noise-seed", o5, [this](const json& j) { noise_seed = j.get<uint64_t>(); });
  }

  fmd::ForkConfig build() const {
    fmd::ForkConfig fc;
    fc.l_fork = l_fork;
    fc.alpha = alpha;
    fc.alpha_mode = alpha_mode == "online" ? fmd::ForkConfig::AlphaMode::online
                                           : fmd::ForkConfig::AlphaMode::fixed;
    fc.masking = fmd::mask_method_from_string(masking);
    fc.noise_seed = noise_seed;
    return fc;
  }

  void describe(std::map<std::string, std::string>& out) const {
    out["l-fork"] = std::to_string(l_fork);
    out["alpha"] = std::to_string(alpha);
    out["alpha-mode"] = alpha_mode;
    out["masking"] = masking;
    out["noise-seed"] = std::to_string(noise_seed);
  }
};

json masses_to_json(const std::vector<fmd::AttentionMassReport>& reports) {
  json arr = json::array();
  for (const auto& m : reports) {
    json row;
    row["layer"] = m.layer;
    row["video_mass"] = m.video_mass;
    row["audio_mass"] = m.audio_mass;
    row["text_mass"] = m.text_mass;
    arr.push_back(std::move(row));
  }
  return arr;
}

json result_to_json(const fmd::GenerationResult& res) {
  json j;
  j["strategy"] = res.strategy;
  j["tokens"] = res.tokens;
  json steps = json::array();
  for (size_t t = 0; t < res.tokens.size(); ++t) {
    json s;
    s["token"] = res.tokens[t];
    s["score"] = res.step_scores[t][res.tokens[t]];
    s["prob"] = res.chosen_prob[t];
    steps.push_back(std::move(s));
  }
  j["steps"] = std::move(steps);
  if (res.strategy == "fmd") {
    j["fusion_weights"] = {{"alpha", res.fusion.alpha},
                           {"alpha_a", res.fusion.alpha_a},
                           {"alpha_v", res.fusion.alpha_v}};
  }
  j["counters"] = {{"prefill_layer_applications", res.prefill_cost.layer_applications},
                   {"prefill_flops", res.prefill_cost.flops},
                   {"generation_layer_applications", res.generation_cost.layer_applications},
                   {"generation_flops", res.generation_cost.flops},
                   {"tokens", res.tokens.size()}};
  if (!res.notes.empty()) j["notes"] = res.notes;
  j["wall_seconds"] = res.wall_seconds;
  return j;
}

json config_to_json(const std::map<std::string, std::string>& cfg) {
  json j = json::object();
  for (const auto& [k, v] : cfg) j[k] = v;
  return j;
}

std::vector<std::string> list_fixture_files(const std::vector<std::string>& fixtures,
                                            const std::string& dir) {
  std::vector<std::string> files = fixtures;
  if (!dir.empty()) {
    if (!fs::is_directory(dir))
      throw std::invalid_argument("fixtures: '" + dir + "' is not a directory");
    for (const auto& entry : fs::directory_iterator(dir))
      if (entry.is_regular_file() && entry.path().extension() == ".json")
        files.push_back(entry.path().string());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::invalid_argument("fixtures: no fixture files given");
  return files;
}

// ---------------------------------------------------------------------------
// subcommands

int cmd_gen_fixture(const std::string& out, const std::string& mode, int d_model, int m, int n,
                    int l, int u, int text_vocab, uint64_t seed) {
  fmd::Fixture f = fmd::make_fixture(fmd::fusion_mode_from_string(mode), d_model, m, n, l, u,
                                     text_vocab, seed);
  const std::string path = resolve_out(out, "fixture.json");
  if (fs::path(path).has_parent_path()) fs::create_directories(fs::path(path).parent_path());
  fmd::save_fixture(f, path);
  std::printf("wrote %s (mode %s, T=%d)\n", path.c_str(), mode.c_str(),
              (f.fusion_mode == fmd::FusionMode::token_wise ? m + n + l : u + l));
  return 0;
}

int cmd_generate(const ModelOpts& model_opts, const ForkOpts& fork_opts,
                 const std::string& fixture_path, const std::string& strategy, int max_tokens,
                 int eos_id, int dola_early, double vcd_gamma, uint64_t vcd_seed,
                 bool capture_attention, const std::string& out) {
  fmd::DecoderWeights w = model_opts.build();
  fmd::MultimodalInput input = fmd::assemble_fixture(fmd::load_fixture(fixture_path), w);

  fmd::StrategyOptions sopts;
  sopts.fork = fork_opts.build();
  sopts.dola_early_layer = dola_early;
  sopts.vcd_gamma = vcd_gamma;
  sopts.vcd_noise_seed = vcd_seed;
  sopts.generate.max_tokens = max_tokens;
  sopts.generate.eos_id = eos_id;
  sopts.generate.capture.last_row_mean_heads = capture_attention;

  fmd::GenerationResult res = fmd::run_strategy(strategy, w, input, sopts);

  std::map<std::string, std::string> cfg;
  model_opts.describe(cfg);
  fork_opts.describe(cfg);
  cfg["command"] = "generate";
  cfg["fixture"] = fixture_path;
  cfg["strategy"] = strategy;
  cfg["max-tokens"] = std::to_string(max_tokens);
  cfg["eos-id"] = std::to_string(eos_id);
  cfg["dola-early-layer"] = std::to_string(dola_early);
  cfg["vcd-gamma"] = std::to_string(vcd_gamma);
  cfg["vcd-noise-seed"] = std::to_string(vcd_seed);

  json j = result_to_json(res);
  j["command"] = "generate";
  j["effective_config"] = config_to_json(cfg);
  if (capture_attention && input.layout.fusion_mode == fmd::FusionMode::token_wise) {
    json att;
    att["merged"] = masses_to_json(fmd::modality_attention_mass_all(res.trace_merged,
                                                                    input.layout));
    if (strategy == "fmd") {
      att["branch_video_masked"] =
          masses_to_json(fmd::modality_attention_mass_all(res.trace_branch_v, input.layout));
      att["branch_audio_masked"] =
          masses_to_json(fmd::modality_attention_mass_all(res.trace_branch_a, input.layout));
    }
    j["attention_masses"] = std::move(att);
  }

  const std::string path = resolve_out(out, "report_generate.json");
  write_text(path, j.dump(2) + "\n");
  std::printf("strategy %s emitted %zu tokens -> %s\n", strategy.c_str(), res.tokens.size(),
              path.c_str());
  return 0;
}

int cmd_calibrate_alpha(const ModelOpts& model_opts, const ForkOpts& fork_opts,
                        const std::vector<std::string>& fixture_files, const std::string& out) {
  fmd::DecoderWeights w = model_opts.build();
  fmd::ForkConfig fc = fork_opts.build();

  std::vector<fmd::FusionWeights> per_sample;
  json samples = json::array();
  for (const std::string& path : fixture_files) {
    fmd::MultimodalInput input = fmd::assemble_fixture(fmd::load_fixture(path), w);
    fmd::FusionWeights fw = fmd::estimate_alpha(w, input, fc);
    per_sample.push_back(fw);
    samples.push_back({{"fixture", path},
                       {"alpha", fw.alpha},
                       {"alpha_a", fw.alpha_a},
                       {"alpha_v", fw.alpha_v}});
  }
  fmd::FusionWeights mean = fmd::mean_fusion_weights(per_sample);

  std::map<std::string, std::string> cfg;
  model_opts.describe(cfg);
  fork_opts.describe(cfg);
  cfg["command"] = "calibrate-alpha";
  cfg["fixtures"] = std::to_string(fixture_files.size());

  json j;
  j["command"] = "calibrate-alpha";
  j["effective_config"] = config_to_json(cfg);
  j["alpha"] = mean.alpha;
  j["alpha_a"] = mean.alpha_a;
  j["alpha_v"] = mean.alpha_v;
  j["builtin_default_alpha"] = 0.8;
  j["samples"] = std::move(samples);

  const std::string path = resolve_out(out, "report_calibrate_alpha.json");
  write_text(path, j.dump(2) + "\n");
  std::printf("calibrated alpha %.6f (alpha_a %.6f, alpha_v %.6f) over %zu fixtures; "
              "builtin default 0.8 -> %s\n",
              mean.alpha, mean.alpha_a, mean.alpha_v, fixture_files.size(), path.c_str());
  return 0;
}

int cmd_analyze(const ModelOpts& model_opts, const ForkOpts& fork_opts,
                const std::string& fixture_path, const std::vector<std::string>& strategies,
                bool cosine, uint64_t cosine_seed, bool per_head, const std::string& out) {
  fmd::DecoderWeights w = model_opts.build();
  fmd::MultimodalInput input = fmd::assemble_fixture(fmd::load_fixture(fixture_path), w);

  fmd::StrategyOptions sopts;
  sopts.fork = fork_opts.build();
  sopts.generate.max_tokens = 0;
  sopts.generate.capture.last_row_mean_heads = true;
  sopts.generate.capture.per_head_rows = per_head;

  json reports = json::array();
  for (const std::string& name : strategies) {
    fmd::GenerationResult res = fmd::run_strategy(name, w, input, sopts);
    json r;
    r["strategy"] = name;
    r["pass"] = name == "fmd" ? "merged" : "full";
    r["masses"] = masses_to_json(fmd::modality_attention_mass_all(res.trace_merged, input.layout));
    if (per_head && !res.trace_merged.per_head.empty()) {
      const int final_layer = res.trace_merged.per_head.rbegin()->first;
      r["per_head_masses"] = masses_to_json(
          fmd::modality_attention_mass_per_head(res.trace_merged, input.layout, final_layer));
    }
    reports.push_back(std::move(r));
    if (name == "fmd" && !res.trace_branch_v.last_row.empty()) {
      json bv;
      bv["strategy"] = name;
      bv["pass"] = "branch_video_masked";
      bv["masses"] =
          masses_to_json(fmd::modality_attention_mass_all(res.trace_branch_v, input.layout));
      reports.push_back(std::move(bv));
      json ba;
      ba["strategy"] = name;
      ba["pass"] = "branch_audio_masked";
      ba["masses"] =
          masses_to_json(fmd::modality_attention_mass_all(res.trace_branch_a, input.layout));
      reports.push_back(std::move(ba));
    }
  }

  std::map<std::string, std::string> cfg;
  model_opts.describe(cfg);
  fork_opts.describe(cfg);
  cfg["command"] = "analyze-attention";
  cfg["fixture"] = fixture_path;

  json j;
  j["command"] = "analyze-attention";
  j["effective_config"] = config_to_json(cfg);
  j["reports"] = std::move(reports);

  if (cosine) {
    json probes;
    for (auto method : {fmd::MaskMethod::zero_out, fmd::MaskMethod::gaussian}) {
      json per_target;
      for (auto target : {fmd::ModalityTarget::video, fmd::ModalityTarget::audio})
        per_target[fmd::to_string(target)] =
            fmd::hidden_cosine_probe(w, input, target, method, cosine_seed);
      probes[fmd::to_string(method)] = std::move(per_target);
    }
    j["cosine_probes"] = std::move(probes);
  }

  const std::string path = resolve_out(out, "report_analyze.json");
  write_text(path, j.dump(2) + "\n");
  std::printf("analyzed %zu strategies -> %s\n", strategies.size(), path.c_str());
  return 0;
}

int cmd_sweep(const ModelOpts& model_opts, const ForkOpts& fork_opts,
              const std::vector<std::string>& fixture_files, const std::string& scenario,
              int scenario_samples, uint64_t scenario_seed, std::vector<int> candidates, int step,
              const std::string& out) {
  fmd::DecoderWeights w;
  std::vector<fmd::MultimodalInput> inputs;
  std::vector<int> targets;

  if (scenario == "planted") {
    fmd::PlantedScenario sc = fmd::make_planted_scenario(scenario_samples, scenario_seed);
    w = std::move(sc.model);
    inputs = std::move(sc.inputs);
    targets = std::move(sc.targets);
  } else {
    w = model_opts.build();
    for (const std::string& path : fixture_files)
      inputs.push_back(fmd::assemble_fixture(fmd::load_fixture(path), w));
  }

  if (candidates.empty()) {
    if (step < 1) throw std::invalid_argument("sweep: step must be >= 1");
    for (int c = 0; c <= w.config.n_layers; c += step) candidates.push_back(c);
  }

  std::vector<fmd::SweepRow> rows =
      fmd::layer_sweep(w, inputs, candidates, fork_opts.build(), targets);
  const std::string csv = fmd::sweep_to_csv(rows);
  const std::string path = resolve_out(out, "sweep.csv");
  write_text(path, csv);
  std::printf("%s", csv.c_str());
  std::printf("swept %zu candidates over %zu inputs -> %s\n", candidates.size(), inputs.size(),
              path.c_str());
  return 0;
}

int cmd_bench(const ModelOpts& model_opts, const ForkOpts& fork_opts,
              const std::vector<std::string>& fixture_files,
              const std::vector<std::string>& strategies, int max_tokens, int warmup,
              int dola_early, double vcd_gamma, uint64_t vcd_seed, const std::string& out) {
  fmd::DecoderWeights w = model_opts.build();
  std::vector<fmd::MultimodalInput> inputs;
  for (const std::string& path : fixture_files)
    inputs.push_back(fmd::assemble_fixture(fmd::load_fixture(path), w));

  fmd::BenchOptions bopts;
  bopts.max_tokens = max_tokens;
  bopts.warmup_runs = warmup;
  bopts.strategy.fork = fork_opts.build();
  bopts.strategy.dola_early_layer = dola_early;
  bopts.strategy.vcd_gamma = vcd_gamma;
  bopts.strategy.vcd_noise_seed = vcd_seed;

  std::vector<fmd::BenchRecord> records = fmd::bench_decoding(w, inputs, strategies, bopts);

  std::map<std::string, std::string> cfg;
  model_opts.describe(cfg);
  fork_opts.describe(cfg);
  cfg["command"] = "bench";
  cfg["max-tokens"] = std::to_string(max_tokens);
  cfg["warmup"] = std::to_string(warmup);

  json recs = json::array();
  double vanilla_apps = 0.0;
  for (const auto& r : records)
    if (r.strategy == "vanilla") vanilla_apps = static_cast<double>(r.layer_applications);
  json ratios = json::object();
  for (const auto& r : records) {
    json jr;
    jr["strategy"] = r.strategy;
    jr["tokens"] = r.tokens;
    jr["wall_seconds"] = r.wall_seconds;
    jr["tokens_per_second"] = r.tokens_per_second;
    jr["seconds_per_token"] = r.seconds_per_token;
    jr["layer_applications"] = r.layer_applications;
    jr["layer_applications_per_token"] = r.layer_applications_per_token;
    jr["flops"] = r.flops;
    if (!r.notes.empty()) jr["notes"] = r.notes;
    recs.push_back(std::move(jr));
    if (vanilla_apps > 0.0 && r.strategy != "vanilla")
      ratios[r.strategy + "_vs_vanilla"] =
          static_cast<double>(r.layer_applications) / vanilla_apps;
    std::printf("%-8s %6d tok  %8.3f s  %9.1f tok/s  %.4g s/tok  %8lld apps  %lld apps/tok\n",
                r.strategy.c_str(), r.tokens, r.wall_seconds, r.tokens_per_second,
                r.seconds_per_token, r.layer_applications, r.layer_applications_per_token);
  }

  json j;
  j["command"] = "bench";
  j["effective_config"] = config_to_json(cfg);
  j["records"] = std::move(recs);
  j["analytic_ratios"] = std::move(ratios);

  const std::string path = resolve_out(out, "report_bench.json");
  write_text(path, j.dump(2) + "\n");
  std::printf("bench -> %s\n", path.c_str());
  return 0;
}

int cmd_selftest(const std::string& golden_path) {
  fmd::SelftestOptions opts;
  opts.rng_golden_path = golden_path;
  std::vector<fmd::SelftestResult> results = fmd::run_selftest(opts);
  int failed = 0;
  for (const auto& r : results) {
    std::printf("%-28s %s  %s\n", r.name.c_str(), r.pass ? "PASS" : "FAIL", r.detail.c_str());
    if (!r.pass) ++failed;
  }
  std::printf("%zu checks, %d failed\n", results.size(), failed);
  return failed == 0 ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale audio-visual decoder with fork-merge decoding"};
  app.require_subcommand(1);

  std::string config_path;

  // gen-fixture
  auto* gen_fix = app.add_subcommand("gen-fixture", "write a synthetic fixture JSON");
  std::string gf_out, gf_mode = "token_wise";
  int gf_d = 64, gf_m = 8, gf_n = 8, gf_l = 6, gf_u = 8, gf_vocab = 256;
  uint64_t gf_seed = 1;
  gen_fix->add_option("--out", gf_out, "output path");
  gen_fix->add_option("--mode", gf_mode, "token_wise | channel_wise")
      ->check(CLI::IsMember({"token_wise", "channel_wise"}));
  gen_fix->add_option("--d-model", gf_d, "embedding width");
  gen_fix->add_option("--M", gf_m, "visual token count (token_wise)");
  gen_fix->add_option("--N", gf_n, "audio token count (token_wise)");
  gen_fix->add_option("--L", gf_l, "text token count");
  gen_fix->add_option("--U", gf_u, "joint AV positions (channel_wise)");
  gen_fix->add_option("--text-vocab", gf_vocab, "range for random text ids");
  gen_fix->add_option("--seed", gf_seed, "fixture seed");

  // generate
  auto* gen = app.add_subcommand("generate", "run one decoding strategy over a fixture");
  ConfigBinder gen_cfg;
  ModelOpts gen_model;
  ForkOpts gen_fork;
  std::string gen_fixture, gen_strategy = "vanilla", gen_out;
  int gen_max_tokens = 16, gen_eos = -1, gen_dola_early = 2;
  double gen_vcd_gamma = 1.0;
  uint64_t gen_vcd_seed = 7;
  bool gen_capture = false;
  gen_model.add(gen, gen_cfg);
  gen_fork.add(gen, gen_cfg);
  auto* g1 = gen->add_option("--fixture", gen_fixture, "fixture JSON");
  auto* g2 = gen->add_option("--strategy", gen_strategy, "vanilla | fmd | dola | vcd")
                 ->check(CLI::IsMember({"vanilla", "fmd", "dola", "vcd"}));
  auto* g3 = gen->add_option("--max-tokens", gen_max_tokens, "emission budget");
  auto* g4 = gen->add_option("--eos-id", gen_eos, "stop token id (negative disables)");
  auto* g5 = gen->add_option("--dola-early-layer", gen_dola_early, "contrast layer for dola");
  auto* g6 = gen->add_option("--vcd-gamma", gen_vcd_gamma, "contrast strength for vcd");
  auto* g7 = gen->add_option("--vcd-noise-seed", gen_vcd_seed, "noise seed for vcd");
  auto* g8 = gen->add_flag("--capture-attention", gen_capture, "store attention masses");
  auto* g9 = gen->add_option("--out", gen_out, "report path");
  gen->add_option("--config", config_path, "JSON config file (CLI flags win)");
  gen_cfg.bind("fixture", g1, [&](const json& j) { gen_fixture = j.get<std::string>(); });
  gen_cfg.bind("strategy", g2, [&](const json& j) { gen_strategy = j.get<std::string>(); });
  gen_cfg.bind("max-tokens", g3, [&](const json& j) { gen_max_tokens = j.get<int>(); });
  gen_cfg.bind("eos-id", g4, [&](const json& j) { gen_eos = j.get<int>(); });
  gen_cfg.bind("dola-early-layer", g5, [&](const json& j) { gen_dola_early = j.get<int>(); });
  gen_cfg.bind("vcd-gamma", g6, [&](const json& j) { gen_vcd_gamma = j.get<double>(); });
  gen_cfg.bind("vcd-noise-seed", g7, [&](const json& j) { gen_vcd_seed = j.get<uint64_t>(); });
  gen_cfg.bind("capture-attention", g8, [&](const json& j) { gen_capture = j.get<bool>(); });
  gen_cfg.bind("out", g9, [&](const json& j) { gen_out = j.get<std::string>(); });

  // calibrate-alpha
  auto* cal = app.add_subcommand("calibrate-alpha", "average fusion weights over fixtures");
  ConfigBinder cal_cfg;
  ModelOpts cal_model;
  ForkOpts cal_fork;
  std::vector<std::string> cal_fixtures;
  std::string cal_dir, cal_out;
  std::string cal_config;
  cal_model.add(cal, cal_cfg);
  cal_fork.add(cal, cal_cfg);
  auto* c1 = cal->add_option("--fixture", cal_fixtures, "fixture JSON (repeatable)");
  auto* c2 = cal->add_option("--fixtures-dir", cal_dir, "directory of fixture JSONs");
  auto* c3 = cal->add_option("--out", cal_out, "report path");
  cal->add_option("--config", cal_config, "JSON config file (CLI flags win)");
  cal_cfg.bind("fixture", c1,
               [&](const json& j) { cal_fixtures = j.get<std::vector<std::string>>(); });
  cal_cfg.bind("fixtures-dir", c2, [&](const json& j) { cal_dir = j.get<std::string>(); });
  cal_cfg.bind("out", c3, [&](const json& j) { cal_out = j.get<std::string>(); });

  // analyze-attention
  auto* ana = app.add_subcommand("analyze-attention", "per-layer modality attention masses");
  ConfigBinder ana_cfg;
  ModelOpts ana_model;
  ForkOpts ana_fork;
  std::string ana_fixture, ana_out;
  std::vector<std::string> ana_strategies = {"vanilla", "fmd"};
  bool ana_cosine = false;
  uint64_t ana_cosine_seed = 11;
  std::string ana_config;
  ana_model.add(ana, ana_cfg);
  ana_fork.add(ana, ana_cfg);
  auto* a1 = ana->add_option("--fixture", ana_fixture, "fixture JSON");
  auto* a2 = ana->add_option("--strategies", ana_strategies, "strategies to analyze")
                 ->delimiter(',');
  auto* a3 = ana->add_flag("--cosine", ana_cosine, "also run hidden-state cosine probes");
  auto* a4 = ana->add_option("--cosine-seed", ana_cosine_seed, "noise seed for the gaussian probe");
  auto* a5 = ana->add_option("--out", ana_out, "report path");
  bool ana_per_head = false;
  auto* a6 = ana->add_flag("--per-head", ana_per_head,
                           "also emit final-layer masses per attention head");
  ana->add_option("--config", ana_config, "JSON config file (CLI flags win)");
  ana_cfg.bind("fixture", a1, [&](const json& j) { ana_fixture = j.get<std::string>(); });
  ana_cfg.bind("strategies", a2,
               [&](const json& j) { ana_strategies = j.get<std::vector<std::string>>(); });
  ana_cfg.bind("cosine", a3, [&](const json& j) { ana_cosine = j.get<bool>(); });
  ana_cfg.bind("cosine-seed", a4, [&](const json& j) { ana_cosine_seed = j.get<uint64_t>(); });
  ana_cfg.bind("out", a5, [&](const json& j) { ana_out = j.get<std::string>(); });
  ana_cfg.bind("per-head", a6, [&](const json& j) { ana_per_head = j.get<bool>(); });

  // sweep-layers
  auto* swp = app.add_subcommand("sweep-layers", "fork-layer sweep, CSV output");
  ConfigBinder swp_cfg;
  ModelOpts swp_model;
  ForkOpts swp_fork;
  std::vector<std::string> swp_fixtures;
  std::vector<int> swp_candidates;
  std::string swp_scenario, swp_out, swp_dir;
  int swp_step = 1, swp_samples = 20;
  uint64_t swp_seed = 33;
  std::string swp_config;
  swp_model.add(swp, swp_cfg);
  swp_fork.add(swp, swp_cfg);
  auto* s1 = swp->add_option("--fixture", swp_fixtures, "fixture JSON (repeatable)");
  auto* s2 = swp->add_option("--fixtures-dir", swp_dir, "directory of fixture JSONs");
  auto* s3 = swp->add_option("--candidates", swp_candidates, "fork layers to test")
                 ->delimiter(',');
  auto* s4 = swp->add_option("--step", swp_step, "candidate stride when --candidates is absent");
  auto* s5 = swp->add_option("--scenario", swp_scenario, "'planted' uses the built-in probe task")
                 ->check(CLI::IsMember({"planted"}));
  auto* s6 = swp->add_option("--scenario-samples", swp_samples, "inputs for the planted scenario");
  auto* s7 = swp->add_option("--scenario-seed", swp_seed, "seed for the planted scenario");
  auto* s8 = swp->add_option("--out", swp_out, "CSV path");
  swp->add_option("--config", swp_config, "JSON config file (CLI flags win)");
  swp_cfg.bind("fixture", s1,
               [&](const json& j) { swp_fixtures = j.get<std::vector<std::string>>(); });
  swp_cfg.bind("fixtures-dir", s2, [&](const json& j) { swp_dir = j.get<std::string>(); });
  swp_cfg.bind("candidates", s3,
               [&](const json& j) { swp_candidates = j.get<std::vector<int>>(); });
  swp_cfg.bind("step", s4, [&](const json& j) { swp_step = j.get<int>(); });
  swp_cfg.bind("scenario", s5, [&](const json& j) { swp_scenario = j.get<std::string>(); });
  swp_cfg.bind("scenario-samples", s6, [&](const json& j) { swp_samples = j.get<int>(); });
  swp_cfg.bind("scenario-seed", s7, [&](const json& j) { swp_seed = j.get<uint64_t>(); });
  swp_cfg.bind("out", s8, [&](const json& j) { swp_out = j.get<std::string>(); });

  // bench
  auto* bch = app.add_subcommand("bench", "decoding cost comparison");
  ConfigBinder bch_cfg;
  ModelOpts bch_model;
  ForkOpts bch_fork;
  std::vector<std::string> bch_fixtures;
  std::vector<std::string> bch_strategies = {"vanilla", "fmd", "dola", "vcd"};
  std::string bch_out, bch_dir;
  int bch_max_tokens = 32, bch_warmup = 1, bch_dola_early = 2;
  double bch_vcd_gamma = 1.0;
  uint64_t bch_vcd_seed = 7;
  std::string bch_config;
  bch_model.add(bch, bch_cfg);
  bch_fork.add(bch, bch_cfg);
  auto* b1 = bch->add_option("--fixture", bch_fixtures, "fixture JSON (repeatable)");
  auto* b2 = bch->add_option("--fixtures-dir", bch_dir, "directory of fixture JSONs");
  auto* b3 = bch->add_option("--strategies", bch_strategies, "strategies to bench")
                 ->delimiter(',');
  auto* b4 = bch->add_option("--max-tokens", bch_max_tokens, "tokens per run");
  auto* b5 = bch->add_option("--warmup", bch_warmup, "warmup runs excluded from timing");
  auto* b6 = bch->add_option("--dola-early-layer", bch_dola_early, "contrast layer for dola");
  auto* b7 = bch->add_option("--vcd-gamma", bch_vcd_gamma, "contrast strength for vcd");
  auto* b8 = bch->add_option("--vcd-noise-seed", bch_vcd_seed, "noise seed for vcd");
  auto* b9 = bch->add_option("--out", bch_out, "report path");
  bch->add_option("--config", bch_config, "JSON config file (CLI flags win)");
  bch_cfg.bind("fixture", b1,
               [&](const json& j) { bch_fixtures = j.get<std::vector<std::string>>(); });
  bch_cfg.bind("fixtures-dir", b2, [&](const json& j) { bch_dir = j.get<std::string>(); });
  bch_cfg.bind("strategies", b3,
               [&](const json& j) { bch_strategies = j.get<std::vector<std::string>>(); });
  bch_cfg.bind("max-tokens", b4, [&](const json& j) { bch_max_tokens = j.get<int>(); });
  bch_cfg.bind("warmup", b5, [&](const json& j) { bch_warmup = j.get<int>(); });
  bch_cfg.bind("dola-early-layer", b6, [&](const json& j) { bch_dola_early = j.get<int>(); });
  bch_cfg.bind("vcd-gamma", b7, [&](const json& j) { bch_vcd_gamma = j.get<double>(); });
  bch_cfg.bind("vcd-noise-seed", b8, [&](const json& j) { bch_vcd_seed = j.get<uint64_t>(); });
  bch_cfg.bind("out", b9, [&](const json& j) { bch_out = j.get<std::string>(); });

  // selftest
  auto* st = app.add_subcommand("selftest", "run the invariant suite");
  std::string st_golden;
  st->add_option("--rng-golden", st_golden, "external RNG golden file to verify against");

  try {
    app.parse(argc, argv);

    if (gen->parsed() && !config_path.empty()) gen_cfg.apply_file(config_path);
    if (cal->parsed() && !cal_config.empty()) cal_cfg.apply_file(cal_config);
    if (ana->parsed() && !ana_config.empty()) ana_cfg.apply_file(ana_config);
    if (swp->parsed() && !swp_config.empty()) swp_cfg.apply_file(swp_config);
    if (bch->parsed() && !bch_config.empty()) bch_cfg.apply_file(bch_config);

    if (gen_fix->parsed())
      return cmd_gen_fixture(gf_out, gf_mode, gf_d, gf_m, gf_n, gf_l, gf_u, gf_vocab, gf_seed);
    if (gen->parsed()) {
      if (gen_fixture.empty())
        throw std::invalid_argument("generate: --fixture is required (flag or config key)");
      return cmd_generate(gen_model, gen_fork, gen_fixture, gen_strategy, gen_max_tokens, gen_eos,
                          gen_dola_early, gen_vcd_gamma, gen_vcd_seed, gen_capture, gen_out);
    }
    if (cal->parsed())
      return cmd_calibrate_alpha(cal_model, cal_fork, list_fixture_files(cal_fixtures, cal_dir),
                                 cal_out);
    if (ana->parsed()) {
      if (ana_fixture.empty())
        throw std::invalid_argument("analyze-attention: --fixture is required");
      return cmd_analyze(ana_model, ana_fork, ana_fixture, ana_strategies, ana_cosine,
                         ana_cosine_seed, ana_per_head, ana_out);
    }
    if (swp->parsed()) {
      std::vector<std::string> files;
      if (swp_scenario.empty()) files = list_fixture_files(swp_fixtures, swp_dir);
      return cmd_sweep(swp_model, swp_fork, files, swp_scenario, swp_samples, swp_seed,
                       swp_candidates, swp_step, swp_out);
    }
    if (bch->parsed())
      return cmd_bench(bch_model, bch_fork, list_fixture_files(bch_fixtures, bch_dir),
                       bch_strategies, bch_max_tokens, bch_warmup, bch_dola_early, bch_vcd_gamma,
                       bch_vcd_seed, bch_out);
    if (st->parsed()) return cmd_selftest(st_golden);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  } catch (const std::invalid_argument& e) {
    json err = {{"error", e.what()}, {"type", "validation"}};
    std::fprintf(stderr, "%s\n", err.dump().c_str());
    return 1;
  } catch (const std::exception& e) {
    json err = {{"error", e.what()}, {"type", "runtime"}};
    std::fprintf(stderr, "%s\n", err.dump().c_str());
    return 2;
  }
  return 0;
}
