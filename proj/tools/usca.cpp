// Command-line driver: gen, fit, eval, retrieve, scatter, sweep.

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "usca/embed_io.hpp"
#include "usca/error.hpp"
#include "usca/experiment.hpp"
#include "usca/log.hpp"
#include "usca/store.hpp"

namespace fs = std::filesystem;
using namespace usca;

namespace {

struct Overrides {
  std::string config;
  std::optional<std::string> preset;
  std::optional<std::size_t> n;
  std::optional<std::uint64_t> seed;
};

void add_overrides(CLI::App* cmd, Overrides& o) {
  cmd->add_option("--config", o.config, "experiment config (JSON)");
  cmd->add_option("--preset", o.preset, "data preset");
  cmd->add_option("--n", o.n, "number of samples per view");
  cmd->add_option("--seed", o.seed, "seed for data and solver");
}

nlohmann::json load_json(const fs::path& path) {
  try {
    return nlohmann::json::parse(read_text_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

ExperimentConfig load_config(const Overrides& o, std::optional<std::uint64_t> seed = std::nullopt) {
  nlohmann::json j = o.config.empty() ? nlohmann::json{{"version", kExperimentConfigVersion}} : load_json(o.config);
  if (!j.is_object()) throw ValidationError("config: expected a JSON object");
  if (o.preset) {
    j["data"]["preset"] = *o.preset;
    if (j["data"].contains("latent")) j["data"].erase("latent");
  }
  if (o.n) j["data"]["n"] = *o.n;
  if (!seed) seed = o.seed;
  if (seed) {
    j["data"]["seed"] = *seed;
    j["solver"]["seed"] = *seed;
  }
  return ExperimentConfig::from_json(j);
}

nlohmann::json outcome_json(const EvalOutcome& e, const EvalSection& eval) {
  nlohmann::json thresholds = nlohmann::json::object();
  for (const auto& [k, v] : eval.thresholds) thresholds[k] = v;
  return {{"report", e.report.to_json()},
          {"thresholds", thresholds},
          {"passed", e.passed()},
          {"failures", e.failures}};
}

int cmd_gen(const Overrides& o, const std::string& out) {
  const ExperimentConfig cfg = load_config(o);
  const fs::path dir = out.empty() ? fs::path(cfg.output) / "data" : fs::path(out);
  const nlohmann::json manifest = run_gen(cfg, dir);
  std::cout << dir.string() << " " << manifest["content_hash"].get<std::string>() << "\n";
  return 0;
}

Matrix centered(Matrix m) {
  center_columns(m);
  return m;
}

int cmd_fit(const Overrides& o, const std::string& data, const std::string& vec1, const std::string& vec2,
            const std::string& out) {
  const ExperimentConfig cfg = load_config(o);
  const fs::path model_dir = out.empty() ? fs::path(cfg.output) / "model" : fs::path(out);
  FitResult r;
  if (!vec1.empty() || !vec2.empty()) {
    if (vec1.empty() || vec2.empty()) throw ValidationError("fit: --vec1 and --vec2 go together");
    const EmbeddingTable t1 = read_vec_text(vec1), t2 = read_vec_text(vec2);
    r = cfg.solver.mode == Mode::WithPrivate
            ? fit_with_private(centered(t1.vectors), centered(t2.vectors), cfg.solver)
            : fit(centered(t1.vectors), centered(t2.vectors), cfg.solver);
    save_model(model_dir, r, cfg.to_json());
  } else {
    if (data.empty()) throw ValidationError("fit: need --data or --vec1/--vec2");
    r = run_fit(cfg, data, model_dir);
  }
  const TraceRow& last = r.trace.back();
  std::printf("%s epochs=%zu matcher=%.6g total=%.6g time=%.1fs\n", model_dir.string().c_str(),
              r.trace.size(), last.matcher, last.total, r.wall_seconds);
  return 0;
}

int cmd_eval(const std::string& config, const std::string& model, const std::string& data,
             const std::string& out) {
  nlohmann::json echo;
  const FitResult m = load_model(model, &echo);
  const ExperimentConfig cfg =
      config.empty() ? ExperimentConfig::from_json(echo) : ExperimentConfig::from_json(load_json(config));
  const SyntheticDataset ds = load_dataset(data);
  const EvalOutcome e = run_eval(m, ds, cfg.eval, cfg.data.seed);
  const std::string text = outcome_json(e, cfg.eval).dump(2) + "\n";
  if (out.empty()) {
    std::cout << text;
  } else {
    write_text_file(out, text);
  }
  for (const auto& f : e.failures) log::error("threshold failed: " + f);
  return e.passed() ? 0 : 1;
}

int cmd_retrieve(const std::string& model, const std::string& vec1, const std::string& vec2,
                 const std::string& dict_path, std::size_t max_rows, const std::string& out) {
  const FitResult m = load_model(model);
  const EmbeddingTable src = read_vec_text(vec1, max_rows), tgt = read_vec_text(vec2, max_rows);
  std::size_t skipped = 0;
  const Dictionary dict = read_dictionary(dict_path, &src, &tgt, &skipped);
  const auto rows = run_retrieval(m, src.vectors, tgt.vectors, dict);
  nlohmann::json j = nlohmann::json::array();
  std::printf("%-4s %8s %8s\n", "k", "NN", "CSLS");
  for (const auto& r : rows) {
    std::printf("P@%-2zu %8.2f %8.2f\n", r.k, r.nn, r.csls);
    j.push_back({{"k", r.k}, {"nn", r.nn}, {"csls", r.csls}});
  }
  if (!out.empty()) write_text_file(out, nlohmann::json{{"precision", j}, {"skipped_pairs", skipped}}.dump(2) + "\n");
  return 0;
}

int cmd_scatter(const std::string& model, const std::string& data, const std::string& out) {
  write_scatter(load_model(model), load_dataset(data), out);
  return 0;
}

std::vector<std::uint64_t> parse_seeds(const std::string& s) {
  std::vector<std::uint64_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto dash = item.find('-');
    if (dash != std::string::npos && dash > 0) {
      const std::uint64_t a = std::stoull(item.substr(0, dash)), b = std::stoull(item.substr(dash + 1));
      for (std::uint64_t v = a; v <= b; ++v) out.push_back(v);
    } else {
      out.push_back(std::stoull(item));
    }
  }
  if (out.empty()) throw ValidationError("sweep: no seeds");
  return out;
}

int cmd_sweep(const Overrides& o, const std::string& seeds_arg, std::size_t jobs, const std::string& out) {
  const std::vector<std::uint64_t> seeds = parse_seeds(seeds_arg);
  const ExperimentConfig base = load_config(o);
  const fs::path root = out.empty() ? fs::path(base.output) : fs::path(out);
  std::vector<nlohmann::json> results(seeds.size());
  std::vector<std::optional<EvalOutcome>> outcomes(seeds.size());
  std::mutex mu;
  std::size_t next = 0;
  auto worker = [&] {
    for (;;) {
      std::size_t i;
      {
        std::lock_guard<std::mutex> lock(mu);
        if (next == seeds.size()) return;
        i = next++;
      }
      const fs::path dir = root / ("seed-" + std::to_string(seeds[i]));
      try {
        const ExperimentConfig cfg = load_config(o, seeds[i]);
        run_gen(cfg, dir / "data");
        const FitResult r = run_fit(cfg, dir / "data", dir / "model");
        const EvalOutcome e = run_eval(r, load_dataset(dir / "data"), cfg.eval, cfg.data.seed);
        write_text_file(dir / "report.json", outcome_json(e, cfg.eval).dump(2) + "\n");
        std::lock_guard<std::mutex> lock(mu);
        results[i] = outcome_json(e, cfg.eval);
        outcomes[i] = e;
        log::info("seed " + std::to_string(seeds[i]) + (e.passed() ? ": pass" : ": fail"));
      } catch (const std::exception& ex) {
        std::lock_guard<std::mutex> lock(mu);
        results[i] = {{"error", ex.what()}};
        log::error("seed " + std::to_string(seeds[i]) + ": " + ex.what());
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < std::max<std::size_t>(1, std::min(jobs, seeds.size())); ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  // medians over the seeds that finished
  std::vector<double> l1, l2, tc, pme;
  for (const auto& e : outcomes) {
    if (!e) continue;
    l1.push_back(e->report.leakage1);
    l2.push_back(e->report.leakage2);
    tc.push_back(e->report.theta_rel_diff);
    pme.push_back(e->report.pair_match_error);
  }
  nlohmann::json summary{{"seeds", seeds}, {"runs", results}, {"config", base.to_json()}};
  bool ok = l1.size() == seeds.size();
  if (!l1.empty()) {
    summary["median"] = {{"leakage1", median(l1)},
                         {"leakage2", median(l2)},
                         {"theta_rel_diff", median(tc)},
                         {"pair_match_error", median(pme)}};
    auto check = [&](const char* key, double v) {
      auto it = base.eval.thresholds.find(key);
      if (it != base.eval.thresholds.end() && !(v <= it->second)) ok = false;
    };
    check("leakage", median(l1));
    check("leakage", median(l2));
    check("theta_rel_diff", median(tc));
    check("pair_match_error", median(pme));
  }
  summary["passed"] = ok;
  write_text_file(root / "summary.json", summary.dump(2) + "\n");
  std::cout << summary["median"].dump() << (ok ? " pass" : " fail") << "\n";
  return ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Shared component analysis from unaligned multimodal data"};
  app.require_subcommand(1);

  Overrides gen_o, fit_o, sweep_o;
  std::string gen_out, fit_data, fit_vec1, fit_vec2, fit_out;
  std::string eval_config, eval_model, eval_data, eval_out;
  std::string ret_model, ret_vec1, ret_vec2, ret_dict, ret_out;
  std::size_t ret_max_rows = 0;
  std::string sc_model, sc_data, sc_out;
  std::string sweep_seeds = "0-4", sweep_out;
  std::size_t sweep_jobs = 1;

  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  add_overrides(gen, gen_o);
  gen->add_option("--out", gen_out, "dataset directory");

  auto* fitc = app.add_subcommand("fit", "fit projections on a dataset or two embedding tables");
  add_overrides(fitc, fit_o);
  fitc->add_option("--data", fit_data, "dataset directory");
  fitc->add_option("--vec1", fit_vec1, "view 1 embeddings (word-vector text)");
  fitc->add_option("--vec2", fit_vec2, "view 2 embeddings (word-vector text)");
  fitc->add_option("--out", fit_out, "model directory");

  auto* evalc = app.add_subcommand("eval", "identifiability report; exit 1 when a threshold fails");
  evalc->add_option("--config", eval_config, "config with eval thresholds (default: the model's echo)");
  evalc->add_option("--model", eval_model, "model directory")->required();
  evalc->add_option("--data", eval_data, "dataset directory")->required();
  evalc->add_option("--out", eval_out, "report file (default: stdout)");

  auto* ret = app.add_subcommand("retrieve", "P@{1,5,10} with NN and CSLS scoring");
  ret->add_option("--model", ret_model, "model directory")->required();
  ret->add_option("--vec1", ret_vec1, "query embeddings")->required();
  ret->add_option("--vec2", ret_vec2, "reference embeddings")->required();
  ret->add_option("--dict", ret_dict, "two-column dictionary")->required();
  ret->add_option("--max-rows", ret_max_rows, "read at most this many embeddings per table");
  ret->add_option("--out", ret_out, "JSON result file");

  auto* sc = app.add_subcommand("scatter", "CSV of true c and recovered shared components on the test split");
  sc->add_option("--model", sc_model, "model directory")->required();
  sc->add_option("--data", sc_data, "dataset directory")->required();
  sc->add_option("--out", sc_out, "CSV file")->required();

  auto* sweep = app.add_subcommand("sweep", "gen, fit and eval over several seeds");
  add_overrides(sweep, sweep_o);
  sweep->add_option("--seeds", sweep_seeds, "comma list or ranges, e.g. 0-4");
  sweep->add_option("--jobs", sweep_jobs, "worker threads");
  sweep->add_option("--out", sweep_out, "output root");

  CLI11_PARSE(app, argc, argv);
  try {
    if (*gen) return cmd_gen(gen_o, gen_out);
    if (*fitc) return cmd_fit(fit_o, fit_data, fit_vec1, fit_vec2, fit_out);
    if (*evalc) return cmd_eval(eval_config, eval_model, eval_data, eval_out);
    if (*ret) return cmd_retrieve(ret_model, ret_vec1, ret_vec2, ret_dict, ret_max_rows, ret_out);
    if (*sc) return cmd_scatter(sc_model, sc_data, sc_out);
    if (*sweep) return cmd_sweep(sweep_o, sweep_seeds, sweep_jobs, sweep_out);
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << " (term: " << e.term() << ")\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
