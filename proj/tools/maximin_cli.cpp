// Command-line runner for the maximin simulation harness.

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "maximin/harness.hpp"

namespace {

std::vector<std::string> split_csv(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

template <class T>
std::vector<T> parse_list(const std::string& s, const char* what) {
  std::vector<T> out;
  for (const auto& tok : split_csv(s)) {
    try {
      std::size_t pos = 0;
      T v;
      if constexpr (std::is_same_v<T, int>) v = std::stoi(tok, &pos);
      else v = std::stod(tok, &pos);
      if (pos != tok.size()) throw std::invalid_argument(tok);
      out.push_back(v);
    } catch (const std::exception&) {
      throw maximin::ContractError(std::string("bad value '") + tok + "' in --" + what);
    }
  }
  if (out.empty()) throw maximin::ContractError(std::string("--") + what + " needs at least one value");
  return out;
}

struct RunFlags {
  std::string config_path, setting, n, delta, index_set, regime, methods, out, lambda_rule, catalog;
  int p = 0, N_Q = 0, reps = 0, M = 0, workers = 0, resample_m = 0, resample_B = 0;
  double alpha = 0, alpha0 = 0, tau0 = 0, eta0 = 0, perb = 0;
  std::uint64_t seed = 0;
  bool lowdim = false, split = false, no_split = false, zero_draws = false;
};

void add_run_flags(CLI::App* cmd, RunFlags& f) {
  cmd->add_option("--config", f.config_path, "JSON run configuration (flags override it)");
  cmd->add_option("--setting", f.setting, "Setting id, e.g. 1, 2, 3a, I-1");
  cmd->add_option("--n", f.n, "Per-group sample size, or a comma list");
  cmd->add_option("--p", f.p, "Dimension override");
  cmd->add_option("--N_Q", f.N_Q, "Number of unlabeled target rows");
  cmd->add_option("--reps", f.reps, "Replicates");
  cmd->add_option("--delta", f.delta, "Comma list of ridge levels");
  cmd->add_option("--M", f.M, "Number of sampled draws");
  cmd->add_option("--alpha", f.alpha, "Significance level");
  cmd->add_option("--alpha0", f.alpha0, "Screening level for the index set");
  cmd->add_option("--tau0", f.tau0, "Inflation constant for d0");
  cmd->add_option("--eta0", f.eta0, "Interval enlargement constant");
  cmd->add_option("--index-set", f.index_set, "coord or chisq")->check(CLI::IsMember({"coord", "chisq"}));
  cmd->add_option("--regime", f.regime, "auto, covshift, known or noshift")
      ->check(CLI::IsMember({"auto", "covshift", "known", "noshift"}));
  cmd->add_option("--methods", f.methods, "Comma list: proposed,normality,bootstrap,subsampling");
  cmd->add_option("--seed", f.seed, "Base seed");
  cmd->add_option("--workers", f.workers, "Worker threads (default: $MAXIMIN_WORKERS or 1)");
  cmd->add_option("--out", f.out, "Output directory");
  cmd->add_flag("--lowdim", f.lowdim, "Least-squares fits and exact projection directions");
  cmd->add_flag("--split", f.split, "Force sample splitting");
  cmd->add_flag("--no-split", f.no_split, "Disable sample splitting");
  cmd->add_option("--lambda-rule", f.lambda_rule, "cv or plugin")->check(CLI::IsMember({"cv", "plugin"}));
  cmd->add_option("--resample-m", f.resample_m, "Resample size for bootstrap/subsampling (default n/2)");
  cmd->add_option("--resample-B", f.resample_B, "Number of resamples");
  cmd->add_option("--perb", f.perb, "Perturbation size for setting 5");
  cmd->add_option("--catalog", f.catalog, "Extra settings catalog (JSON)");
  cmd->add_flag("--zero-draws", f.zero_draws, "Use S = 0 for every draw (diagnostic)");
}

maximin::RunConfig build_config(CLI::App* cmd, const RunFlags& f) {
  maximin::RunConfig c;
  c.workers = maximin::default_workers();
  if (!f.config_path.empty()) {
    std::ifstream in(f.config_path);
    if (!in) throw maximin::ContractError("cannot open config " + f.config_path);
    nlohmann::json j = nlohmann::json::parse(in);
    if (j.contains("config")) j = j.at("config");  // accept a manifest directly
    maximin::from_json(j, c);
  }
  auto set = [&](const char* name) { return cmd->count(name) > 0; };
  if (set("--setting")) c.setting = f.setting;
  if (set("--n")) c.n = parse_list<int>(f.n, "n");
  if (set("--p")) c.p = f.p;
  if (set("--N_Q")) c.N_Q = f.N_Q;
  if (set("--reps")) c.reps = f.reps;
  if (set("--delta")) c.deltas = parse_list<double>(f.delta, "delta");
  if (set("--M")) c.M = f.M;
  if (set("--alpha")) c.alpha = f.alpha;
  if (set("--alpha0")) c.alpha0 = f.alpha0;
  if (set("--tau0")) c.tau0 = f.tau0;
  if (set("--eta0")) c.eta0 = f.eta0;
  if (set("--index-set")) c.index_set = f.index_set;
  if (set("--regime")) c.regime = f.regime;
  if (set("--methods")) c.methods = split_csv(f.methods);
  if (set("--seed")) c.seed = f.seed;
  if (set("--workers")) c.workers = f.workers;
  if (set("--out")) c.out = f.out;
  if (set("--lowdim")) c.lowdim = true;
  if (set("--split")) c.split = true;
  if (set("--no-split")) c.split = false;
  if (set("--lambda-rule")) c.lambda_rule = f.lambda_rule;
  if (set("--resample-m")) c.resample_m = f.resample_m;
  if (set("--resample-B")) c.resample_B = f.resample_B;
  if (set("--perb")) c.perb = f.perb;
  if (set("--catalog")) c.catalog = f.catalog;
  if (set("--zero-draws")) c.force_zero_draws = true;
  c.validate();
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Maximin effect inference: simulation runner"};
  app.set_version_flag("--version", maximin::kVersion);
  app.require_subcommand(1);

  RunFlags run_flags, rmse_flags;
  auto* run_cmd = app.add_subcommand("run", "Coverage/length study for one setting");
  add_run_flags(run_cmd, run_flags);
  auto* rmse_cmd = app.add_subcommand("rmse", "RMSE of the point estimate over n and delta grids");
  add_run_flags(rmse_cmd, rmse_flags);

  auto* cat_cmd = app.add_subcommand("catalog", "Print the settings catalog as JSON");
  double cat_perb = 1.0;
  cat_cmd->add_option("--perb", cat_perb, "Perturbation size for setting 5");

  auto* show_cmd = app.add_subcommand("truth", "Print population weights and target for a setting");
  std::string show_id = "1";
  int show_p = 0;
  std::string show_delta = "0";
  show_cmd->add_option("--setting", show_id, "Setting id")->required();
  show_cmd->add_option("--p", show_p, "Dimension override");
  show_cmd->add_option("--delta", show_delta, "Comma list of ridge levels");

  CLI11_PARSE(app, argc, argv);

  try {
    if (run_cmd->parsed() || rmse_cmd->parsed()) {
      const bool is_run = run_cmd->parsed();
      const auto cfg = build_config(is_run ? run_cmd : rmse_cmd, is_run ? run_flags : rmse_flags);
      const auto res = is_run ? maximin::run(cfg) : maximin::rmse_table(cfg);
      maximin::write_outputs(res, cfg.out, is_run ? "results.csv" : "rmse.csv");
      std::cerr << "wrote " << cfg.out << "/" << (is_run ? "results.csv" : "rmse.csv") << " and manifest.json\n";
    } else if (cat_cmd->parsed()) {
      std::cout << maximin::catalog_to_json(maximin::default_catalog(cat_perb)).dump(2) << "\n";
    } else if (show_cmd->parsed()) {
      maximin::SettingOverrides ov;
      if (show_p > 0) ov.p = show_p;
      const auto spec = maximin::build_setting(show_id, ov);
      for (double d : parse_list<double>(show_delta, "delta")) {
        const auto t = maximin::compute_truth(spec, d);
        std::cout << "delta=" << d << " weights=" << t.weight.weights.transpose() << " target=" << t.value << "\n";
      }
    }
  } catch (const maximin::ContractError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
