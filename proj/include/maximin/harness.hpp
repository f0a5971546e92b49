#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "maximin/aggregation.hpp"
#include "maximin/debias.hpp"
#include "maximin/densenet.hpp"
#include "maximin/gamma.hpp"
#include "maximin/lasso.hpp"
#include "maximin/rng.hpp"
#include "maximin/simgen.hpp"

namespace maximin {

inline constexpr const char* kVersion = "0.1.0";
inline constexpr const char* kCsvHeader =
    "setting,regime,n,p,N_Q,L,delta,method,reps,coverage,mean_length,length_ratio,rmse,instability,"
    "reject_rate,failures,seed";

struct RunConfig {
  std::string setting = "1";
  std::vector<int> n;  // empty: the setting's default
  std::optional<int> p;
  std::optional<int> N_Q;
  int reps = 100;
  std::vector<double> deltas{0.0};
  int M = 500;
  double alpha = 0.05;
  double alpha0 = 0.01;
  double tau0 = 0.2;
  double eta0 = 0.01;
  std::string index_set = "coord";  // coord | chisq
  std::string regime = "auto";      // auto | covshift | known | noshift
  std::vector<std::string> methods{"proposed", "normality"};
  std::uint64_t seed = 1;
  int workers = 1;
  std::string out = "out";
  bool lowdim = false;
  std::optional<bool> split;  // default: off
  std::string lambda_rule = "cv";  // cv | plugin
  int resample_m = 0;              // 0: floor(n / 2)
  int resample_B = 500;
  double perb = 1.0;
  std::string catalog;  // optional JSON catalog path
  bool force_zero_draws = false;

  void validate() const {
    auto bad = [](const std::string& m) { throw ContractError("config: " + m); };
    if (!(alpha > 0.0 && alpha < 0.5)) bad("alpha must be in (0, 0.5)");
    if (!(alpha0 > 0.0 && alpha0 <= 0.05)) bad("alpha0 must be in (0, 0.05]");
    if (M < 1) bad("M must be >= 1");
    if (reps < 1) bad("reps must be >= 1");
    if (workers < 1) bad("workers must be >= 1");
    if (tau0 <= 0.0) bad("tau0 must be > 0");
    if (eta0 < 0.0) bad("eta0 must be >= 0");
    if (deltas.empty()) bad("delta list is empty");
    for (double d : deltas)
      if (!(d >= 0.0) || !std::isfinite(d)) bad("delta values must be finite and >= 0");
    for (int v : n)
      if (v < 4) bad("n must be >= 4");
    if (index_set != "coord" && index_set != "chisq") bad("index-set must be coord or chisq");
    if (regime != "auto" && regime != "covshift" && regime != "known" && regime != "noshift")
      bad("regime must be auto, covshift, known or noshift");
    if (lambda_rule != "cv" && lambda_rule != "plugin") bad("lambda rule must be cv or plugin");
    if (methods.empty()) bad("methods list is empty");
    for (const auto& m : methods)
      if (m != "proposed" && m != "normality" && m != "bootstrap" && m != "subsampling") bad("unknown method " + m);
    if (resample_B < 1) bad("resample B must be >= 1");
  }
};

inline void to_json(nlohmann::json& j, const RunConfig& c) {
  j = nlohmann::json{{"setting", c.setting},     {"n", c.n},
                     {"reps", c.reps},           {"delta", c.deltas},
                     {"M", c.M},                 {"alpha", c.alpha},
                     {"alpha0", c.alpha0},       {"tau0", c.tau0},
                     {"eta0", c.eta0},           {"index_set", c.index_set},
                     {"regime", c.regime},       {"methods", c.methods},
                     {"seed", c.seed},           {"workers", c.workers},
                     {"out", c.out},             {"lowdim", c.lowdim},
                     {"lambda_rule", c.lambda_rule}, {"resample_m", c.resample_m},
                     {"resample_B", c.resample_B}, {"perb", c.perb},
                     {"catalog", c.catalog},     {"force_zero_draws", c.force_zero_draws}};
  j["p"] = c.p ? nlohmann::json(*c.p) : nlohmann::json(nullptr);
  j["N_Q"] = c.N_Q ? nlohmann::json(*c.N_Q) : nlohmann::json(nullptr);
  j["split"] = c.split ? nlohmann::json(*c.split) : nlohmann::json(nullptr);
}

/// Fields present in `j` replace those of `c`; absent fields are kept.
inline void from_json(const nlohmann::json& j, RunConfig& c) {
  auto get = [&](const char* k, auto& v) {
    if (j.contains(k) && !j.at(k).is_null()) j.at(k).get_to(v);
  };
  auto get_opt = [&](const char* k, auto& v) {
    if (j.contains(k)) {
      if (j.at(k).is_null()) v.reset();
      else v = j.at(k).get<typename std::decay_t<decltype(v)>::value_type>();
    }
  };
  get("setting", c.setting);
  if (j.contains("n")) {
    if (j.at("n").is_array()) j.at("n").get_to(c.n);
    else if (j.at("n").is_number()) c.n = {j.at("n").get<int>()};
  }
  get_opt("p", c.p);
  get_opt("N_Q", c.N_Q);
  get("reps", c.reps);
  get("delta", c.deltas);
  get("M", c.M);
  get("alpha", c.alpha);
  get("alpha0", c.alpha0);
  get("tau0", c.tau0);
  get("eta0", c.eta0);
  get("index_set", c.index_set);
  get("regime", c.regime);
  get("methods", c.methods);
  get("seed", c.seed);
  get("workers", c.workers);
  get("out", c.out);
  get("lowdim", c.lowdim);
  get_opt("split", c.split);
  get("lambda_rule", c.lambda_rule);
  get("resample_m", c.resample_m);
  get("resample_B", c.resample_B);
  get("perb", c.perb);
  get("catalog", c.catalog);
  get("force_zero_draws", c.force_zero_draws);
}

/// Hash of the configuration fields that affect results (workers and out excluded).
inline std::string config_hash(const RunConfig& c) {
  nlohmann::json j = c;
  j.erase("workers");
  j.erase("out");
  const std::string s = j.dump();
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char ch : s) h = stream_hash(h, ch);
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline int default_workers() {
  if (const char* e = std::getenv("MAXIMIN_WORKERS")) {
    const int v = std::atoi(e);
    if (v >= 1) return v;
  }
  return 1;
}

struct ResultRow {
  std::string setting, regime;
  Index n = 0, p = 0, N_Q = 0, L = 0;
  double delta = 0.0;
  std::string method;
  int reps = 0;  // successful replicates
  std::optional<double> coverage, mean_length, length_ratio, rmse, instability, reject_rate;
  int failures = 0;
  std::uint64_t seed = 0;
};

inline std::string format_cell(const std::optional<double>& v) {
  if (!v || !std::isfinite(*v)) return "NA";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", *v);
  return buf;
}

inline std::string format_double(double v) { return format_cell(std::optional<double>(v)); }

inline std::string to_csv_line(const ResultRow& r) {
  std::ostringstream os;
  os << r.setting << ',' << r.regime << ',' << r.n << ',' << r.p << ',' << r.N_Q << ',' << r.L << ','
     << format_double(r.delta) << ',' << r.method << ',' << r.reps << ',' << format_cell(r.coverage) << ','
     << format_cell(r.mean_length) << ',' << format_cell(r.length_ratio) << ',' << format_cell(r.rmse) << ','
     << format_cell(r.instability) << ',' << format_cell(r.reject_rate) << ',' << r.failures << ',' << r.seed;
  return os.str();
}

inline std::string to_csv(const std::vector<ResultRow>& rows) {
  std::string s = std::string(kCsvHeader) + "\n";
  for (const auto& r : rows) s += to_csv_line(r) + "\n";
  return s;
}

inline nlohmann::json row_to_json(const ResultRow& r) {
  auto opt = [](const std::optional<double>& v) {
    return v && std::isfinite(*v) ? nlohmann::json(*v) : nlohmann::json(nullptr);
  };
  return {{"setting", r.setting},   {"regime", r.regime},     {"n", r.n},
          {"p", r.p},               {"N_Q", r.N_Q},           {"L", r.L},
          {"delta", r.delta},       {"method", r.method},     {"reps", r.reps},
          {"coverage", opt(r.coverage)}, {"mean_length", opt(r.mean_length)},
          {"length_ratio", opt(r.length_ratio)}, {"rmse", opt(r.rmse)},
          {"instability", opt(r.instability)}, {"reject_rate", opt(r.reject_rate)},
          {"failures", r.failures}, {"seed", r.seed}};
}

// ---------------------------------------------------------------------------
// Per-replicate pipeline
// ---------------------------------------------------------------------------

struct PipelineOptions {
  Regime regime = Regime::no_shift;
  bool lowdim = false;
  bool split = false;
  LambdaRule lambda_rule = LambdaRule::cv;
  double tau0 = 0.2;
};

/// Gamma estimate and one debiased functional per group for a replicate.
struct ReplicateFit {
  GammaEstimate gamma;
  std::vector<FunctionalEstimate> functionals;
};

inline ReplicateFit fit_replicate(const MultiSourceData& data, const VectorXd& x_new, const PipelineOptions& o,
                                  std::uint64_t split_seed) {
  ReplicateFit f;
  GammaTuning t;
  t.lowdim = o.lowdim;
  t.split = o.split;
  t.tau0 = o.tau0;
  t.split_seed = split_seed;
  t.lasso.rule = o.lambda_rule;
  f.gamma = estimate_gamma(data, o.regime, t);
  const Index p = data.dim();
  for (Index l = 0; l < data.num_groups(); ++l) {
    const auto& g = data.groups[static_cast<std::size_t>(l)];
    const Index n = g.x.rows();
    VectorXd b;
    double sd;
    if (!f.gamma.split) {
      b = f.gamma.b_init[static_cast<std::size_t>(l)];  // full-data fit already available
      sd = f.gamma.sigma_hat[static_cast<std::size_t>(l)];
    } else {
      const LassoFit fit = o.lowdim ? least_squares(g.x, g.y) : tuned_lasso(g.x, g.y, t.lasso);
      b = fit.coefficients;
      sd = fit.noise_sd;
    }
    VectorXd v;
    if (o.lowdim) {
      v = projection_direction_lowdim(gram(g.x), x_new).direction;
    } else {
      v = projection_direction_linear(g.x, x_new, default_eta(n, p, x_new), default_tau(n)).direction;
    }
    f.functionals.push_back(debiased_linear_functional(g.x, g.y, b, v, x_new, sd, l));
  }
  return f;
}

namespace detail {

struct RepOutcome {
  bool ok = false;
  std::string error;
  std::vector<double> point;         // per delta
  std::vector<double> norm_point;    // per delta; magging in low-dim mode
  std::vector<double> prop_length;   // per delta
  std::vector<char> prop_cover;      // per delta
  std::vector<char> prop_reject;     // per delta
  std::vector<double> instability;   // per delta
  std::optional<double> boot_point;
  std::optional<Interval> boot, subs;
};

inline bool has_method(const RunConfig& c, const std::string& m) {
  return std::find(c.methods.begin(), c.methods.end(), m) != c.methods.end();
}

inline Regime resolve_regime(const std::string& r, bool shift) {
  if (r == "covshift") return Regime::covshift;
  if (r == "known") return Regime::known_sigma;
  if (r == "noshift") return Regime::no_shift;
  return shift ? Regime::covshift : Regime::no_shift;
}

/// Runs `job(i)` for i in [0, count) on `workers` threads; outputs are stored by index.
inline void parallel_for(int count, int workers, const std::function<void(int)>& job) {
  if (workers <= 1 || count <= 1) {
    for (int i = 0; i < count; ++i) job(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  const int nthreads = std::min(workers, count);
  for (int w = 0; w < nthreads; ++w)
    pool.emplace_back([&] {
      for (int i = next.fetch_add(1); i < count; i = next.fetch_add(1)) job(i);
    });
  for (auto& t : pool) t.join();
}

}  // namespace detail

struct RunResult {
  std::vector<ResultRow> rows;
  nlohmann::json manifest;
};

inline std::map<std::string, SettingTemplate> load_catalog(const RunConfig& c) {
  auto cat = default_catalog(c.perb);
  if (!c.catalog.empty()) {
    std::ifstream in(c.catalog);
    if (!in) throw ContractError("config: cannot open catalog " + c.catalog);
    for (auto& [id, t] : catalog_from_json(nlohmann::json::parse(in))) cat[id] = std::move(t);
  }
  return cat;
}

/**
 * Runs every (n, delta) cell of the configuration. Replicate r draws its data
 * from stream (seed, r) independently of n, so larger n extends the same
 * rows; draws S^[m] are shared across delta values within a replicate.
 */
inline RunResult run(const RunConfig& cfg, std::ostream* progress = &std::cerr) {
  cfg.validate();
  const auto t_start = std::chrono::steady_clock::now();
  const auto catalog = load_catalog(cfg);
  const auto it = catalog.find(cfg.setting);
  if (it == catalog.end()) throw ContractError("config: unknown setting '" + cfg.setting + "'");
  const SettingTemplate& tmpl = it->second;
  std::vector<int> n_list = cfg.n.empty() ? std::vector<int>{tmpl.n} : cfg.n;

  const bool want_prop = detail::has_method(cfg, "proposed");
  const bool want_norm = detail::has_method(cfg, "normality");
  const bool want_boot = detail::has_method(cfg, "bootstrap");
  const bool want_subs = detail::has_method(cfg, "subsampling");
  const std::size_t nd = cfg.deltas.size();
  const IndexSetRule rule = cfg.index_set == "chisq" ? IndexSetRule::chisq : IndexSetRule::coordinate;

  RunResult result;
  for (int n : n_list) {
    SettingOverrides ov;
    ov.n = n;
    ov.p = cfg.p;
    ov.N_Q = cfg.N_Q;
    ov.reps = cfg.reps;
    const SettingSpec spec = build_setting(tmpl, ov);
    const Regime regime = detail::resolve_regime(cfg.regime, spec.shift);
    PipelineOptions po;
    po.regime = regime;
    po.lowdim = cfg.lowdim;
    po.split = cfg.split.value_or(false);
    po.lambda_rule = cfg.lambda_rule == "plugin" ? LambdaRule::plugin : LambdaRule::cv;
    po.tau0 = cfg.tau0;
    std::vector<Truth> truth;
    for (double d : cfg.deltas) truth.push_back(compute_truth(spec, d));
    const Index resample_m = cfg.resample_m > 0 ? cfg.resample_m : std::max<Index>(2, spec.n / 2);
    const ReplicateGenerator gen(spec);

    std::vector<detail::RepOutcome> out(static_cast<std::size_t>(cfg.reps));
    std::atomic<int> done{0};
    std::mutex log_mu;
    detail::parallel_for(cfg.reps, cfg.workers, [&](int r) {
      auto& o = out[static_cast<std::size_t>(r)];
      const auto rid = static_cast<std::uint64_t>(r);
      try {
        const MultiSourceData data = gen(RngStream(cfg.seed, stream_hash(rid, 0xDA7A)));
        const ReplicateFit fit = fit_replicate(data, spec.x_new, po, stream_hash(cfg.seed, rid));
        std::vector<VeclVector> draws;
        if (want_prop) {
          if (cfg.force_zero_draws) {
            draws.assign(static_cast<std::size_t>(cfg.M),
                         VeclVector(spec.L, VectorXd::Zero(vecl_length(spec.L))));
          } else {
            draws = draw_perturbations(fit.gamma, cfg.M, RngStream(cfg.seed, stream_hash(rid, 0x5A3B)));
          }
        }
        for (std::size_t di = 0; di < nd; ++di) {
          const double delta = cfg.deltas[di];
          const SimplexWeight w = min_quadratic_simplex(fit.gamma.gamma_hat, delta);
          o.point.push_back(point_estimate(w, fit.functionals));
          o.norm_point.push_back(cfg.lowdim ? detail::magging_functional(data.groups, spec.x_new, delta)
                                            : o.point.back());
          if (want_prop) {
            DenseNetParams prm;
            prm.M = cfg.M;
            prm.alpha = cfg.alpha;
            prm.alpha0 = cfg.alpha0;
            prm.eta0 = cfg.eta0;
            prm.delta = delta;
            prm.rule = rule;
            const AggregatedCI ci = densenet_ci(fit.gamma, fit.functionals, draws, prm);
            o.prop_length.push_back(ci.length());
            o.prop_cover.push_back(!test_null(ci, truth[di].value));
            o.prop_reject.push_back(test_null(ci, 0.0));
            o.instability.push_back(instability_measure(fit.gamma, delta, draws));
          }
        }
        if (want_boot || want_subs) {
          o.boot_point = detail::magging_functional(data.groups, spec.x_new);
          if (want_boot)
            o.boot = resample_ci(data, spec.x_new, resample_m, cfg.resample_B, true, cfg.alpha,
                                 RngStream(cfg.seed, stream_hash(rid, 0xB007)));
          if (want_subs)
            o.subs = resample_ci(data, spec.x_new, resample_m, cfg.resample_B, false, cfg.alpha,
                                 RngStream(cfg.seed, stream_hash(rid, 0x5B5A)));
        }
        o.ok = true;
      } catch (const std::exception& e) {
        o = detail::RepOutcome{};
        o.error = e.what();
        std::lock_guard lk(log_mu);
        if (progress) *progress << "[rep " << r << "] failed: " << e.what() << "\n";
      }
      const int k = ++done;
      if (progress && (k % 50 == 0 || k == cfg.reps)) {
        std::lock_guard lk(log_mu);
        *progress << "setting " << spec.id << " n=" << n << ": " << k << "/" << cfg.reps << " replicates\n";
      }
    });

    std::vector<const detail::RepOutcome*> good;
    for (const auto& o : out)
      if (o.ok) good.push_back(&o);
    const int failures = cfg.reps - static_cast<int>(good.size());
    const double ng = static_cast<double>(good.size());

    auto base_row = [&](double delta, const std::string& method) {
      ResultRow row;
      row.setting = spec.id;
      row.regime = to_string(regime);
      row.n = spec.n;
      row.p = spec.p;
      row.N_Q = spec.N_Q;
      row.L = spec.L;
      row.delta = delta;
      row.method = method;
      row.reps = static_cast<int>(good.size());
      row.failures = failures;
      row.seed = cfg.seed;
      return row;
    };
    auto mean_of = [&](auto&& f) -> std::optional<double> {
      if (good.empty()) return std::nullopt;
      double s = 0.0;
      for (const auto* o : good) s += f(*o);
      return s / ng;
    };

    for (std::size_t di = 0; di < nd; ++di) {
      const double delta = cfg.deltas[di];
      const double tv = truth[di].value;
      std::vector<double> pts;
      for (const auto* o : good) pts.push_back(o->norm_point[di]);
      const auto rmse = mean_of([&](const auto& o) { return (o.point[di] - tv) * (o.point[di] - tv); });
      const std::optional<double> rmse_v = rmse ? std::optional<double>(std::sqrt(*rmse)) : std::nullopt;
      std::optional<double> norm_len;
      std::vector<Interval> norm_ci = oracle_normality_ci(pts, cfg.alpha);
      if (!norm_ci.empty()) norm_len = norm_ci.front().length();

      if (want_prop) {
        ResultRow row = base_row(delta, "proposed");
        row.coverage = mean_of([&](const auto& o) { return o.prop_cover[di] ? 1.0 : 0.0; });
        row.mean_length = mean_of([&](const auto& o) { return o.prop_length[di]; });
        if (row.mean_length && norm_len && *norm_len > 0.0) row.length_ratio = *row.mean_length / *norm_len;
        row.rmse = rmse_v;
        row.instability = mean_of([&](const auto& o) { return o.instability[di]; });
        row.reject_rate = mean_of([&](const auto& o) { return o.prop_reject[di] ? 1.0 : 0.0; });
        result.rows.push_back(row);
      }
      if (want_norm) {
        ResultRow row = base_row(delta, "normality");
        if (!norm_ci.empty()) {
          double cov = 0.0, rej = 0.0;
          for (const auto& iv : norm_ci) {
            cov += iv.contains(tv) ? 1.0 : 0.0;
            rej += iv.contains(0.0) ? 0.0 : 1.0;
          }
          row.coverage = cov / ng;
          row.mean_length = norm_len;
          row.length_ratio = 1.0;
          row.reject_rate = rej / ng;
        }
        const auto nms = mean_of([&](const auto& o) { return (o.norm_point[di] - tv) * (o.norm_point[di] - tv); });
        if (nms) row.rmse = std::sqrt(*nms);
        result.rows.push_back(row);
      }
      if (delta == 0.0) {
        for (const auto& [name, want, pick] :
             {std::tuple{"bootstrap", want_boot, &detail::RepOutcome::boot},
              std::tuple{"subsampling", want_subs, &detail::RepOutcome::subs}}) {
          if (!want) continue;
          ResultRow row = base_row(delta, name);
          row.coverage = mean_of([&](const auto& o) { return (o.*pick)->contains(tv) ? 1.0 : 0.0; });
          row.mean_length = mean_of([&](const auto& o) { return (o.*pick)->length(); });
          if (row.mean_length && norm_len && *norm_len > 0.0) row.length_ratio = *row.mean_length / *norm_len;
          const auto ms = mean_of([&](const auto& o) { return (*o.boot_point - tv) * (*o.boot_point - tv); });
          if (ms) row.rmse = std::sqrt(*ms);
          row.reject_rate = mean_of([&](const auto& o) { return (o.*pick)->contains(0.0) ? 0.0 : 1.0; });
          result.rows.push_back(row);
        }
      }
    }
  }

  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : result.rows) rows.push_back(row_to_json(r));
  result.manifest = {{"config", nlohmann::json(cfg)},
                     {"config_hash", config_hash(cfg)},
                     {"version", kVersion},
                     {"wall_clock_seconds", wall},
                     {"csv_header", kCsvHeader},
                     {"rows", rows}};
  return result;
}

inline void write_outputs(const RunResult& res, const std::string& dir, const std::string& csv_name = "results.csv") {
  std::filesystem::create_directories(dir);
  {
    std::ofstream f(std::filesystem::path(dir) / csv_name);
    if (!f) throw std::runtime_error("cannot write " + dir + "/" + csv_name);
    f << to_csv(res.rows);
  }
  std::ofstream m(std::filesystem::path(dir) / "manifest.json");
  if (!m) throw std::runtime_error("cannot write " + dir + "/manifest.json");
  m << res.manifest.dump(2) << "\n";
}

/// RMSE of the point estimate over an n grid x delta grid (no sampling step).
inline RunResult rmse_table(RunConfig cfg, std::ostream* progress = &std::cerr) {
  cfg.methods = {"normality"};
  RunResult r = run(cfg, progress);
  nlohmann::json rows = nlohmann::json::array();
  for (auto& row : r.rows) {
    row.method = "point";
    row.coverage.reset();
    row.mean_length.reset();
    row.length_ratio.reset();
    row.reject_rate.reset();
    rows.push_back(row_to_json(row));
  }
  r.manifest["rows"] = rows;
  return r;
}

}  // namespace maximin
