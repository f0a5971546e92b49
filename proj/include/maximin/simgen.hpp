#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "maximin/aggregation.hpp"
#include "maximin/core_linalg.hpp"
#include "maximin/densenet.hpp"
#include "maximin/errors.hpp"
#include "maximin/gamma.hpp"
#include "maximin/lasso.hpp"
#include "maximin/rng.hpp"

namespace maximin {

// ---------------------------------------------------------------------------
// Setting templates
//
// Coefficients, x_new and covariance blocks are written in a fixed reference
// index space (1-based, `p_ref` coordinates, 500 for every built-in setting).
// When a run overrides p, indices are remapped:
//   * "tail" indices (within 10 of p_ref) move to idx - p_ref + p;
//   * other indices are kept when idx <= p and idx is below the first
//     remapped tail index of the setting; otherwise they are dropped.
// ---------------------------------------------------------------------------

struct SparseEntry {
  int index = 0;  // 1-based
  double value = 0.0;
};

struct CovBlock {
  int first = 0;  // inclusive, 1-based
  int last = 0;
  double value = 0.0;  // off-diagonal value inside the block
};

struct ShiftSpec {
  double diag = 1.0;
  std::vector<CovBlock> blocks;  // everything else copies the source covariance
};

struct SettingTemplate {
  std::string id;
  std::string description;
  int L = 2;
  int p_ref = 500;
  int p = 500;
  int n = 500;
  int N_Q = 2000;
  int reps = 500;
  double ar_rho = 0.6;  // source covariance rho^|j-k|; 0 gives the identity
  std::vector<double> noise_sd;
  std::optional<ShiftSpec> shift;  // absent: target covariance equals the source one
  std::vector<std::vector<SparseEntry>> coefficients;
  std::vector<SparseEntry> x_new;
};

inline void to_json(nlohmann::json& j, const SparseEntry& e) { j = nlohmann::json::array({e.index, e.value}); }
inline void from_json(const nlohmann::json& j, SparseEntry& e) {
  e.index = j.at(0).get<int>();
  e.value = j.at(1).get<double>();
}
inline void to_json(nlohmann::json& j, const CovBlock& b) {
  j = nlohmann::json{{"first", b.first}, {"last", b.last}, {"value", b.value}};
}
inline void from_json(const nlohmann::json& j, CovBlock& b) {
  j.at("first").get_to(b.first);
  j.at("last").get_to(b.last);
  j.at("value").get_to(b.value);
}
inline void to_json(nlohmann::json& j, const ShiftSpec& s) { j = nlohmann::json{{"diag", s.diag}, {"blocks", s.blocks}}; }
inline void from_json(const nlohmann::json& j, ShiftSpec& s) {
  j.at("diag").get_to(s.diag);
  j.at("blocks").get_to(s.blocks);
}
inline void to_json(nlohmann::json& j, const SettingTemplate& t) {
  j = nlohmann::json{{"id", t.id},       {"description", t.description},
                     {"L", t.L},         {"p_ref", t.p_ref},
                     {"p", t.p},         {"n", t.n},
                     {"N_Q", t.N_Q},     {"reps", t.reps},
                     {"ar_rho", t.ar_rho}, {"noise_sd", t.noise_sd},
                     {"coefficients", t.coefficients}, {"x_new", t.x_new}};
  j["shift"] = t.shift ? nlohmann::json(*t.shift) : nlohmann::json(nullptr);
}
inline void from_json(const nlohmann::json& j, SettingTemplate& t) {
  j.at("id").get_to(t.id);
  t.description = j.value("description", std::string{});
  j.at("L").get_to(t.L);
  t.p_ref = j.value("p_ref", 500);
  t.p = j.value("p", t.p_ref);
  t.n = j.value("n", 500);
  t.N_Q = j.value("N_Q", 2000);
  t.reps = j.value("reps", 500);
  t.ar_rho = j.value("ar_rho", 0.6);
  t.noise_sd = j.value("noise_sd", std::vector<double>(static_cast<std::size_t>(t.L), 1.0));
  j.at("coefficients").get_to(t.coefficients);
  j.at("x_new").get_to(t.x_new);
  if (j.contains("shift") && !j.at("shift").is_null()) t.shift = j.at("shift").get<ShiftSpec>();
}

namespace detail {

inline std::vector<SparseEntry> range_entries(int first, int last, auto&& f) {
  std::vector<SparseEntry> out;
  for (int j = first; j <= last; ++j) out.push_back({j, f(j)});
  return out;
}

inline void set_entry(std::vector<SparseEntry>& v, int idx, double val) {
  for (auto& e : v)
    if (e.index == idx) {
      e.value = val;
      return;
    }
  v.push_back({idx, val});
}

inline std::vector<SparseEntry> merged(std::vector<SparseEntry> a, const std::vector<SparseEntry>& b) {
  for (const auto& e : b) set_entry(a, e.index, e.value);
  return a;
}

inline SettingTemplate base_template(const std::string& id, int L, std::string desc) {
  SettingTemplate t;
  t.id = id;
  t.L = L;
  t.description = std::move(desc);
  t.noise_sd.assign(static_cast<std::size_t>(L), 1.0);
  return t;
}

inline std::vector<SparseEntry> setting1_b1() {
  auto b = range_entries(1, 10, [](int j) { return j / 40.0; });
  b.push_back({22, 1.0});
  b.push_back({23, 1.0});
  b.push_back({499, 0.1});
  b.push_back({500, 0.1});
  return b;
}

inline std::pair<std::vector<SparseEntry>, std::vector<SparseEntry>> setting2_b() {
  auto b1 = setting1_b1();
  auto b2 = b1;
  set_entry(b2, 500, 1.0);
  set_entry(b1, 498, 0.5);
  set_entry(b1, 499, -0.5);
  set_entry(b1, 500, -0.5);
  return {b1, b2};
}

inline SettingTemplate i_setting(int k, double sigma_irr, std::uint64_t seed) {
  SettingTemplate t = base_template("I-" + std::to_string(k), 4,
                                    "Identity covariances, L=4, perturbed leading coefficients");
  t.ar_rho = 0.0;
  RngStream rng(seed, 0x1C0EFF);
  for (int l = 0; l < 4; ++l) {
    std::vector<SparseEntry> b;
    for (int j = 1; j <= 10; ++j) b.push_back({j, j / 20.0 + (j <= 5 ? sigma_irr * rng.normal() : 0.0)});
    t.coefficients.push_back(b);
  }
  t.x_new = range_entries(1, 5, [](int) { return 1.0; });
  return t;
}

}  // namespace detail

/// Built-in catalog. `perb` parameterizes setting 5.
inline std::map<std::string, SettingTemplate> default_catalog(double perb = 1.0) {
  using detail::base_template;
  using detail::range_entries;
  using detail::set_entry;
  std::map<std::string, SettingTemplate> cat;
  auto add = [&](SettingTemplate t) { cat[t.id] = std::move(t); };
  const ShiftSpec shift_09{1.5, {{1, 5, 0.9}, {499, 500, 0.9}}};

  {
    auto t = base_template("1", 2, "L=2, no covariate shift");
    auto b1 = detail::setting1_b1();
    auto b2 = b1;
    set_entry(b2, 500, 0.3);
    t.coefficients = {b1, b2};
    t.x_new = {{500, 1.0}};
    add(t);
  }
  {
    auto t = base_template("2", 2, "L=2, covariate shift");
    auto [b1, b2] = detail::setting2_b();
    t.coefficients = {b1, b2};
    t.x_new = range_entries(498, 500, [](int) { return 1.0; });
    t.shift = shift_09;
    add(t);
  }
  for (const char* v : {"3a", "3b"}) {
    auto t = base_template(v, 2, std::string(v) == "3a" ? "L=2, covariate shift" : "L=2, no covariate shift");
    auto [b1, b2] = detail::setting2_b();
    t.coefficients = {b1, b2};
    t.x_new = {{499, 1.0}, {500, 1.0}};
    if (std::string(v) == "3a") t.shift = ShiftSpec{1.5, {{1, 5, 0.6}, {499, 500, -0.9}}};
    add(t);
  }
  for (auto [name, L] : {std::pair{"4a", 2}, std::pair{"4b", 5}, std::pair{"4c", 10}}) {
    auto t = base_template(name, L, "Varying L, covariate shift");
    auto head = range_entries(1, 10, [](int j) { return j / 40.0; });
    const std::vector<SparseEntry> tail{{498, 0.5}, {499, -0.5}, {500, -0.5}};
    t.coefficients.push_back(detail::merged(head, tail));
    for (int l = 2; l <= L; ++l) {
      std::vector<SparseEntry> b;
      for (int j = 1; j <= 10; ++j) b.push_back({10 * l + j, j / 40.0});
      for (const auto& e : tail) b.push_back({e.index, e.value / std::pow(2.0, l - 1)});
      t.coefficients.push_back(b);
    }
    t.x_new = range_entries(498, 500, [](int) { return 1.0; });
    t.shift = shift_09;
    add(t);
  }
  {
    auto t = base_template("5", 2, "Perturbation setting, no covariate shift");
    auto b1 = range_entries(1, 10, [](int j) { return j / 40.0; });
    for (int j = 11; j <= 20; ++j) b1.push_back({j, (10 - j) / 40.0});
    b1.push_back({21, 0.2});
    b1.push_back({22, 1.0});
    b1.push_back({23, 1.0});
    auto b2 = range_entries(1, 10, [&](int j) { return j / 40.0 + perb / std::sqrt(300.0); });
    b2.push_back({21, 0.5});
    b2.push_back({22, 0.2});
    b2.push_back({23, 0.2});
    t.coefficients = {b1, b2};
    t.x_new = range_entries(1, 5, [](int j) { return j / 5.0; });
    add(t);
  }
  for (auto [name, last] : {std::pair{"6a", -0.2}, std::pair{"6b", -0.4}}) {
    auto t = base_template(name, 2, "Opposite effects, no covariate shift");
    auto b1 = detail::setting1_b1();
    auto b2 = b1;
    set_entry(b1, 499, 0.0);
    set_entry(b1, 500, 0.2);
    set_entry(b2, 500, last);
    t.coefficients = {b1, b2};
    t.x_new = {{500, 1.0}};
    add(t);
  }
  {
    const ShiftSpec shift7{1.1, {{1, 6, 0.75}}};
    auto b1 = range_entries(1, 10, [](int j) { return j / 10.0; });
    for (int j = 11; j <= 20; ++j) b1.push_back({j, (10 - j) / 10.0});
    b1.push_back({21, 0.2});
    b1.push_back({22, 1.0});
    b1.push_back({23, 1.0});
    auto group_l = [&](int l) {
      auto b = range_entries(1, 10, [&](int j) { return j / 10.0 + 0.1 * (l - 1) / std::sqrt(300.0); });
      for (int j = 11; j <= 20; ++j) b.push_back({j, -0.3 * (l - 1) / std::sqrt(300.0)});
      b.push_back({21, 0.5 * (l - 1)});
      b.push_back({22, 0.2 * (l - 1)});
      b.push_back({23, 0.2 * (l - 1)});
      return b;
    };
    auto t = base_template("7a", 5, "L=5, covariate shift");
    t.coefficients.push_back(b1);
    for (int l = 2; l <= 5; ++l) t.coefficients.push_back(group_l(l));
    t.x_new = range_entries(21, 23, [](int) { return 1.0; });
    t.shift = shift7;
    add(t);

    auto u = base_template("7b", 5, "L=5, covariate shift, random coefficients and x_new");
    u.coefficients = {b1, group_l(2)};
    RngStream rng(7, 0x7B);
    for (int l = 3; l <= 5; ++l) u.coefficients.push_back(range_entries(1, 6, [&](int) { return rng.normal(); }));
    // Covariance 0.5^(1+|i-j|)/25 = (0.5/25) * AR(0.5), drawn by the AR recursion.
    RngStream xr = rng.substream(1);
    std::vector<double> x(500);
    x[0] = xr.normal();
    for (std::size_t j = 1; j < x.size(); ++j) x[j] = 0.5 * x[j - 1] + std::sqrt(0.75) * xr.normal();
    const double scale = std::sqrt(0.5 / 25.0);
    u.x_new = range_entries(1, 500, [&](int j) { return scale * x[static_cast<std::size_t>(j - 1)]; });
    u.shift = shift7;
    add(u);
  }
  const std::pair<double, std::uint64_t> irr[] = {{0.05, 42}, {0.05, 20}, {0.10, 36},
                                                  {0.15, 17}, {0.20, 12}, {0.25, 31}};
  for (int k = 1; k <= 6; ++k) add(detail::i_setting(k, irr[k - 1].first, irr[k - 1].second));
  {
    auto make7 = [&](const std::string& id) {
      auto t = base_template(id, 2, "Identity covariances, L=2, non-regular weight");
      t.ar_rho = 0.0;
      auto b1 = range_entries(1, 10, [](int j) { return j / 40.0; });
      auto b2 = b1;
      set_entry(b1, 1, 2.0);
      set_entry(b2, 1, -0.03);
      t.coefficients = {b1, b2};
      t.x_new = {{1, 1.0}};
      return t;
    };
    add(make7("I-7"));
    auto t8 = make7("I-8");
    for (auto& b : t8.coefficients)
      for (int j = 11; j <= 20; ++j) b.push_back({j, (10 - j) / 40.0});
    add(t8);
    auto t9 = make7("I-9");
    for (auto& b : t9.coefficients)
      for (int j = 2; j <= 30; ++j) set_entry(b, j, 1.0);
    add(t9);
    auto t10 = base_template("I-10", 2, "Identity covariances, L=2, regular");
    t10.ar_rho = 0.0;
    t10.coefficients = {range_entries(1, 10, [](int j) { return j / 20.0; }),
                        range_entries(1, 10, [](int j) { return -j / 20.0; })};
    t10.x_new = range_entries(1, 5, [](int j) { return j / 5.0; });
    add(t10);
  }
  return cat;
}

inline nlohmann::json catalog_to_json(const std::map<std::string, SettingTemplate>& cat) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& [id, t] : cat) j.push_back(t);
  return j;
}

inline std::map<std::string, SettingTemplate> catalog_from_json(const nlohmann::json& j) {
  std::map<std::string, SettingTemplate> cat;
  for (const auto& e : j) {
    auto t = e.get<SettingTemplate>();
    detail::require(static_cast<int>(t.coefficients.size()) == t.L, "catalog: entry " + t.id + " needs L coefficient lists");
    detail::require(static_cast<int>(t.noise_sd.size()) == t.L, "catalog: entry " + t.id + " needs L noise levels");
    cat[t.id] = std::move(t);
  }
  return cat;
}

// ---------------------------------------------------------------------------
// Materialized settings
// ---------------------------------------------------------------------------

struct SettingOverrides {
  std::optional<int> n, p, N_Q, reps;
};

struct SettingSpec {
  std::string id;
  Index L = 0, p = 0, n = 0, N_Q = 0, reps = 0;
  MatrixXd b;                // p x L
  SymMatrix sigma;           // source covariance
  SymMatrix sigma_q;         // target covariance (== sigma without shift)
  bool shift = false;
  VectorXd x_new;
  std::vector<double> noise_sd;
};

namespace detail {

struct IndexMap {
  int p_ref, p, tail_start;
  int first_tail;  // smallest remapped tail index (p + 1 if none)

  std::optional<int> operator()(int idx) const {
    if (p == p_ref) return idx;
    if (idx >= tail_start) {
      const int r = idx - p_ref + p;
      return r >= 1 ? std::optional<int>(r) : std::nullopt;
    }
    if (idx <= p && idx < first_tail) return idx;
    return std::nullopt;
  }
};

inline IndexMap make_index_map(const SettingTemplate& t, int p) {
  IndexMap m{t.p_ref, p, t.p_ref - 9, p + 1};
  auto visit = [&](int idx) {
    if (idx >= m.tail_start) m.first_tail = std::min(m.first_tail, idx - t.p_ref + p);
  };
  for (const auto& b : t.coefficients)
    for (const auto& e : b) visit(e.index);
  for (const auto& e : t.x_new) visit(e.index);
  if (t.shift)
    for (const auto& blk : t.shift->blocks) {
      visit(blk.first);
      visit(blk.last);
    }
  return m;
}

inline void check_pd(const SymMatrix& s, const std::string& what) {
  const double lo = min_eigenvalue(s);
  if (!(lo > 1e-8)) throw NumericError(what + " is not positive definite (min eigenvalue " + std::to_string(lo) + ")");
}

}  // namespace detail

inline SettingSpec build_setting(const SettingTemplate& t, const SettingOverrides& o = {}) {
  SettingSpec s;
  s.id = t.id;
  s.L = t.L;
  s.p = o.p.value_or(t.p);
  s.n = o.n.value_or(t.n);
  s.N_Q = o.N_Q.value_or(t.N_Q);
  s.reps = o.reps.value_or(t.reps);
  detail::require(s.L >= 1 && s.p >= 1 && s.n >= 2 && s.N_Q >= 0 && s.reps >= 1, "build_setting: bad dimensions");
  detail::require(static_cast<Index>(t.coefficients.size()) == s.L, "build_setting: need L coefficient lists");
  const auto map = detail::make_index_map(t, static_cast<int>(s.p));

  s.b = MatrixXd::Zero(s.p, s.L);
  for (Index l = 0; l < s.L; ++l)
    for (const auto& e : t.coefficients[static_cast<std::size_t>(l)])
      if (auto j = map(e.index)) s.b(*j - 1, l) = e.value;
  s.x_new = VectorXd::Zero(s.p);
  for (const auto& e : t.x_new)
    if (auto j = map(e.index)) s.x_new[*j - 1] = e.value;

  s.sigma = SymMatrix(s.p);
  for (Index i = 0; i < s.p; ++i)
    for (Index j = 0; j <= i; ++j)
      s.sigma.set(i, j, t.ar_rho == 0.0 ? (i == j ? 1.0 : 0.0) : std::pow(t.ar_rho, static_cast<double>(i - j)));
  s.sigma_q = s.sigma;
  s.shift = t.shift.has_value();
  if (t.shift) {
    for (Index i = 0; i < s.p; ++i) s.sigma_q.set(i, i, t.shift->diag);
    for (const auto& blk : t.shift->blocks) {
      std::vector<int> idx;
      for (int j = blk.first; j <= blk.last; ++j)
        if (auto r = map(j)) idx.push_back(*r - 1);
      for (std::size_t a = 0; a < idx.size(); ++a)
        for (std::size_t c = 0; c < a; ++c) s.sigma_q.set(idx[a], idx[c], blk.value);
    }
  }
  s.noise_sd = t.noise_sd;
  detail::check_pd(s.sigma, "source covariance of setting " + t.id);
  detail::check_pd(s.sigma_q, "target covariance of setting " + t.id);
  return s;
}

inline SettingSpec build_setting(const std::string& id, const SettingOverrides& o = {},
                                 const std::map<std::string, SettingTemplate>& catalog = default_catalog()) {
  const auto it = catalog.find(id);
  if (it == catalog.end()) throw ContractError("build_setting: unknown setting '" + id + "'");
  return build_setting(it->second, o);
}

struct Truth {
  SymMatrix gamma;  // B' S_Q B
  SimplexWeight weight;
  VectorXd beta;
  double value = 0.0;  // x_new' beta
};

inline Truth compute_truth(const SettingSpec& s, double delta) {
  Truth t;
  t.gamma = regression_covariance(s.b, s.sigma_q);
  t.weight = min_quadratic_simplex(t.gamma, delta);
  t.beta = s.b * t.weight.weights;
  t.value = s.x_new.dot(t.beta);
  return t;
}

/**
 * Draws replicates of a setting. Group l uses substreams (l, 0) for rows and
 * (l, 1) for noise, the target uses (L, 0); rows are generated sequentially,
 * so a smaller n gives a prefix of a larger one.
 */
class ReplicateGenerator {
 public:
  explicit ReplicateGenerator(const SettingSpec& s)
      : spec_(s), source_(VectorXd::Zero(s.p), s.sigma), target_(VectorXd::Zero(s.p), s.sigma_q) {}

  const SettingSpec& spec() const { return spec_; }

  MultiSourceData operator()(const RngStream& rng) const {
    MultiSourceData d;
    for (Index l = 0; l < spec_.L; ++l) {
      RngStream rows = rng.substream(stream_hash(static_cast<std::uint64_t>(l), 0));
      RngStream noise = rng.substream(stream_hash(static_cast<std::uint64_t>(l), 1));
      GroupData g;
      g.x = source_.draw_rows(spec_.n, rows);
      g.y = g.x * spec_.b.col(l);
      const double sd = spec_.noise_sd[static_cast<std::size_t>(l)];
      for (Index i = 0; i < spec_.n; ++i) {
        const double e = noise.normal();
        if (sd != 0.0) g.y[i] += sd * e;
      }
      d.groups.push_back(std::move(g));
    }
    if (spec_.N_Q > 0) {
      RngStream tr = rng.substream(stream_hash(static_cast<std::uint64_t>(spec_.L), 0));
      d.target_x = target_.draw_rows(spec_.N_Q, tr);
    }
    if (spec_.shift) d.known_sigma_q = spec_.sigma_q;
    return d;
  }

 private:
  SettingSpec spec_;
  MvnSampler source_;
  MvnSampler target_;
};

inline MultiSourceData generate_replicate(const SettingSpec& s, const RngStream& rng) {
  return ReplicateGenerator(s)(rng);
}

/// estimate +- z_{alpha/2} * SD across replicates (sample SD, n - 1 denominator).
inline std::vector<Interval> oracle_normality_ci(std::span<const double> estimates, double alpha = 0.05) {
  detail::require(alpha > 0.0 && alpha < 1.0, "oracle_normality_ci: alpha must be in (0, 1)");
  std::vector<Interval> out;
  if (estimates.empty()) return out;
  double mean = 0.0;
  for (double e : estimates) mean += e;
  mean /= static_cast<double>(estimates.size());
  double ss = 0.0;
  for (double e : estimates) ss += (e - mean) * (e - mean);
  const double sd = estimates.size() > 1 ? std::sqrt(ss / static_cast<double>(estimates.size() - 1)) : 0.0;
  const double half = normal_upper_quantile(alpha / 2.0) * sd;
  for (double e : estimates) out.push_back({e - half, e + half});
  return out;
}

namespace detail {

/// x_new' beta for magging on OLS fits; the covariance pools group rows.
inline double magging_functional(const std::vector<GroupData>& groups, const VectorXd& x_new, double delta = 0.0) {
  const Index p = x_new.size();
  MatrixXd b(p, static_cast<Index>(groups.size()));
  MatrixXd s = MatrixXd::Zero(p, p);
  Index total = 0;
  for (std::size_t l = 0; l < groups.size(); ++l) {
    b.col(static_cast<Index>(l)) = least_squares(groups[l].x, groups[l].y).coefficients;
    s.noalias() += groups[l].x.transpose() * groups[l].x;
    total += groups[l].x.rows();
  }
  const SymMatrix sig(MatrixXd(s / static_cast<double>(total)));
  if (delta == 0.0) return x_new.dot(magging(b, sig).beta);
  return x_new.dot(b * min_quadratic_simplex(regression_covariance(b, sig), delta).weights);
}

}  // namespace detail

/**
 * m-out-of-n bootstrap (with replacement) or subsampling (without) for the
 * magging functional. With t_j = sqrt(m)(theta_j - theta_hat) and t_q the
 * ceil(qB)-th order statistic, the interval is
 * [theta_hat - t_{1-alpha/2}/sqrt(n), theta_hat - t_{alpha/2}/sqrt(n)].
 */
inline Interval resample_ci(const MultiSourceData& data, const VectorXd& x_new, Index m, Index resamples,
                            bool with_replacement, double alpha, const RngStream& rng) {
  data.validate();
  const Index n = data.n_min();
  detail::require(m >= 2 && m <= n, "resample_ci: need 2 <= m <= n");
  detail::require(resamples >= 1, "resample_ci: B must be >= 1");
  detail::require(alpha > 0.0 && alpha < 1.0, "resample_ci: alpha must be in (0, 1)");
  const double theta = detail::magging_functional(data.groups, x_new);
  std::vector<double> t(static_cast<std::size_t>(resamples));
  for (Index j = 0; j < resamples; ++j) {
    RngStream r = rng.substream(static_cast<std::uint64_t>(j));
    std::vector<GroupData> sub;
    for (const auto& g : data.groups) {
      const Index ng = g.x.rows();
      std::vector<Index> idx;
      if (with_replacement) {
        for (Index i = 0; i < m; ++i) idx.push_back(static_cast<Index>(r.below(static_cast<std::uint64_t>(ng))));
      } else {
        std::vector<Index> all(static_cast<std::size_t>(ng));
        std::iota(all.begin(), all.end(), Index{0});
        for (Index i = 0; i < m; ++i) {
          const auto k = i + static_cast<Index>(r.below(static_cast<std::uint64_t>(ng - i)));
          std::swap(all[static_cast<std::size_t>(i)], all[static_cast<std::size_t>(k)]);
        }
        idx.assign(all.begin(), all.begin() + m);
      }
      sub.push_back({g.x(idx, Eigen::all), g.y(idx)});
    }
    t[static_cast<std::size_t>(j)] = std::sqrt(static_cast<double>(m)) * (detail::magging_functional(sub, x_new) - theta);
  }
  std::sort(t.begin(), t.end());
  auto order_stat = [&](double q) {
    auto k = static_cast<Index>(std::ceil(q * static_cast<double>(resamples) - 1e-12));
    k = std::clamp<Index>(k, 1, resamples);
    return t[static_cast<std::size_t>(k - 1)];
  };
  const double rn = std::sqrt(static_cast<double>(n));
  return {theta - order_stat(1.0 - alpha / 2.0) / rn, theta - order_stat(alpha / 2.0) / rn};
}

}  // namespace maximin
