#pragma once

// Run configuration and the design / simulation pipelines behind the
// command-line front end.

#include "offsetbf/channel.hpp"
#include "offsetbf/core.hpp"
#include "offsetbf/directions.hpp"
#include "offsetbf/io.hpp"
#include "offsetbf/montecarlo.hpp"
#include "offsetbf/powerload.hpp"
#include "offsetbf/stats.hpp"

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace offsetbf {

enum class Algorithm { zf, mrt, rzf, alg1, const_offset, maxr, maxr_reschedule, maxr_powersave, avg_outage };

inline constexpr std::array<std::pair<Algorithm, std::string_view>, 9> kAlgorithmNames{{
    {Algorithm::zf, "zf"},
    {Algorithm::mrt, "mrt"},
    {Algorithm::rzf, "rzf"},
    {Algorithm::alg1, "alg1"},
    {Algorithm::const_offset, "const_offset"},
    {Algorithm::maxr, "maxr"},
    {Algorithm::maxr_reschedule, "maxr_reschedule"},
    {Algorithm::maxr_powersave, "maxr_powersave"},
    {Algorithm::avg_outage, "avg_outage"},
}};

inline Algorithm parse_algorithm(std::string_view s) {
  for (const auto& [a, name] : kAlgorithmNames)
    if (name == s) return a;
  throw InvalidConfig("unknown algorithm '" + std::string(s) + "'");
}

inline std::string_view to_string(Algorithm a) {
  for (const auto& [x, name] : kAlgorithmNames)
    if (x == a) return name;
  return "?";
}

/// Algorithms that design for a prescribed offset r (as opposed to
/// maximizing it under a budget).
inline bool takes_offset(Algorithm a) {
  return a == Algorithm::zf || a == Algorithm::mrt || a == Algorithm::rzf || a == Algorithm::alg1 ||
         a == Algorithm::const_offset;
}

/// Directions used by the budget-constrained family.
enum class DirectionChoice { zf, mrt, rzf, const_offset };

inline DirectionChoice parse_direction_choice(std::string_view s) {
  if (s == "zf") return DirectionChoice::zf;
  if (s == "mrt") return DirectionChoice::mrt;
  if (s == "rzf") return DirectionChoice::rzf;
  if (s == "const_offset") return DirectionChoice::const_offset;
  throw InvalidConfig("unknown direction choice '" + std::string(s) + "'");
}

inline std::string_view to_string(DirectionChoice d) {
  switch (d) {
    case DirectionChoice::zf: return "zf";
    case DirectionChoice::mrt: return "mrt";
    case DirectionChoice::rzf: return "rzf";
    case DirectionChoice::const_offset: return "const_offset";
  }
  return "?";
}

struct RunConfig {
  // Scenario source: a file, or the generator below.
  std::optional<std::string> scenario_file;
  GeometryConfig geometry{};
  FadingConfig fading{};
  QosConfig qos{};
  bool user_selection = true;
  double selection_power = 100.0;

  Algorithm algorithm = Algorithm::alg1;
  std::vector<Algorithm> algorithms{Algorithm::alg1};  // sweep

  // Robustness: r, or delta converted with offset_mode.
  std::optional<double> r;
  std::optional<double> delta;
  OffsetMode offset_mode = OffsetMode::gaussian;
  std::vector<double> r_grid;
  std::vector<double> delta_grid;

  double pt = 1.0;
  double r_min = 2.0;
  double r_cap = 5.0;
  DirectionChoice maxr_directions = DirectionChoice::const_offset;
  std::optional<double> rzf_loading;
  bool refine_perturbation = false;
  int alg1_refinements = 0;
  VarianceMode variance_mode = VarianceMode::automatic;

  std::uint64_t seed = 1;
  int n_trials = 10000;
  int n_realizations = 100;
  double power_limit = 100.0;

  /// Offset coefficient for offset-driven algorithms.
  double resolved_r() const {
    if (r && delta) throw InvalidConfig("give either 'r' or 'delta', not both");
    if (r) return *r;
    if (delta) return r_from_delta(*delta, offset_mode);
    return r_from_delta(qos.delta, offset_mode);
  }

  std::vector<double> resolved_grid() const {
    if (!r_grid.empty() && !delta_grid.empty()) throw InvalidConfig("give either 'r_grid' or 'delta_grid'");
    if (!r_grid.empty()) return r_grid;
    std::vector<double> out;
    for (double d : delta_grid) out.push_back(r_from_delta(d, offset_mode));
    if (out.empty()) throw InvalidConfig("sweep needs 'r_grid' or 'delta_grid'");
    return out;
  }

  void validate() const {
    if (r && !(*r >= 0.0)) throw InvalidConfig("r must be nonnegative");
    if (r && delta) throw InvalidConfig("give either 'r' or 'delta', not both");
    if (!(pt > 0.0)) throw InvalidConfig("pt must be positive");
    if (n_trials < 1) throw InvalidConfig("trials must be at least 1");
    if (n_realizations < 1) throw InvalidConfig("realizations must be at least 1");
    if (alg1_refinements < 0) throw InvalidConfig("alg1_refinements must be nonnegative");
    if (rzf_loading && !(*rzf_loading > 0.0)) throw InvalidConfig("rzf_loading must be positive");
  }
};

// ---------------------------------------------------------------------------
// Config JSON

namespace detail {

template <class T>
T get_field(const Json& j, const char* key, const std::string& ctx) {
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw InvalidConfig(ctx + ": field '" + key + "' has the wrong type");
  }
}

inline void reject_unknown(const Json& j, std::initializer_list<std::string_view> known, const std::string& ctx) {
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (auto k : known) ok = ok || k == key;
    if (!ok) throw InvalidConfig(ctx + ": unknown field '" + key + "'");
  }
}

}  // namespace detail

inline RunConfig config_from_json(const Json& j) {
  using detail::get_field;
  if (!j.is_object()) throw ParseError("config must be a JSON object");
  detail::reject_unknown(j,
                         {"scenario_file", "geometry", "fading", "qos", "user_selection", "selection_power",
                          "algorithm", "algorithms", "r", "delta", "offset_mode", "r_grid", "delta_grid", "pt",
                          "r_min", "r_cap", "maxr_directions", "rzf_loading", "refine_perturbation",
                          "alg1_refinements", "variance_mode", "seed", "trials", "realizations", "power_limit"},
                         "config");
  RunConfig c;
  if (j.contains("scenario_file")) c.scenario_file = get_field<std::string>(j, "scenario_file", "config");
  if (j.contains("geometry")) {
    if (c.scenario_file) throw InvalidConfig("give either 'scenario_file' or generator parameters, not both");
    const Json& g = j.at("geometry");
    detail::reject_unknown(g, {"radius_km", "n_users", "n_antennas"}, "geometry");
    if (g.contains("radius_km")) c.geometry.radius_km = get_field<double>(g, "radius_km", "geometry");
    if (g.contains("n_users")) c.geometry.n_users = get_field<int>(g, "n_users", "geometry");
    if (g.contains("n_antennas")) c.geometry.n_antennas = get_field<int>(g, "n_antennas", "geometry");
  }
  if (j.contains("fading")) {
    if (c.scenario_file) throw InvalidConfig("give either 'scenario_file' or generator parameters, not both");
    const Json& f = j.at("fading");
    detail::reject_unknown(
        f, {"pathloss_exponent", "shadowing_db", "noise_dbm", "reference_gain_db", "sigma_e", "relative_error"},
        "fading");
    if (f.contains("pathloss_exponent"))
      c.fading.pathloss_exponent = get_field<double>(f, "pathloss_exponent", "fading");
    if (f.contains("shadowing_db")) c.fading.shadowing_db = get_field<double>(f, "shadowing_db", "fading");
    if (f.contains("noise_dbm")) c.fading.noise_dbm = get_field<double>(f, "noise_dbm", "fading");
    if (f.contains("reference_gain_db"))
      c.fading.reference_gain_db = get_field<double>(f, "reference_gain_db", "fading");
    if (f.contains("sigma_e")) {
      const Json& s = f.at("sigma_e");
      c.fading.sigma_e = s.is_array() ? get_field<std::vector<double>>(f, "sigma_e", "fading")
                                      : std::vector<double>{get_field<double>(f, "sigma_e", "fading")};
    }
    if (f.contains("relative_error")) c.fading.relative_error = get_field<bool>(f, "relative_error", "fading");
  }
  if (j.contains("qos")) {
    const Json& q = j.at("qos");
    detail::reject_unknown(q, {"gamma_db", "delta"}, "qos");
    if (q.contains("gamma_db")) c.qos.gamma_db = get_field<double>(q, "gamma_db", "qos");
    if (q.contains("delta")) c.qos.delta = get_field<double>(q, "delta", "qos");
  }
  if (j.contains("user_selection")) c.user_selection = get_field<bool>(j, "user_selection", "config");
  if (j.contains("selection_power")) c.selection_power = get_field<double>(j, "selection_power", "config");
  if (j.contains("algorithm")) c.algorithm = parse_algorithm(get_field<std::string>(j, "algorithm", "config"));
  if (j.contains("algorithms")) {
    c.algorithms.clear();
    for (const auto& s : get_field<std::vector<std::string>>(j, "algorithms", "config"))
      c.algorithms.push_back(parse_algorithm(s));
  }
  if (j.contains("r")) c.r = get_field<double>(j, "r", "config");
  if (j.contains("delta")) c.delta = get_field<double>(j, "delta", "config");
  if (j.contains("offset_mode")) c.offset_mode = parse_offset_mode(get_field<std::string>(j, "offset_mode", "config"));
  if (j.contains("r_grid")) c.r_grid = get_field<std::vector<double>>(j, "r_grid", "config");
  if (j.contains("delta_grid")) c.delta_grid = get_field<std::vector<double>>(j, "delta_grid", "config");
  if (j.contains("pt")) c.pt = get_field<double>(j, "pt", "config");
  if (j.contains("r_min")) c.r_min = get_field<double>(j, "r_min", "config");
  if (j.contains("r_cap")) c.r_cap = get_field<double>(j, "r_cap", "config");
  if (j.contains("maxr_directions"))
    c.maxr_directions = parse_direction_choice(get_field<std::string>(j, "maxr_directions", "config"));
  if (j.contains("rzf_loading")) c.rzf_loading = get_field<double>(j, "rzf_loading", "config");
  if (j.contains("refine_perturbation"))
    c.refine_perturbation = get_field<bool>(j, "refine_perturbation", "config");
  if (j.contains("alg1_refinements")) c.alg1_refinements = get_field<int>(j, "alg1_refinements", "config");
  if (j.contains("variance_mode"))
    c.variance_mode = parse_variance_mode(get_field<std::string>(j, "variance_mode", "config"));
  if (j.contains("seed")) c.seed = get_field<std::uint64_t>(j, "seed", "config");
  if (j.contains("trials")) c.n_trials = get_field<int>(j, "trials", "config");
  if (j.contains("realizations")) c.n_realizations = get_field<int>(j, "realizations", "config");
  if (j.contains("power_limit")) c.power_limit = get_field<double>(j, "power_limit", "config");
  c.validate();
  return c;
}

/// Fully resolved config; reading it back yields the same run.
inline Json config_to_json(const RunConfig& c) {
  Json j;
  if (c.scenario_file) {
    j["scenario_file"] = *c.scenario_file;
  } else {
    j["geometry"] = {{"radius_km", c.geometry.radius_km},
                     {"n_users", c.geometry.n_users},
                     {"n_antennas", c.geometry.n_antennas}};
    j["fading"] = {{"pathloss_exponent", c.fading.pathloss_exponent},
                   {"shadowing_db", c.fading.shadowing_db},
                   {"noise_dbm", c.fading.noise_dbm},
                   {"reference_gain_db", c.fading.reference_gain_db},
                   {"sigma_e", c.fading.sigma_e},
                   {"relative_error", c.fading.relative_error}};
  }
  j["qos"] = {{"gamma_db", c.qos.gamma_db}, {"delta", c.qos.delta}};
  j["user_selection"] = c.user_selection;
  j["selection_power"] = c.selection_power;
  j["algorithm"] = std::string(to_string(c.algorithm));
  Json algs = Json::array();
  for (Algorithm a : c.algorithms) algs.push_back(std::string(to_string(a)));
  j["algorithms"] = std::move(algs);
  if (c.r) j["r"] = *c.r;
  if (c.delta) j["delta"] = *c.delta;
  j["offset_mode"] = c.offset_mode == OffsetMode::gaussian ? "gaussian" : "cantelli";
  if (!c.r_grid.empty()) j["r_grid"] = c.r_grid;
  if (!c.delta_grid.empty()) j["delta_grid"] = c.delta_grid;
  j["pt"] = c.pt;
  j["r_min"] = c.r_min;
  j["r_cap"] = c.r_cap;
  j["maxr_directions"] = std::string(to_string(c.maxr_directions));
  if (c.rzf_loading) j["rzf_loading"] = *c.rzf_loading;
  j["refine_perturbation"] = c.refine_perturbation;
  j["alg1_refinements"] = c.alg1_refinements;
  j["variance_mode"] = std::string(to_string(c.variance_mode));
  j["seed"] = c.seed;
  j["trials"] = c.n_trials;
  j["realizations"] = c.n_realizations;
  j["power_limit"] = c.power_limit;
  return j;
}

// ---------------------------------------------------------------------------
// Pipelines

/// Scenario for a config: loaded from file, or generated from `seed` and
/// user-selected.
inline Scenario make_scenario(const RunConfig& c, std::uint64_t seed) {
  Scenario s = c.scenario_file ? io::scenario_from_json(io::read_json_file(*c.scenario_file))
                               : generate_scenario(c.geometry, c.fading, c.qos, seed);
  if (c.user_selection) {
    const std::vector<int> keep = user_selection(s, c.selection_power);
    s = s.subset(keep);
  }
  return s;
}

/// (sum_j h_j h_j^H + K sigma^2 / P I)^{-1} h_k with P the selection power,
/// unless a loading is configured.
inline double rzf_loading_for(const Scenario& s, const RunConfig& c) {
  if (c.rzf_loading) return *c.rzf_loading;
  return s.size() * s.noise_powers().mean() / c.selection_power;
}

inline CMat offset_directions(Algorithm a, const Scenario& s, const RunConfig& c, double r) {
  const CMat h = s.estimated_channels();
  switch (a) {
    case Algorithm::zf: return zf_directions(h);
    case Algorithm::mrt: return mrt_directions(h);
    case Algorithm::rzf: return rzf_directions(h, rzf_loading_for(s, c));
    case Algorithm::const_offset: {
      const RVec nu = solve_nu_constant_offset(h, s.gammas());
      return directions_constant_offset(nu, h, s.gammas());
    }
    case Algorithm::alg1: {
      Alg1Options opt;
      opt.refinements = c.alg1_refinements;
      opt.variance_mode = c.variance_mode;
      return alg1_design(s, r, opt).beamformers.directions;
    }
    default: throw InvalidConfig("algorithm '" + std::string(to_string(a)) + "' does not take an offset");
  }
}

inline CMat budget_directions(const Scenario& s, const RunConfig& c) {
  switch (c.maxr_directions) {
    case DirectionChoice::zf: return offset_directions(Algorithm::zf, s, c, 0.0);
    case DirectionChoice::mrt: return offset_directions(Algorithm::mrt, s, c, 0.0);
    case DirectionChoice::rzf: return offset_directions(Algorithm::rzf, s, c, 0.0);
    case DirectionChoice::const_offset: return offset_directions(Algorithm::const_offset, s, c, 0.0);
  }
  return {};
}

struct DesignOutcome {
  BeamformerSet beamformers;  // for the served users, in report order
  DesignReport report;
  Scenario served;  // the served users only
};

/// Design with an offset-driven algorithm at offset r.
inline DesignOutcome design_at_offset(Algorithm a, const Scenario& s, const RunConfig& c, double r) {
  s.validate();
  DesignOutcome out;
  if (a == Algorithm::alg1) {
    Alg1Options opt;
    opt.refinements = c.alg1_refinements;
    opt.variance_mode = c.variance_mode;
    Alg1Result res = alg1_design(s, r, opt);
    out.beamformers = std::move(res.beamformers);
    out.report = std::move(res.report);
  } else {
    const CMat u = offset_directions(a, s, c, r);
    const CouplingMatrix cm(LoadingProblem::from_scenario(s, u));
    out.report = alg2_power_load(cm, RVec::Constant(s.size(), r), c.variance_mode);
    out.beamformers = {u, out.report.powers};
  }
  out.served = s;
  return out;
}

inline DesignOutcome run_design(const Scenario& s, const RunConfig& c) {
  if (s.users.empty()) throw InfeasibleLoading("no user passes user selection");
  s.validate();
  if (takes_offset(c.algorithm)) return design_at_offset(c.algorithm, s, c, c.resolved_r());

  const LoadingProblem full = LoadingProblem::from_scenario(s, budget_directions(s, c));
  DesignOutcome out;
  switch (c.algorithm) {
    case Algorithm::maxr: {
      out.report = max_r_power_load(CouplingMatrix(full), c.pt, c.variance_mode);
      break;
    }
    case Algorithm::avg_outage: {
      const CouplingMatrix cm(full);
      DesignReport base = max_r_power_load(cm, c.pt, c.variance_mode);
      if (base.unbounded_offset) {
        out.report = std::move(base);
        break;
      }
      const Perturbation p =
          average_outage_perturbation(cm, base.held_sigma_f, base.common_offset, fit_normal_cdf_quadratic());
      if ((p.powers.array() < 0.0).any())
        throw InfeasibleLoading("perturbed offsets need a negative power", p.powers);
      if (c.refine_perturbation) {
        out.report = alg2_power_load(cm, p.offsets, c.variance_mode);
      } else {
        out.report = detail::make_report(cm, p.powers, p.offsets, c.variance_mode, base.iterations_used);
      }
      out.report.common_offset = base.common_offset;
      break;
    }
    case Algorithm::maxr_reschedule:
    case Algorithm::maxr_powersave: {
      const DirectionRule redesign = [&](const LoadingProblem& sub) {
        Scenario ss;
        ss.n_antennas = s.n_antennas;
        for (Eigen::Index k = 0; k < sub.channels.cols(); ++k) {
          // Only the estimates and targets matter for the direction rules.
          UserChannel u;
          u.h_est = u.h_true = sub.channels.col(k);
          u.uncertainty = UncertaintyModel::make_iid(s.n_antennas, sub.sigma_e(k));
          u.gamma = sub.gamma(k);
          u.noise_power = sub.noise(k);
          ss.users.push_back(std::move(u));
        }
        return budget_directions(ss, c);
      };
      RescheduleResult rr = reschedule(full, c.pt, c.r_min, c.variance_mode, {}, redesign);
      if (c.algorithm == Algorithm::maxr_powersave) {
        LoadingProblem sub = full.subset(rr.retained);
        if (rr.retained.size() < static_cast<std::size_t>(full.size())) sub.directions = redesign(sub);
        DesignReport capped = power_saving_cap(CouplingMatrix(sub), c.pt, c.r_cap, c.variance_mode);
        capped.served = rr.report.served;
        capped.rescheduled = rr.report.rescheduled;
        rr.report = std::move(capped);
      }
      out.report = std::move(rr.report);
      out.served = s.subset(out.report.served);
      LoadingProblem sub = full.subset(out.report.served);
      if (out.report.served.size() < static_cast<std::size_t>(full.size())) sub.directions = redesign(sub);
      out.beamformers = {sub.directions, out.report.powers};
      return out;
    }
    default: break;
  }
  out.served = s;
  out.beamformers = {full.directions, out.report.powers};
  return out;
}

inline Json design_report_json(const DesignOutcome& d, const RunConfig& c) {
  Json j;
  j["config"] = config_to_json(c);
  j["algorithm"] = std::string(to_string(c.algorithm));
  j["report"] = io::report_to_json(d.report);
  Json dirs = Json::array();
  for (int k = 0; k < d.beamformers.size(); ++k) dirs.push_back(io::to_json(CVec(d.beamformers.directions.col(k))));
  j["directions"] = std::move(dirs);
  j["scenario"] = io::scenario_to_json(d.served);
  return j;
}

inline std::vector<SweepAlgorithm> sweep_algorithms(const RunConfig& c) {
  std::vector<SweepAlgorithm> out;
  for (Algorithm a : c.algorithms) {
    if (!takes_offset(a))
      throw InvalidConfig("sweep supports offset-driven algorithms only, not '" + std::string(to_string(a)) + "'");
    out.push_back({std::string(to_string(a)),
                   [a, c](const Scenario& s, double r) { return design_at_offset(a, s, c, r).beamformers; }});
  }
  return out;
}

inline std::vector<SweepPoint> run_sweep(const RunConfig& c) {
  if (c.scenario_file) throw InvalidConfig("sweep draws its own scenarios; remove 'scenario_file'");
  SweepConfig sc;
  sc.r_grid = c.resolved_grid();
  sc.n_realizations = c.n_realizations;
  sc.n_trials = c.n_trials;
  sc.base_seed = c.seed;
  sc.power_limit = c.power_limit;
  return sweep(sweep_algorithms(c), [&c](std::uint64_t seed) { return make_scenario(c, seed); }, sc);
}

inline Json montecarlo_json(const DesignOutcome& d, const OutageEstimate& est, const RunConfig& c) {
  Json j = design_report_json(d, c);
  j["montecarlo"] = {{"trials", est.n_trials},
                     {"seed", c.seed},
                     {"outage", io::to_json(est.outage)},
                     {"stderr", io::to_json(est.std_error)},
                     {"mean_outage", est.mean()},
                     {"viable", viability_check(d.beamformers, c.power_limit)}};
  return j;
}

}  // namespace offsetbf
