#pragma once

// Empirical outage: draw estimation errors around the estimates, evaluate
// the realized SINRs and count misses. Trial t of a run with base seed s
// always uses the seed derive_seed(s, t), so results are reproducible and do
// not depend on trial order.

#include "offsetbf/channel.hpp"
#include "offsetbf/core.hpp"
#include "offsetbf/powerload.hpp"
#include "offsetbf/stats.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace offsetbf {

/// Relative slack below gamma that still counts as meeting the target, so a
/// design met with equality is not flagged by rounding.
inline constexpr double kSinrRelTol = 1e-9;

inline bool in_outage(double sinr_value, double gamma) { return sinr_value < gamma * (1.0 - kSinrRelTol); }

struct TrialResult {
  std::vector<bool> outage;  // per user: SINR < gamma under the drawn error
  double total_power = 0.0;
};

struct OutageEstimate {
  RVec outage;
  RVec std_error;  // binomial standard error per user
  int n_trials = 0;

  double mean() const { return outage.size() == 0 ? 0.0 : outage.mean(); }
};

namespace detail {

inline std::vector<ErrorSampler> make_samplers(const Scenario& s) {
  std::vector<ErrorSampler> out;
  out.reserve(s.users.size());
  for (const auto& u : s.users) out.emplace_back(u.uncertainty);
  return out;
}

}  // namespace detail

/// One Monte-Carlo trial: a fresh error per user, h = h_est + e.
inline TrialResult run_trial(const BeamformerSet& bf, const Scenario& s, const std::vector<ErrorSampler>& samplers,
                             std::uint64_t trial_seed) {
  TrialResult t;
  t.outage.resize(s.users.size());
  t.total_power = bf.total_power();
  for (int k = 0; k < s.size(); ++k) {
    const auto& u = s.users[static_cast<std::size_t>(k)];
    Rng rng(derive_seed(trial_seed, static_cast<std::uint64_t>(k)));
    const CVec h = u.h_est + samplers[static_cast<std::size_t>(k)].draw(rng);
    t.outage[static_cast<std::size_t>(k)] = in_outage(sinr(h, bf, k, u.noise_power), u.gamma);
  }
  return t;
}

inline OutageEstimate estimate_outage(const BeamformerSet& bf, const Scenario& s, int n_trials,
                                      std::uint64_t base_seed) {
  if (n_trials < 1) throw InvalidArgument("need at least one trial");
  if (bf.size() != s.size()) throw InvalidArgument("design and scenario disagree in user count");
  const auto samplers = detail::make_samplers(s);
  std::vector<long> misses(s.users.size(), 0);
  for (int t = 0; t < n_trials; ++t) {
    const TrialResult r = run_trial(bf, s, samplers, derive_seed(base_seed, static_cast<std::uint64_t>(t)));
    for (std::size_t k = 0; k < misses.size(); ++k) misses[k] += r.outage[k] ? 1 : 0;
  }
  OutageEstimate est;
  est.n_trials = n_trials;
  est.outage.resize(s.size());
  est.std_error.resize(s.size());
  for (int k = 0; k < s.size(); ++k) {
    const double p = static_cast<double>(misses[static_cast<std::size_t>(k)]) / n_trials;
    est.outage(k) = p;
    est.std_error(k) = std::sqrt(p * (1.0 - p) / n_trials);
  }
  return est;
}

/// A design is viable when it exists and uses strictly less than the limit.
inline bool viability_check(const std::optional<BeamformerSet>& design, double power_limit = 100.0) {
  return design.has_value() && design->total_power() < power_limit;
}

inline bool viability_check(const BeamformerSet& design, double power_limit = 100.0) {
  return design.total_power() < power_limit;
}

struct SweepAlgorithm {
  std::string id;
  /// Designs for a scenario at robustness r; throws offsetbf::Error when no
  /// design exists.
  std::function<BeamformerSet(const Scenario&, double r)> design;
};

struct SweepConfig {
  std::vector<double> r_grid;
  int n_realizations = 100;
  int n_trials = 10000;
  std::uint64_t base_seed = 1;
  double power_limit = 100.0;
};

struct SweepPoint {
  std::string algorithm;
  double r = 0.0;
  double mean_power = 0.0;
  double mean_outage = 0.0;
  double stderr_outage = 0.0;
  int n_viable = 0;

  bool empty() const { return n_viable == 0; }
};

/// Scenario for realization i (already user-selected; may be empty).
using ScenarioGenerator = std::function<Scenario(std::uint64_t seed)>;

/// For each r: design every realization with every algorithm, keep the
/// realizations where all designs are viable, and Monte-Carlo those designs.
/// Rows come out grouped by r, algorithms in the given order.
inline std::vector<SweepPoint> sweep(const std::vector<SweepAlgorithm>& algorithms, const ScenarioGenerator& gen,
                                     const SweepConfig& cfg) {
  if (algorithms.empty()) throw InvalidArgument("sweep needs at least one algorithm");
  if (cfg.n_realizations < 1 || cfg.n_trials < 1) throw InvalidArgument("sweep sizes must be positive");

  std::vector<Scenario> scenarios;
  scenarios.reserve(static_cast<std::size_t>(cfg.n_realizations));
  for (int i = 0; i < cfg.n_realizations; ++i)
    scenarios.push_back(gen(derive_seed(cfg.base_seed, static_cast<std::uint64_t>(i))));

  std::vector<SweepPoint> rows;
  for (double r : cfg.r_grid) {
    const std::size_t n_alg = algorithms.size();
    std::vector<std::vector<double>> power(n_alg), outage(n_alg);
    for (int i = 0; i < cfg.n_realizations; ++i) {
      const Scenario& s = scenarios[static_cast<std::size_t>(i)];
      if (s.users.empty()) continue;
      std::vector<BeamformerSet> designs;
      bool all_viable = true;
      for (const auto& alg : algorithms) {
        std::optional<BeamformerSet> d;
        try {
          d = alg.design(s, r);
        } catch (const Error&) {
        }
        if (!viability_check(d, cfg.power_limit)) {
          all_viable = false;
          break;
        }
        designs.push_back(std::move(*d));
      }
      if (!all_viable) continue;
      const std::uint64_t mc_seed = derive_seed(~cfg.base_seed, static_cast<std::uint64_t>(i));
      for (std::size_t a = 0; a < n_alg; ++a) {
        const OutageEstimate est = estimate_outage(designs[a], s, cfg.n_trials, mc_seed);
        power[a].push_back(designs[a].total_power());
        outage[a].push_back(est.mean());
      }
    }
    for (std::size_t a = 0; a < n_alg; ++a) {
      SweepPoint p;
      p.algorithm = algorithms[a].id;
      p.r = r;
      p.n_viable = static_cast<int>(power[a].size());
      if (p.n_viable > 0) {
        double ps = 0.0, os = 0.0;
        for (int i = 0; i < p.n_viable; ++i) {
          ps += power[a][static_cast<std::size_t>(i)];
          os += outage[a][static_cast<std::size_t>(i)];
        }
        p.mean_power = ps / p.n_viable;
        p.mean_outage = os / p.n_viable;
        if (p.n_viable > 1) {
          double ss = 0.0;
          for (double o : outage[a]) ss += (o - p.mean_outage) * (o - p.mean_outage);
          p.stderr_outage = std::sqrt(ss / (p.n_viable - 1) / p.n_viable);
        }
      }
      rows.push_back(p);
    }
  }
  return rows;
}

}  // namespace offsetbf
