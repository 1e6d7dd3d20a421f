// Acceptance run: one PASS/FAIL line per criterion, with the measured
// quantity next to the threshold. Exits 0 once every criterion has been
// evaluated; with --strict the exit code is 1 if any criterion failed.

#include "offsetbf/directions.hpp"
#include "offsetbf/montecarlo.hpp"
#include "offsetbf/pipeline.hpp"
#include "offsetbf/powerload.hpp"

#include "oracles.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

using namespace offsetbf;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

struct Criterion {
  int id;
  const char* title;
  double time_limit_s;  // <= 0: none
  std::function<Verdict()> run;
};

std::string format(const char* fmt, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, fmt, args...);
  return buf;
}

Scenario drop(int n_users, int n_antennas, double sigma_e, std::uint64_t seed) {
  GeometryConfig g;
  g.n_users = n_users;
  g.n_antennas = n_antennas;
  FadingConfig f;
  f.sigma_e = {sigma_e};
  Scenario s = generate_scenario(g, f, {}, seed);
  return s.subset(user_selection(s));
}

Scenario unit_scale(int nt, int k, double sigma_e, std::uint64_t seed, double gamma = 2.0, double noise = 0.1) {
  Rng rng(seed);
  Scenario s;
  s.n_antennas = nt;
  for (int i = 0; i < k; ++i) {
    UserChannel u;
    u.h_est = u.h_true = draw_cn_vector(rng, nt);
    u.uncertainty = UncertaintyModel::make_iid(nt, sigma_e);
    u.gamma = gamma;
    u.noise_power = noise;
    s.users.push_back(u);
  }
  return s;
}

CMat const_offset_directions(const Scenario& s) {
  const CMat h = s.estimated_channels();
  return directions_constant_offset(solve_nu_constant_offset(h, s.gammas()), h, s.gammas());
}

double rel(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

// ---------------------------------------------------------------------------

Verdict perfect_csi() {
  int designs = 0, bad = 0;
  double worst = 0.0, slowest = 0.0;
  for (std::uint64_t seed = 0; designs < 100 && seed < 1000; ++seed) {
    const Scenario s = drop(3, 4, 0.0, 10000 + seed);
    if (s.size() != 3) continue;
    const CMat h = s.estimated_channels();
    for (const CMat& u : {zf_directions(h), mrt_directions(h), rzf_directions(h, 3.0 * s.noise_powers().mean() / 100.0),
                          const_offset_directions(s)}) {
      const auto t0 = std::chrono::steady_clock::now();
      DesignReport rep;
      try {
        rep = alg2_power_load(CouplingMatrix(LoadingProblem::from_scenario(s, u)), RVec::Constant(3, 2.0));
      } catch (const InfeasibleLoading&) {
        continue;  // these directions do not reach feasibility
      }
      slowest = std::max(slowest, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
      ++designs;
      if (rep.iterations_used != 1) ++bad;
      const BeamformerSet bf{u, rep.powers};
      for (int k = 0; k < 3; ++k) {
        const double e = rel(sinr(s.users[k].h_est, bf, k, s.users[k].noise_power), s.users[k].gamma);
        worst = std::max(worst, e);
        if (e > 1e-6) ++bad;
      }
    }
  }
  return {bad == 0 && designs >= 100 && slowest < 1.0,
          format("%d designs, worst SINR error %.2e (<= 1e-6), %d not in one iteration, slowest %.1e s (< 1 s)",
                 designs, worst, bad, slowest)};
}

Verdict moment_oracle() {
  int instances = 0, bad = 0;
  double worst_mu = 0.0, worst_var = 0.0, worst_formula = 0.0;
  for (std::uint64_t seed = 0; instances < 20 && seed < 1000; ++seed) {
    const Scenario s = drop(3, 4, 0.1, 20000 + seed);
    if (s.size() != 3) continue;
    Alg1Result d;
    try {
      d = alg1_design(s, 2.0);
    } catch (const Error&) {
      continue;
    }
    ++instances;
    const CouplingMatrix a(LoadingProblem::from_scenario(s, d.beamformers.directions));
    const RVec mu19 = a.means(d.beamformers.powers);
    for (int k = 0; k < 3; ++k) {
      const UserChannel& u = s.users[k];
      const OffsetStats iid = offset_stats_iid(d.beamformers, k, u);
      UserChannel g = u;
      g.uncertainty = UncertaintyModel::make_general(CVec::Zero(4), u.uncertainty.covariance);
      const OffsetStats gen = offset_stats_general(d.beamformers, k, g);
      const double var19 = a.variance(k, d.beamformers.powers, VarianceMode::exact);
      worst_formula = std::max({worst_formula, rel(gen.mu, iid.mu), rel(gen.sigma * gen.sigma, iid.sigma * iid.sigma),
                                rel(mu19(k), iid.mu), rel(var19, iid.sigma * iid.sigma)});

      const CMat q = q_matrix(d.beamformers, k, u.gamma);
      const ErrorSampler sampler(u.uncertainty);
      Rng rng(derive_seed(30000 + seed, static_cast<std::uint64_t>(k)));
      const int n = 1000000;
      double m = 0.0, m2 = 0.0;
      for (int i = 0; i < n; ++i) {
        const double f = slack_value(q, u.h_est, sampler.draw(rng), u.noise_power);
        m += f;
        m2 += f * f;
      }
      m /= n;
      const double var = (m2 / n - m * m) * n / (n - 1.0);
      const double em = rel(m, iid.mu), ev = rel(var, iid.sigma * iid.sigma);
      worst_mu = std::max(worst_mu, em);
      worst_var = std::max(worst_var, ev);
      if (em > 0.01 || ev > 0.01) ++bad;
    }
  }
  return {bad == 0 && instances == 20 && worst_formula < 1e-9,
          format("%d instances x 3 users, 1e6 draws each: worst mean error %.3f%%, worst variance error %.3f%% "
                 "(<= 1%%); formulas agree to %.1e",
                 instances, 100 * worst_mu, 100 * worst_var, worst_formula)};
}

Verdict tail_calibration() {
  const double lo = 0.0159, hi = 0.0296;
  int realizations = 0, inside = 0;
  double sum = 0.0;
  for (std::uint64_t seed = 0; realizations < 100 && seed < 1000; ++seed) {
    const Scenario s = drop(3, 4, 0.1, 40000 + seed);
    if (s.size() != 3) continue;
    BeamformerSet bf;
    try {
      bf = alg1_design(s, 2.0).beamformers;
    } catch (const Error&) {
      continue;
    }
    ++realizations;
    const double p = estimate_outage(bf, s, 100000, derive_seed(41000, seed)).mean();
    sum += p;
    inside += p >= lo && p <= hi;
  }
  return {realizations == 100 && inside >= 80,
          format("%d of %d realizations in [%.4f, %.4f] (need >= 80); mean empirical outage %.4f vs Q(2) = %.4f",
                 inside, realizations, lo, hi, sum / std::max(realizations, 1), q_function(2.0))};
}

Verdict orthogonal_closed_forms() {
  double worst_nu = 0.0, worst_dir = 0.0;
  int cases = 0;
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    Rng rng(50000 + seed);
    const int nt = 2 + static_cast<int>(seed % 7);
    const int k = 1 + static_cast<int>(seed % static_cast<std::uint64_t>(nt));
    const CMat q = [&] {
      CMat m(nt, nt);
      for (int j = 0; j < nt; ++j) m.col(j) = draw_cn_vector(rng, nt);
      return CMat(m.householderQr().householderQ());
    }();
    std::uniform_real_distribution<double> unif(-1.0, 1.0);
    CMat h(nt, k);
    RVec alpha(k), gamma(k);
    for (int j = 0; j < k; ++j) {
      alpha(j) = std::pow(10.0, 2.0 * unif(rng));
      gamma(j) = std::pow(10.0, unif(rng));
      h.col(j) = std::sqrt(alpha(j)) * q.col(j);
    }
    const RVec nu = solve_nu_constant_offset(h, gamma);
    const CMat u = directions_constant_offset(nu, h, gamma);
    const CMat mrt = mrt_directions(h);
    for (int j = 0; j < k; ++j) {
      worst_nu = std::max(worst_nu, rel(nu(j), gamma(j) / alpha(j)));
      worst_dir = std::max(worst_dir, 1.0 - std::abs(u.col(j).dot(mrt.col(j))));
    }
    ++cases;
  }
  return {worst_nu <= 1e-8 && worst_dir <= 1e-8,
          format("%d orthogonal instances: worst relative nu error %.1e, worst 1 - |<u, h/|h|>| %.1e (<= 1e-8)", cases,
                 worst_nu, worst_dir)};
}

Verdict alg2_iterations() {
  int feasible = 0, fast = 0, max_it = 0;
  std::vector<int> hist(8, 0);
  for (std::uint64_t seed = 0; feasible < 200 && seed < 5000; ++seed) {
    const Scenario s = drop(3, 4, 0.1, 60000 + seed);
    if (s.size() != 3) continue;
    DesignReport rep;
    try {
      const CMat u = zf_directions(s.estimated_channels());
      rep = alg2_power_load(CouplingMatrix(LoadingProblem::from_scenario(s, u)), RVec::Constant(3, 2.0));
    } catch (const Error&) {
      continue;
    }
    ++feasible;
    fast += rep.iterations_used <= 5;
    max_it = std::max(max_it, rep.iterations_used);
    ++hist[static_cast<std::size_t>(std::min(rep.iterations_used / 5, 7))];
  }
  return {feasible > 0 && fast >= 0.95 * feasible,
          format("%d of %d feasible instances within 5 iterations (need >= 95%%); iterations by bin "
                 "[0-4:%d 5-9:%d 10-14:%d 15-19:%d 20-24:%d 25+:%d], max %d",
                 fast, feasible, hist[0], hist[1], hist[2], hist[3], hist[4], hist[5] + hist[6] + hist[7], max_it)};
}

Verdict budget_and_equality() {
  int maxr_runs = 0, loadings = 0;
  double worst_budget = 0.0, worst_eq = 0.0;
  auto check_eq = [&](const CouplingMatrix& a, const DesignReport& rep) {
    ++loadings;
    const RVec mu = a.means(rep.powers);
    for (int k = 0; k < a.size(); ++k)
      worst_eq = std::max(worst_eq, std::abs(mu(k) - rep.offsets(k) * rep.stats[k].sigma) / std::abs(mu(k)));
  };
  for (std::uint64_t seed = 0; seed < 300; ++seed) {
    const Scenario s = drop(3, 4, 0.1, 70000 + seed);
    if (s.size() < 2) continue;
    const CouplingMatrix a(LoadingProblem::from_scenario(s, const_offset_directions(s)));
    try {
      const DesignReport m = max_r_power_load(a, 1.0);
      ++maxr_runs;
      worst_budget = std::max(worst_budget, std::abs(m.total_power - 1.0));
      check_eq(a, m);
    } catch (const Error&) {
    }
    for (double r : {1.0, 2.0, 3.0}) {
      try {
        check_eq(a, alg2_power_load(a, RVec::Constant(a.size(), r)));
      } catch (const Error&) {
      }
    }
  }
  return {maxr_runs > 0 && worst_budget <= 1e-9 && worst_eq <= 1e-6,
          format("%d max-offset solutions: worst |sum beta - Pt| %.1e (<= 1e-9); %d loadings: worst "
                 "|mu - r sigma|/mu %.1e (<= 1e-6)",
                 maxr_runs, worst_budget, loadings, worst_eq)};
}

Verdict perturbation() {
  // Exactly symmetric users.
  Scenario sym;
  sym.n_antennas = 4;
  for (int k = 0; k < 4; ++k) {
    UserChannel u;
    u.h_est = u.h_true = 0.8 * CVec::Unit(4, k);
    u.uncertainty = UncertaintyModel::make_iid(4, 0.08);
    u.gamma = 4.0;
    u.noise_power = 0.05;
    sym.users.push_back(u);
  }
  const QuadraticFit quad = fit_normal_cdf_quadratic();
  const CouplingMatrix as(LoadingProblem::from_scenario(sym, zf_directions(sym.estimated_channels())));
  const DesignReport ms = max_r_power_load(as, 3.0);
  const Perturbation ps = average_outage_perturbation(as, ms.held_sigma_f, ms.common_offset, quad);
  const bool sym_zero = (ps.delta_r.array() == 0.0).all();

  // Random drops; the budget puts the common offset at a random point of
  // the fit interval.
  int instances = 0, worse = 0, worse_past_vertex = 0;
  double worst_budget = 0.0, mean_gain = 0.0;
  const double vertex = -quad.a1 / (2.0 * quad.a0);
  Rng pick(80000);
  std::uniform_real_distribution<double> target(1.0, 3.0);
  for (std::uint64_t seed = 0; instances < 100 && seed < 2000; ++seed) {
    const Scenario s = drop(4, 8, 0.1, 81000 + seed);
    const double r_target = target(pick);
    if (s.size() < 2) continue;
    try {
      const CouplingMatrix a(LoadingProblem::from_scenario(s, const_offset_directions(s)));
      const double pt = alg2_power_load(a, RVec::Constant(a.size(), r_target)).total_power;
      const DesignReport m = max_r_power_load(a, pt);
      const Perturbation p = average_outage_perturbation(a, m.held_sigma_f, m.common_offset, quad);
      ++instances;
      worst_budget = std::max(worst_budget, std::abs(p.powers.sum() - m.total_power) / m.total_power);
      double before = 0.0, after = 0.0;
      for (int k = 0; k < a.size(); ++k) {
        before += q_function(m.common_offset) / a.size();
        after += q_function(p.offsets(k)) / a.size();
      }
      worse += after > before + 1e-12;
      worse_past_vertex += after > before + 1e-12 && m.common_offset > vertex;
      mean_gain += (before - after) / before;
    } catch (const Error&) {
    }
  }
  return {sym_zero && instances == 100 && worst_budget <= 1e-9 && worse == 0,
          format("symmetric delta_r %s; %d instances: worst relative power change %.1e (<= 1e-9), %d with higher "
                 "average predicted outage (%d of them with r* past the fit vertex %.3f), mean reduction %.1f%%",
                 sym_zero ? "exactly 0" : "nonzero", instances, worst_budget, worse, worse_past_vertex, vertex,
                 100.0 * mean_gain / std::max(instances, 1))};
}

Verdict small_oracle() {
  int compared = 0, bad = 0, mismatch = 0;
  double worst = 0.0;
  for (std::uint64_t seed = 0; compared < 50 && seed < 500; ++seed) {
    const Scenario s = unit_scale(2, 2, 0.1, 90000 + seed);
    const CMat u = zf_directions(s.estimated_channels());
    const auto ref = oracle::two_user_min_power(s, u, 2.0, 1e4);
    std::optional<double> got;
    try {
      got = alg2_power_load(CouplingMatrix(LoadingProblem::from_scenario(s, u)), RVec::Constant(2, 2.0),
                            VarianceMode::exact)
                .total_power;
    } catch (const Error&) {
    }
    if (ref.has_value() != got.has_value()) {
      ++mismatch;
      continue;
    }
    if (!ref) continue;
    ++compared;
    const double e = rel(*got, *ref);
    worst = std::max(worst, e);
    bad += e > 0.01;
  }
  return {compared == 50 && bad == 0 && mismatch == 0,
          format("%d two-user instances: worst relative power gap %.1e (<= 1%%), %d feasibility disagreements",
                 compared, worst, mismatch)};
}

Verdict power_saving_trend() {
  std::vector<double> means;
  std::string row;
  for (int nt = 20; nt <= 60; nt += 5) {
    RunConfig c;
    c.geometry.n_users = 6;
    c.geometry.n_antennas = nt;
    c.algorithm = Algorithm::maxr_powersave;
    c.pt = 1.0;
    c.r_cap = 5.0;
    double sum = 0.0;
    int n = 0;
    for (int i = 0; i < 200; ++i) {
      const Scenario s = make_scenario(c, derive_seed(77, static_cast<std::uint64_t>(i)));
      if (s.users.empty()) continue;
      try {
        sum += run_design(s, c).report.total_power;
        ++n;
      } catch (const Error&) {
      }
    }
    means.push_back(n > 0 ? sum / n : 0.0);
    row += format("%s%d:%.3f", row.empty() ? "" : " ", nt, means.back());
  }
  bool ok = true;
  for (std::size_t i = 0; i < means.size(); ++i) {
    ok = ok && means[i] >= 0.4 && means[i] <= 0.9;
    if (i > 0) ok = ok && means[i] < means[i - 1];
  }
  return {ok, "mean power by N_t [" + row + "] (strictly decreasing, within [0.4, 0.9])"};
}

Verdict simplified_variance() {
  const char* names[3] = {"MRT", "ZF", "constant-offset"};
  double worst[3] = {0.0, 0.0, 0.0};
  int users = 0;
  for (int nt : {32, 48, 64}) {
    for (int k : {2, 4, 6}) {
      for (std::uint64_t seed = 0; seed < 10; ++seed) {
        const Scenario s = unit_scale(nt, k, 0.1, 100000 + 100 * nt + 10 * k + seed);
        const CMat h = s.estimated_channels();
        const CMat dirs[3] = {mrt_directions(h), zf_directions(h), const_offset_directions(s)};
        for (int d = 0; d < 3; ++d) {
          const CouplingMatrix a(LoadingProblem::from_scenario(s, dirs[d]));
          RVec beta;
          try {
            beta = alg2_power_load(a, RVec::Constant(k, 2.0), VarianceMode::exact).powers;
          } catch (const Error&) {
            continue;
          }
          for (int j = 0; j < k; ++j) {
            ++users;
            worst[d] = std::max(worst[d], rel(a.variance(j, beta, VarianceMode::simplified),
                                              a.variance(j, beta, VarianceMode::exact)));
          }
        }
      }
    }
  }
  std::string by;
  for (int d = 0; d < 3; ++d) by += format("%s%s %.2f%%", d ? ", " : "", names[d], 100.0 * worst[d]);
  const double w = std::max({worst[0], worst[1], worst[2]});
  return {users > 0 && w <= 0.05,
          format("%d users (N_t in {32,48,64}, K in {2,4,6}): worst relative variance error by direction type "
                 "[%s] (<= 5%%)",
                 users, by.c_str())};
}

}  // namespace

int main(int argc, char** argv) {
  bool strict = false;
  for (int i = 1; i < argc; ++i) strict = strict || std::strcmp(argv[i], "--strict") == 0;

  const std::vector<Criterion> criteria{
      {1, "perfect-CSI recovery", 0.0, perfect_csi},
      {2, "moment oracle", 60.0, moment_oracle},
      {3, "Gaussian tail calibration", 600.0, tail_calibration},
      {4, "orthogonal-channel closed forms", 0.0, orthogonal_closed_forms},
      {5, "power-loading convergence", 0.0, alg2_iterations},
      {6, "budget and equality invariants", 0.0, budget_and_equality},
      {7, "average-outage perturbation", 0.0, perturbation},
      {8, "two-user brute-force oracle", 300.0, small_oracle},
      {9, "power-saving trend", 900.0, power_saving_trend},
      {10, "simplified variance", 0.0, simplified_variance},
  };

  int failed = 0;
  for (const auto& c : criteria) {
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, std::string("unexpected error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (c.time_limit_s > 0.0 && secs > c.time_limit_s) {
      v.pass = false;
      v.detail += format("; took %.0f s, limit %.0f s", secs, c.time_limit_s);
    }
    failed += !v.pass;
    std::printf("%s  %2d  %-32s %s [%.1f s]\n", v.pass ? "PASS" : "FAIL", c.id, c.title, v.detail.c_str(), secs);
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria pass\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return strict && failed > 0 ? 1 : 0;
}
