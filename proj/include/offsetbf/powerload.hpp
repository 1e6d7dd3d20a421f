#pragma once

// Robust power loading for fixed beamforming directions.
//
// With the directions frozen, the offset constraints mu_f = r sigma_f are K
// linear equations in the powers once sigma_f is held fixed:
//
//   A beta = sigma^2 + sigma_f (.) r,
//   A_ii = |h_i^H u_i|^2 / gamma_i + sigma_e_i^2 / gamma_i,
//   A_ij = -|h_i^H u_j|^2 - sigma_e_i^2            (i != j).
//
// Alternating that solve with a sigma_f update gives the loading fixed point.
// The same machinery maximizes a common offset under a power budget, picks
// users to reschedule, caps the offset to save power, and redistributes
// offsets to lower the average outage.

#include "offsetbf/channel.hpp"
#include "offsetbf/core.hpp"
#include "offsetbf/stats.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace offsetbf {

enum class VarianceMode { automatic, exact, simplified };

inline VarianceMode parse_variance_mode(std::string_view s) {
  if (s == "auto" || s == "automatic") return VarianceMode::automatic;
  if (s == "exact") return VarianceMode::exact;
  if (s == "simplified") return VarianceMode::simplified;
  throw InvalidConfig("unknown variance mode '" + std::string(s) + "'");
}

inline std::string_view to_string(VarianceMode m) {
  switch (m) {
    case VarianceMode::automatic: return "auto";
    case VarianceMode::exact: return "exact";
    case VarianceMode::simplified: return "simplified";
  }
  return "auto";
}

/// automatic -> exact up to 16 antennas, simplified above.
inline VarianceMode resolve(VarianceMode m, Eigen::Index n_antennas) {
  if (m != VarianceMode::automatic) return m;
  return n_antennas <= 16 ? VarianceMode::exact : VarianceMode::simplified;
}

/// Everything the loading needs about a set of users and their directions.
struct LoadingProblem {
  CMat channels;    // N_t x K estimated channels
  CMat directions;  // N_t x K unit directions
  RVec gamma;
  RVec sigma_e;
  RVec noise;

  int size() const { return static_cast<int>(channels.cols()); }

  static LoadingProblem from_scenario(const Scenario& s, const CMat& directions) {
    return {s.estimated_channels(), directions, s.gammas(), s.sigma_e(), s.noise_powers()};
  }

  LoadingProblem subset(std::span<const int> keep) const {
    LoadingProblem p;
    const auto n = static_cast<Eigen::Index>(keep.size());
    p.channels.resize(channels.rows(), n);
    p.directions.resize(directions.rows(), n);
    p.gamma.resize(n);
    p.sigma_e.resize(n);
    p.noise.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      const int k = keep[static_cast<std::size_t>(i)];
      p.channels.col(i) = channels.col(k);
      p.directions.col(i) = directions.col(k);
      p.gamma(i) = gamma(k);
      p.sigma_e(i) = sigma_e(k);
      p.noise(i) = noise(k);
    }
    return p;
  }
};

/// The K x K coupling matrix with its inverse and the cached projections
/// h_i^H u_j used by the variance updates. Immutable once built.
class CouplingMatrix {
 public:
  explicit CouplingMatrix(LoadingProblem p) : p_(std::move(p)) {
    const int n = p_.size();
    if (n < 1) throw InvalidArgument("coupling matrix needs at least one user");
    for (int k = 0; k < n; ++k)
      if (std::abs(p_.directions.col(k).norm() - 1.0) > 1e-9)
        throw InvalidArgument("directions must be unit norm");

    inner_ = p_.channels.adjoint() * p_.directions;  // (i, j) = h_i^H u_j
    gains_ = inner_.cwiseAbs2();
    gram_ = p_.directions.adjoint() * p_.directions;

    a_.resize(n, n);
    for (int i = 0; i < n; ++i) {
      const double se2 = p_.sigma_e(i) * p_.sigma_e(i);
      for (int j = 0; j < n; ++j)
        a_(i, j) = i == j ? (gains_(i, i) + se2) / p_.gamma(i) : -gains_(i, j) - se2;
    }
    Eigen::FullPivLU<RMat> lu(a_);
    const double scale = a_.cwiseAbs().maxCoeff();
    lu.setThreshold(1e-13);
    if (scale == 0.0 || !lu.isInvertible())
      throw DegenerateGeometry("coupling matrix is singular (near-identical users?)");
    a_inv_ = lu.inverse();
  }

  int size() const { return p_.size(); }
  const LoadingProblem& problem() const { return p_; }
  const RMat& matrix() const { return a_; }
  const RMat& inverse() const { return a_inv_; }
  /// |h_i^H u_j|^2.
  const RMat& gains() const { return gains_; }
  const CMat& projections() const { return inner_; }
  const RVec& noise() const { return p_.noise; }

  /// mu_f for every user: A beta - sigma^2.
  RVec means(const RVec& beta) const { return a_ * beta - p_.noise; }

  double variance(int k, const RVec& beta, VarianceMode mode) const {
    const double se = p_.sigma_e(k);
    if (se == 0.0) return 0.0;
    if (resolve(mode, p_.channels.rows()) == VarianceMode::simplified)
      return offset_var_simplified(k, p_.gamma(k), se, beta, gains_.row(k).transpose());

    const int n = size();
    RVec coef(n);
    for (int j = 0; j < n; ++j) coef(j) = j == k ? beta(j) / p_.gamma(k) : -beta(j);
    // Q_k h_k = sum_j coef_j u_j (u_j^H h_k) with u_j^H h_k = conj(h_k^H u_j).
    CVec a(n);
    for (int j = 0; j < n; ++j) a(j) = coef(j) * std::conj(inner_(k, j));
    const double qh2 = a.dot(gram_ * a).real();
    double trq2 = 0.0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) trq2 += coef(i) * coef(j) * std::norm(gram_(i, j));
    const double se2 = se * se;
    return std::max(0.0, 2.0 * se2 * qh2 + se2 * se2 * trq2);
  }

  RVec sigma_f(const RVec& beta, VarianceMode mode) const {
    RVec s(size());
    for (int k = 0; k < size(); ++k) s(k) = std::sqrt(variance(k, beta, mode));
    return s;
  }

  /// Largest |eigenvalue| of A^{-1}; below one on well-conditioned geometries.
  double inverse_spectral_radius() const {
    Eigen::EigenSolver<RMat> es(a_inv_, false);
    return es.eigenvalues().cwiseAbs().maxCoeff();
  }

 private:
  LoadingProblem p_;
  CMat inner_;
  RMat gains_;
  CMat gram_;
  RMat a_;
  RMat a_inv_;
};

inline CouplingMatrix coupling_matrix(const CMat& channels, const CMat& directions, const RVec& gamma,
                                      const RVec& sigma_e, const RVec& noise) {
  return CouplingMatrix({channels, directions, gamma, sigma_e, noise});
}

struct DesignReport {
  RVec powers;
  RVec offsets;
  std::vector<OffsetStats> stats;
  RVec predicted_outage;
  double total_power = 0.0;
  /// Indices (into the caller's user list) that were served / dropped.
  std::vector<int> served;
  std::vector<int> rescheduled;
  int iterations_used = 0;
  /// Common offset of the max-offset problem; NaN when not applicable.
  double common_offset = std::numeric_limits<double>::quiet_NaN();
  /// Zero error variance: any offset is achievable once the means are met.
  bool unbounded_offset = false;
  VarianceMode variance_mode = VarianceMode::exact;
  /// sigma_f held fixed in the final linear solve, so that
  /// powers = A^{-1} (sigma^2 + held_sigma_f (.) offsets) exactly.
  RVec held_sigma_f;
};

struct LoadingOptions {
  double tol = 1e-6;
  int max_iters = 1000;
};

namespace detail {

inline std::vector<int> iota_indices(int n) {
  std::vector<int> v(static_cast<std::size_t>(n));
  std::iota(v.begin(), v.end(), 0);
  return v;
}

/// Relative change of sigma_f, which at mu = r sigma_f_old is exactly the
/// equality residual |mu - r sigma_f_new| / mu. Users with r_k = 0 are
/// unaffected by sigma_f and skipped.
inline double offset_residual(const RVec& sf_old, const RVec& sf_new, const RVec& r) {
  double res = 0.0;
  for (Eigen::Index k = 0; k < sf_new.size(); ++k) {
    if (r(k) == 0.0) continue;
    const double num = std::abs(sf_new(k) - sf_old(k));
    if (num == 0.0) continue;
    res = std::max(res, num / std::max(std::abs(sf_old(k)), std::numeric_limits<double>::min()));
  }
  return res;
}

inline DesignReport make_report(const CouplingMatrix& a, const RVec& beta, const RVec& r, VarianceMode mode,
                                int iterations) {
  DesignReport rep;
  rep.powers = beta;
  rep.offsets = r;
  rep.total_power = beta.sum();
  rep.iterations_used = iterations;
  rep.variance_mode = resolve(mode, a.problem().channels.rows());
  const RVec mu = a.means(beta);
  const RVec sf = a.sigma_f(beta, mode);
  rep.predicted_outage.resize(a.size());
  for (int k = 0; k < a.size(); ++k) {
    rep.stats.push_back({mu(k), sf(k)});
    rep.predicted_outage(k) = predicted_outage(rep.stats.back());
  }
  rep.served = iota_indices(a.size());
  return rep;
}

inline void require_finite(const RVec& beta, const char* stage) {
  if (!beta.allFinite()) throw ConvergenceFailure(stage, "iterate became non-finite", beta);
}

}  // namespace detail

/// Fixed-point loading: beta = A^{-1} sigma^2 + A^{-1} (sigma_f (.) r) with
/// sigma_f recomputed from beta, warm-started at sigma_f = 0 (the
/// perfect-CSI loading). Stops once the offset equalities hold to `tol`.
inline DesignReport alg2_power_load(const CouplingMatrix& a, const RVec& r,
                                    VarianceMode mode = VarianceMode::automatic, LoadingOptions opt = {}) {
  if (r.size() != a.size()) throw InvalidArgument("offset vector length differs from user count");
  RVec sf = RVec::Zero(a.size());
  RVec beta;
  for (int it = 1; it <= opt.max_iters; ++it) {
    beta = a.inverse() * (a.noise() + sf.cwiseProduct(r));
    detail::require_finite(beta, "power-loading");
    const RVec held = sf;
    const RVec sf_new = a.sigma_f(beta, mode);
    const double res = detail::offset_residual(sf, sf_new, r);
    sf = sf_new;
    if (res < opt.tol) {
      if ((beta.array() < 0.0).any())
        throw InfeasibleLoading("negative power at the loading fixed point; reschedule users", beta);
      DesignReport rep = detail::make_report(a, beta, r, mode, it);
      rep.held_sigma_f = held;
      return rep;
    }
  }
  throw ConvergenceFailure("power-loading", "no fixed point within the iteration limit", beta);
}

/// Maximizes a common offset r subject to sum(beta) = Pt. Each pass sets
/// r = (Pt - 1^T A^{-1} sigma^2) / (1^T A^{-1} sigma_f), so the budget holds
/// with equality at every iterate.
inline DesignReport max_r_power_load(const CouplingMatrix& a, double pt,
                                     VarianceMode mode = VarianceMode::automatic, LoadingOptions opt = {}) {
  if (!(pt > 0.0)) throw InvalidArgument("power budget must be positive");
  const int n = a.size();
  const RVec base = a.inverse() * a.noise();
  const double base_sum = base.sum();
  const RVec ones_inv = a.inverse().transpose() * RVec::Ones(n);  // (1^T A^{-1})^T

  RVec sf = a.sigma_f(base, mode);
  if (sf.maxCoeff() == 0.0) {
    if ((base.array() < 0.0).any() || base_sum > pt)
      throw InfeasibleLoading("targets cannot be met within the budget even without uncertainty", base);
    DesignReport rep = detail::make_report(a, base, RVec::Constant(n, std::numeric_limits<double>::infinity()),
                                           mode, 1);
    rep.common_offset = std::numeric_limits<double>::infinity();
    rep.unbounded_offset = true;
    rep.held_sigma_f = sf;
    return rep;
  }

  RVec beta;
  double r = 0.0;
  for (int it = 1; it <= opt.max_iters; ++it) {
    const double denom = ones_inv.dot(sf);
    if (!(denom > 0.0)) throw InfeasibleLoading("offset cannot be traded for power on these directions", base);
    r = (pt - base_sum) / denom;
    beta = base + r * (a.inverse() * sf);
    detail::require_finite(beta, "max-offset");
    const RVec held = sf;
    const RVec sf_new = a.sigma_f(beta, mode);
    const double res = detail::offset_residual(sf, sf_new, RVec::Ones(n));
    sf = sf_new;
    if (res < opt.tol) {
      if ((beta.array() < 0.0).any())
        throw InfeasibleLoading("negative power at the max-offset solution; reschedule users", beta);
      DesignReport rep = detail::make_report(a, beta, RVec::Constant(n, r), mode, it);
      rep.common_offset = r;
      rep.held_sigma_f = held;
      return rep;
    }
  }
  throw ConvergenceFailure("max-offset", "no fixed point within the iteration limit", beta);
}

struct RescheduleResult {
  std::vector<int> retained;
  DesignReport report;
};

/// Rebuilds directions for a retained subset; used when the caller wants the
/// directions redesigned after each drop instead of kept.
using DirectionRule = std::function<CMat(const LoadingProblem&)>;

/// While the achievable common offset stays below r_min and at least two
/// users remain, drop the user with the largest entry of A^{-1} sigma^2.
/// A singular subset counts as unreachable.
inline RescheduleResult reschedule(const LoadingProblem& problem, double pt, double r_min,
                                   VarianceMode mode = VarianceMode::automatic, LoadingOptions opt = {},
                                   const DirectionRule& redesign = {}) {
  std::vector<int> keep = detail::iota_indices(problem.size());
  std::vector<int> dropped;
  while (true) {
    LoadingProblem sub = problem.subset(keep);
    if (redesign && keep.size() < static_cast<std::size_t>(problem.size())) sub.directions = redesign(sub);
    std::optional<CouplingMatrix> built;
    try {
      built.emplace(sub);
    } catch (const DegenerateGeometry&) {
      if (keep.size() == 1) throw;
      // No inverse to rank by; drop the user with the weakest own-direction gain.
      Eigen::Index weakest = 0;
      RVec own(static_cast<Eigen::Index>(keep.size()));
      for (Eigen::Index i = 0; i < own.size(); ++i)
        own(i) = std::norm(sub.channels.col(i).dot(sub.directions.col(i))) / sub.gamma(i);
      own.minCoeff(&weakest);
      dropped.push_back(keep[static_cast<std::size_t>(weakest)]);
      keep.erase(keep.begin() + weakest);
      continue;
    }
    const CouplingMatrix& a = *built;

    std::optional<DesignReport> rep;
    double r = -std::numeric_limits<double>::infinity();
    try {
      rep = max_r_power_load(a, pt, mode, opt);
      r = rep->common_offset;
    } catch (const InfeasibleLoading&) {
      if (keep.size() == 1) throw;
    } catch (const ConvergenceFailure&) {
      if (keep.size() == 1) throw;
    }

    if (r >= r_min || keep.size() == 1) {
      DesignReport out = *rep;
      out.served = keep;
      out.rescheduled = dropped;
      return {keep, std::move(out)};
    }
    const RVec load = a.inverse() * a.noise();
    Eigen::Index worst = 0;
    load.maxCoeff(&worst);
    dropped.push_back(keep[static_cast<std::size_t>(worst)]);
    keep.erase(keep.begin() + worst);
  }
}

/// Max-offset loading, re-solved at r = r_cap when the budget affords more
/// robustness than needed; the unused budget is saved.
inline DesignReport power_saving_cap(const CouplingMatrix& a, double pt, double r_cap,
                                     VarianceMode mode = VarianceMode::automatic, LoadingOptions opt = {}) {
  if (!(r_cap > 0.0)) throw InvalidArgument("offset cap must be positive");
  DesignReport rep = max_r_power_load(a, pt, mode, opt);
  if (!(rep.common_offset > r_cap)) return rep;
  DesignReport capped = alg2_power_load(a, RVec::Constant(a.size(), r_cap), mode, opt);
  capped.common_offset = r_cap;
  return capped;
}

// ---------------------------------------------------------------------------
// Average-outage redistribution

/// Coefficients of a0 r^2 + a1 r + a2.
struct QuadraticFit {
  double a0 = 0.0;
  double a1 = 0.0;
  double a2 = 0.0;
  double operator()(double r) const { return (a0 * r + a1) * r + a2; }
};

/// Least-squares quadratic through `fn` sampled on a uniform grid.
template <class Fn>
QuadraticFit fit_quadratic(Fn&& fn, double lo, double hi, int n_grid) {
  if (!(lo < hi)) throw InvalidArgument("fit interval must satisfy lo < hi");
  if (n_grid < 3) throw InvalidArgument("fit needs at least three grid points");
  RMat x(n_grid, 3);
  RVec y(n_grid);
  for (int i = 0; i < n_grid; ++i) {
    const double r = lo + (hi - lo) * i / (n_grid - 1);
    x(i, 0) = r * r;
    x(i, 1) = r;
    x(i, 2) = 1.0;
    y(i) = fn(r);
  }
  const RVec c = x.colPivHouseholderQr().solve(y);
  return {c(0), c(1), c(2)};
}

inline QuadraticFit fit_normal_cdf_quadratic(double lo = 1.0, double hi = 3.0, int n_grid = 201) {
  return fit_quadratic([](double r) { return normal_cdf(r); }, lo, hi, n_grid);
}

struct Perturbation {
  RVec delta_r;
  RVec offsets;
  RVec powers;
};

/// Redistributes the common offset r* across users to maximize the sum of
/// the quadratic CDF surrogate at fixed total power. sigma_f is held at the
/// value that produced beta* (DesignReport::held_sigma_f); the new powers
/// follow from one linear solve and sum to the same total.
inline Perturbation average_outage_perturbation(const CouplingMatrix& a, const RVec& sigma_f, double r_star,
                                                const QuadraticFit& quad) {
  if (quad.a0 == 0.0) throw InvalidArgument("quadratic coefficient a0 must be nonzero");
  const int n = a.size();
  const RVec ones = RVec::Ones(n);
  const RVec b = (a.inverse().transpose() * ones).cwiseProduct(sigma_f);
  const double bb = b.squaredNorm();

  Perturbation out;
  if (bb == 0.0) {
    out.delta_r = RVec::Zero(n);
  } else {
    // delta = (-slope 1 - zeta b) / (2 a0) with zeta = -slope b^T 1 / b^T b,
    // written as a projection of 1 off b so that equal entries of b give an
    // exact zero. Differences at rounding level count as equal.
    const double slope = 2.0 * quad.a0 * r_star + quad.a1;
    const double tie = 16.0 * std::numeric_limits<double>::epsilon() * b.cwiseAbs().maxCoeff();
    out.delta_r.resize(n);
    for (int k = 0; k < n; ++k) {
      double proj = 0.0;
      for (int j = 0; j < n; ++j) {
        const double d = b(j) - b(k);
        if (std::abs(d) > tie) proj += b(j) * d;
      }
      out.delta_r(k) = -slope * (proj / bb) / (2.0 * quad.a0);
    }
  }
  out.offsets = RVec::Constant(n, r_star) + out.delta_r;
  out.powers = a.inverse() * (a.noise() + sigma_f.cwiseProduct(out.offsets));
  return out;
}

}  // namespace offsetbf
