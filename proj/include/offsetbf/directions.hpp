#pragma once

// Beamforming directions.
//
// Baselines (ZF, MRT, RZF) come straight from the estimated channel matrix.
// The robust design solves for the dual variables nu_k of the offset
// constraints by a fixed-point iteration and then takes u_k as the principal
// eigenvector of the stationarity matrix
//
//   B_k = nu_k/gamma_k h_k h_k^H - sum_{j!=k} nu_j h_j h_j^H
//         + (nu_k sigma_k^2/gamma_k - sum_{j!=k} nu_j sigma_j^2) I
//         - r sqrt2 sigma_k nu_k/gamma_k He{psi_k h_k^H}
//         + sum_{j!=k} r sqrt2 sigma_j nu_j He{psi_j h_j^H},
//
// where He{X} = (X + X^H)/2 and psi_k is the unit direction of Q_k h_k. With
// zero uncertainty B_k reduces to the perfect-CSI (constant-offset) matrix.

#include "offsetbf/channel.hpp"
#include "offsetbf/core.hpp"
#include "offsetbf/powerload.hpp"
#include "offsetbf/stats.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <numbers>
#include <vector>

namespace offsetbf {

/// Rotates u so that h^H u is real and nonnegative.
inline CVec phase_align(const CVec& u, const CVec& h) {
  const cplx p = h.dot(u);
  if (std::abs(p) == 0.0) return u;
  return u * (std::conj(p) / std::abs(p));
}

/// Columns of H (H^H H)^{-1}, normalized. H is N_t x K with K <= N_t.
inline CMat zf_directions(const CMat& h) {
  const Eigen::Index k = h.cols();
  if (k > h.rows()) throw DegenerateChannels("zero forcing needs K <= N_t");
  Eigen::JacobiSVD<CMat> svd(h);
  const RVec sv = svd.singularValues();
  if (sv.size() == 0 || sv(0) == 0.0 || sv(sv.size() - 1) < 1e-12 * sv(0))
    throw DegenerateChannels("estimated channel matrix is rank deficient");
  const CMat gram = h.adjoint() * h;
  CMat w = h * gram.llt().solve(CMat::Identity(k, k));
  for (Eigen::Index j = 0; j < k; ++j) w.col(j) = phase_align(w.col(j).normalized(), h.col(j));
  return w;
}

inline CMat mrt_directions(const CMat& h) {
  CMat u(h.rows(), h.cols());
  for (Eigen::Index j = 0; j < h.cols(); ++j) {
    const double n = h.col(j).norm();
    if (n == 0.0) throw DegenerateChannels("zero channel has no MRT direction");
    u.col(j) = h.col(j) / n;
  }
  return u;
}

/// (sum_j h_j h_j^H + loading I)^{-1} h_k, normalized.
inline CMat rzf_directions(const CMat& h, double loading) {
  if (!(loading > 0.0)) throw InvalidArgument("RZF loading must be positive");
  const Eigen::Index n = h.rows();
  const CMat m = h * h.adjoint() + loading * CMat::Identity(n, n);
  CMat w = m.llt().solve(h);
  for (Eigen::Index j = 0; j < h.cols(); ++j) {
    const double norm = w.col(j).norm();
    if (norm == 0.0) throw DegenerateChannels("zero channel has no RZF direction");
    w.col(j) = phase_align(w.col(j) / norm, h.col(j));
  }
  return w;
}

/// Dual variables of the offset constraints and the proxy directions they
/// were computed against.
struct DualState {
  RVec nu;
  CMat psi_direction;  // unit columns, direction of Q_k h_k
  CMat d;              // r sqrt2 sigma_e_k psi_k
};

struct FixedPointOptions {
  double tol = 1e-10;
  int max_sweeps = 500;
};

struct EigenOptions {
  double tol = 1e-12;
  int max_iters = 20000;
  bool allow_fallback = true;
};

namespace detail {

inline void check_dims(const CMat& h, const RVec& gamma) {
  if (h.cols() < 1) throw InvalidArgument("no users");
  if (gamma.size() != h.cols()) throw InvalidArgument("gamma length differs from user count");
  for (Eigen::Index k = 0; k < gamma.size(); ++k)
    if (!(gamma(k) > 0.0)) throw InvalidArgument("SINR targets must be positive");
  for (Eigen::Index k = 0; k < h.cols(); ++k)
    if (h.col(k).squaredNorm() == 0.0) throw InvalidArgument("zero-norm channel");
}

inline RVec massive_init(const CMat& h, const RVec& gamma) {
  RVec nu(h.cols());
  for (Eigen::Index k = 0; k < h.cols(); ++k) nu(k) = gamma(k) / h.col(k).squaredNorm();
  return nu;
}

/// B_k as a sum of Hermitian rank-one/rank-two pieces plus a scaled identity.
struct StationarityOperator {
  const CMat* h = nullptr;
  const CMat* psi = nullptr;  // may be null when every robust weight is zero
  RVec proj_weight;           // coefficient of h_j h_j^H
  RVec robust_weight;         // coefficient of He{psi_j h_j^H}
  double diag = 0.0;

  CVec apply(const CVec& v) const {
    const CVec hv = h->adjoint() * v;
    CVec out = diag * v + (*h) * proj_weight.cast<cplx>().cwiseProduct(hv);
    if (psi != nullptr) {
      const CVec pv = psi->adjoint() * v;
      out += 0.5 * ((*psi) * robust_weight.cast<cplx>().cwiseProduct(hv) +
                    (*h) * robust_weight.cast<cplx>().cwiseProduct(pv));
    }
    return out;
  }

  CMat dense() const {
    const Eigen::Index n = h->rows();
    CMat b = diag * CMat::Identity(n, n);
    for (Eigen::Index j = 0; j < h->cols(); ++j) {
      b += proj_weight(j) * h->col(j) * h->col(j).adjoint();
      if (psi != nullptr && robust_weight(j) != 0.0)
        b += robust_weight(j) * hermitian_part(psi->col(j) * h->col(j).adjoint());
    }
    return b;
  }

  /// Upper bound on the spectral norm.
  double norm_bound() const {
    double s = std::abs(diag);
    for (Eigen::Index j = 0; j < h->cols(); ++j) {
      s += std::abs(proj_weight(j)) * h->col(j).squaredNorm();
      if (psi != nullptr) s += std::abs(robust_weight(j)) * h->col(j).norm() * psi->col(j).norm();
    }
    return s;
  }
};

inline StationarityOperator stationarity_operator(int k, const CMat& h, const RVec& gamma, const RVec& nu,
                                                  const RVec& sigma_e, double r, const CMat* psi) {
  const Eigen::Index n_users = h.cols();
  StationarityOperator op;
  op.h = &h;
  op.psi = psi;
  op.proj_weight.resize(n_users);
  op.robust_weight.resize(n_users);
  for (Eigen::Index j = 0; j < n_users; ++j) {
    const double s2 = sigma_e(j) * sigma_e(j);
    const double robust = r * std::numbers::sqrt2 * sigma_e(j) * nu(j);
    if (j == k) {
      op.proj_weight(j) = nu(j) / gamma(j);
      op.diag += nu(j) * s2 / gamma(j);
      op.robust_weight(j) = -robust / gamma(j);
    } else {
      op.proj_weight(j) = -nu(j);
      op.diag -= nu(j) * s2;
      op.robust_weight(j) = robust;
    }
  }
  return op;
}

/// Principal (largest real eigenvalue) eigenvector of a Hermitian operator
/// by shifted power iteration, with a dense eigensolver fallback.
inline CVec principal_eigenvector(const StationarityOperator& op, const CVec& start, const EigenOptions& opt) {
  const double shift = op.norm_bound();
  CVec x = start.normalized();
  if (shift > 0.0) {
    for (int it = 0; it < opt.max_iters; ++it) {
      const CVec bx = op.apply(x);
      const double rq = x.dot(bx).real();
      if ((bx - rq * x).norm() <= opt.tol * shift) return x;
      x = (bx + shift * x).normalized();
    }
  } else {
    return x;  // zero operator: every vector is an eigenvector
  }
  if (!opt.allow_fallback) throw ConvergenceFailure("directions", "power iteration did not converge");
  Eigen::SelfAdjointEigenSolver<CMat> es(op.dense());
  return es.eigenvectors().col(es.eigenvalues().size() - 1);
}

}  // namespace detail

/// Gauss-Seidel solution of
///   1/nu_k = h_k^H M_k^{-1} h_k (1 + 1/gamma_k),
///   M_k = I + sum_j nu_j h_j h_j^H - (nu_k s_k^2/gamma_k - sum_{j!=k} nu_j s_j^2) I
///         + r sqrt2 s_k nu_k/gamma_k He{psi_k h_k^H} - sum_{j!=k} r sqrt2 s_j nu_j He{psi_j h_j^H},
/// started at nu_k = gamma_k / ||h_k||^2. `psi` holds the proxy directions
/// (the ZF directions on the first pass).
inline DualState solve_nu(const CMat& h, const RVec& gamma, const RVec& sigma_e, double r, const CMat& psi,
                          FixedPointOptions opt = {}) {
  detail::check_dims(h, gamma);
  if (!(r >= 0.0)) throw InvalidArgument("offset coefficient must be nonnegative");
  if (sigma_e.size() != h.cols() || psi.cols() != h.cols() || psi.rows() != h.rows())
    throw InvalidArgument("dimension mismatch in robust dual solve");
  const Eigen::Index n = h.rows();
  const Eigen::Index n_users = h.cols();

  DualState st;
  st.nu = detail::massive_init(h, gamma);
  st.psi_direction = psi;
  for (Eigen::Index k = 0; k < n_users; ++k) st.psi_direction.col(k).normalize();

  for (int sweep = 0; sweep < opt.max_sweeps; ++sweep) {
    double change = 0.0;
    for (Eigen::Index k = 0; k < n_users; ++k) {
      // M_k = I + (1 + 1/gamma_k) nu_k h_k h_k^H - B_k.
      const auto op = detail::stationarity_operator(static_cast<int>(k), h, gamma, st.nu, sigma_e, r,
                                                    &st.psi_direction);
      CMat m = CMat::Identity(n, n) - op.dense();
      m += st.nu(k) * (1.0 + 1.0 / gamma(k)) * h.col(k) * h.col(k).adjoint();
      const CVec x = m.partialPivLu().solve(h.col(k));
      const double q = h.col(k).dot(x).real();
      if (!(q > 0.0) || !std::isfinite(q))
        throw ConvergenceFailure("robust-dual", "fixed-point matrix lost definiteness", st.nu);
      const double next = 1.0 / (q * (1.0 + 1.0 / gamma(k)));
      change = std::max(change, std::abs(next - st.nu(k)) / next);
      st.nu(k) = next;
    }
    if (change < opt.tol) {
      st.d = st.psi_direction;
      for (Eigen::Index k = 0; k < n_users; ++k) st.d.col(k) *= r * std::numbers::sqrt2 * sigma_e(k);
      return st;
    }
  }
  throw ConvergenceFailure("robust-dual", "nu fixed point did not converge", st.nu);
}

/// Principal eigenvectors of the stationarity matrices, phase aligned so
/// that h_k^H u_k is real and nonnegative.
inline CMat directions_from_nu(const DualState& dual, const CMat& h, const RVec& gamma, const RVec& sigma_e,
                               double r, EigenOptions opt = {}) {
  detail::check_dims(h, gamma);
  CMat u(h.rows(), h.cols());
  for (Eigen::Index k = 0; k < h.cols(); ++k) {
    const auto op = detail::stationarity_operator(static_cast<int>(k), h, gamma, dual.nu, sigma_e, r,
                                                  &dual.psi_direction);
    const CVec v = detail::principal_eigenvector(op, h.col(k), opt);
    u.col(k) = phase_align(v.normalized(), h.col(k));
  }
  return u;
}

/// Perfect-CSI fixed point 1/nu_k = h_k^H (I + sum_j nu_j h_j h_j^H)^{-1} h_k (1 + 1/gamma_k).
/// One factorization per sweep; the in-sweep updates are rank-one
/// Sherman-Morrison corrections of the shared inverse.
inline RVec solve_nu_constant_offset(const CMat& h, const RVec& gamma, FixedPointOptions opt = {}) {
  detail::check_dims(h, gamma);
  const Eigen::Index n = h.rows();
  RVec nu = detail::massive_init(h, gamma);
  for (int sweep = 0; sweep < opt.max_sweeps; ++sweep) {
    CMat m = CMat::Identity(n, n);
    for (Eigen::Index j = 0; j < h.cols(); ++j) m += nu(j) * h.col(j) * h.col(j).adjoint();
    CMat inv = m.llt().solve(CMat::Identity(n, n));
    double change = 0.0;
    for (Eigen::Index k = 0; k < h.cols(); ++k) {
      const CVec x = inv * h.col(k);
      const double q = h.col(k).dot(x).real();
      const double next = 1.0 / (q * (1.0 + 1.0 / gamma(k)));
      const double step = next - nu(k);
      inv -= (step / (1.0 + step * q)) * x * x.adjoint();
      change = std::max(change, std::abs(step) / next);
      nu(k) = next;
    }
    if (!nu.allFinite()) throw ConvergenceFailure("constant-offset-dual", "iterate became non-finite", nu);
    if (change < opt.tol) return nu;
  }
  throw ConvergenceFailure("constant-offset-dual", "nu fixed point did not converge", nu);
}

/// Principal eigenvectors of nu_k/gamma_k h_k h_k^H - sum_{j!=k} nu_j h_j h_j^H.
inline CMat directions_constant_offset(const RVec& nu, const CMat& h, const RVec& gamma, EigenOptions opt = {}) {
  DualState dual;
  dual.nu = nu;
  dual.psi_direction = CMat::Zero(h.rows(), h.cols());
  return directions_from_nu(dual, h, gamma, RVec::Zero(h.cols()), 0.0, opt);
}

/// Channel-hardening approximation nu_k = gamma_k / ||h_k||^2.
inline RVec nu_massive_approx(const CMat& h, const RVec& gamma) {
  detail::check_dims(h, gamma);
  return detail::massive_init(h, gamma);
}

struct Alg1Options {
  /// Extra passes that re-estimate psi_k from the designed beamformers.
  int refinements = 0;
  VarianceMode variance_mode = VarianceMode::automatic;
  LoadingOptions loading{};
  FixedPointOptions fixed_point{};
  EigenOptions eigen{};
};

struct Alg1Result {
  BeamformerSet beamformers;
  DesignReport report;
  DualState dual;
};

/// ZF proxies -> robust duals -> eigen directions -> fixed-point loading at a
/// common offset r.
inline Alg1Result alg1_design(const Scenario& s, double r, const Alg1Options& opt = {}) {
  s.validate();
  if (!s.all_iid()) throw InvalidConfig("the closed-form design assumes i.i.d. uncertainty");
  const CMat h = s.estimated_channels();
  const RVec gamma = s.gammas();
  const RVec sigma_e = s.sigma_e();

  CMat psi = zf_directions(h);
  Alg1Result out;
  for (int pass = 0; pass <= opt.refinements; ++pass) {
    out.dual = solve_nu(h, gamma, sigma_e, r, psi, opt.fixed_point);
    const CMat u = directions_from_nu(out.dual, h, gamma, sigma_e, r, opt.eigen);
    const CouplingMatrix a(LoadingProblem::from_scenario(s, u));
    out.report = alg2_power_load(a, RVec::Constant(s.size(), r), opt.variance_mode, opt.loading);
    out.beamformers = {u, out.report.powers};
    if (pass == opt.refinements) break;
    for (int k = 0; k < s.size(); ++k) {
      const CVec qh = q_matrix(out.beamformers, k, gamma(k)) * h.col(k);
      if (qh.norm() > 0.0) psi.col(k) = qh.normalized();
    }
  }
  return out;
}

}  // namespace offsetbf
