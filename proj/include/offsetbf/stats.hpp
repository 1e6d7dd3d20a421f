#pragma once

// Moments of the SINR slack variable
//
//   f_k(e) = (h_e + e)^H Q_k (h_e + e) - sigma_k^2,
//   Q_k    = beta_k u_k u_k^H / gamma_k - sum_{j != k} beta_j u_j u_j^H,
//
// whose sign decides whether user k meets its SINR target, together with the
// offset coefficient r that turns an outage tolerance into the deterministic
// constraint mu_f >= r sigma_f.

#include "offsetbf/channel.hpp"
#include "offsetbf/core.hpp"

#include <boost/math/special_functions/erf.hpp>

#include <cmath>
#include <numbers>
#include <string_view>

namespace offsetbf {

/// Unit-norm directions (columns of an N_t x K matrix) and their powers;
/// w_k = sqrt(beta_k) u_k.
struct BeamformerSet {
  CMat directions;
  RVec powers;

  int size() const { return static_cast<int>(directions.cols()); }
  Eigen::Index n_antennas() const { return directions.rows(); }

  CVec beamformer(int k) const { return std::sqrt(powers(k)) * directions.col(k); }

  CMat beamformers() const {
    CMat w = directions;
    for (int k = 0; k < size(); ++k) w.col(k) *= std::sqrt(powers(k));
    return w;
  }

  double total_power() const { return powers.sum(); }

  void validate() const {
    if (powers.size() != directions.cols()) throw InvalidArgument("powers and directions disagree in count");
    for (int k = 0; k < size(); ++k) {
      if (std::abs(directions.col(k).norm() - 1.0) > 1e-9) throw InvalidArgument("direction is not unit norm");
      if (!(powers(k) >= 0.0)) throw InvalidArgument("negative power");
    }
  }

  /// Splits explicit beamformers into directions and powers. Zero columns get
  /// an arbitrary unit direction and zero power.
  static BeamformerSet from_beamformers(const CMat& w) {
    BeamformerSet b;
    b.directions = CMat(w.rows(), w.cols());
    b.powers = RVec(w.cols());
    for (Eigen::Index k = 0; k < w.cols(); ++k) {
      const double n = w.col(k).norm();
      b.powers(k) = n * n;
      if (n > 0.0) {
        b.directions.col(k) = w.col(k) / n;
      } else {
        b.directions.col(k) = CVec::Unit(w.rows(), 0);
      }
    }
    return b;
  }
};

struct OffsetStats {
  double mu = 0.0;
  double sigma = 0.0;
};

/// Q_k for the beamformer set and target gamma_k.
inline CMat q_matrix(const BeamformerSet& bf, int k, double gamma_k) {
  if (k < 0 || k >= bf.size()) throw InvalidArgument("user index out of range");
  const Eigen::Index n = bf.n_antennas();
  CMat q = CMat::Zero(n, n);
  for (int j = 0; j < bf.size(); ++j) {
    const double c = j == k ? bf.powers(j) / gamma_k : -bf.powers(j);
    q.noalias() += c * bf.directions.col(j) * bf.directions.col(j).adjoint();
  }
  return q;
}

/// f_k(e) = h_e^H Q h_e + 2 Re(e^H Q h_e) + e^H Q e - sigma^2.
inline double slack_value(const CMat& q, const CVec& h_est, const CVec& e, double noise_power) {
  const CVec qh = q * h_est;
  return h_est.dot(qh).real() + 2.0 * e.dot(qh).real() + e.dot(q * e).real() - noise_power;
}

/// SINR of user k over the channel h (Watts in, ratio out).
inline double sinr(const CVec& h, const BeamformerSet& bf, int k, double noise_power) {
  double interference = 0.0;
  double signal = 0.0;
  for (int j = 0; j < bf.size(); ++j) {
    const double g = std::norm(h.dot(bf.directions.col(j))) * bf.powers(j);
    if (j == k) {
      signal = g;
    } else {
      interference += g;
    }
  }
  return signal / (interference + noise_power);
}

/// Mean and standard deviation of f_k(e) for e ~ CN(m, C).
///
/// With e = m + C^{1/2} g, g ~ CN(0, I) and c = h_e + m:
///   mu      = c^H Q c - sigma^2 + tr(Q C)
///   sigma^2 = 2 c^H Q C Q c + tr((C^{1/2} Q C^{1/2})^2)
/// tr(Q C) equals w_k^H C w_k / gamma_k - sum_{j != k} w_j^H C w_j.
inline OffsetStats offset_stats_general(const BeamformerSet& bf, int k, const UserChannel& user) {
  const CMat root = user.uncertainty.sqrt_covariance();
  const CMat q = q_matrix(bf, k, user.gamma);
  const CVec c = user.h_est + user.uncertainty.mean;
  const CMat& cov = user.uncertainty.covariance;

  const CVec qc = q * c;
  const double mu = c.dot(qc).real() - user.noise_power + (q * cov).trace().real();
  const CVec lin = root * qc;
  const CMat inner = root * q * root;
  const double var = 2.0 * lin.squaredNorm() + (inner * inner).trace().real();
  return {mu, std::sqrt(std::max(var, 0.0))};
}

/// Specialization for e ~ CN(0, sigma_e^2 I).
inline OffsetStats offset_stats_iid(const BeamformerSet& bf, int k, const UserChannel& user) {
  const double se2 = user.uncertainty.sigma_e * user.uncertainty.sigma_e;
  const CMat q = q_matrix(bf, k, user.gamma);
  const CVec qh = q * user.h_est;
  double tr_q = 0.0;
  for (int j = 0; j < bf.size(); ++j) tr_q += j == k ? bf.powers(j) / user.gamma : -bf.powers(j);
  const double mu = user.h_est.dot(qh).real() - user.noise_power + se2 * tr_q;
  const double var = 2.0 * se2 * qh.squaredNorm() + se2 * se2 * q.squaredNorm();
  return {mu, std::sqrt(std::max(var, 0.0))};
}

/// Inputs of the fixed-direction moment formulas for one user.
struct FixedDirectionInputs {
  CVec h_est;
  CMat directions;  // N_t x K, unit columns
  int k = 0;
  double gamma = 1.0;
  double sigma_e = 0.0;
  double noise_power = 1.0;
};

/// mu_f is linear in beta; sigma_f^2 is evaluated through the Gram matrix
/// U^H U and the projections u_j^H h_e, so no N_t x N_t matrix is formed.
inline OffsetStats offset_stats_fixed_directions(const FixedDirectionInputs& in, const RVec& beta) {
  const int n_users = static_cast<int>(in.directions.cols());
  const CVec proj = in.directions.adjoint() * in.h_est;  // u_j^H h_e
  const CMat gram = in.directions.adjoint() * in.directions;
  const double se2 = in.sigma_e * in.sigma_e;

  RVec coef(n_users);
  for (int j = 0; j < n_users; ++j) coef(j) = j == in.k ? beta(j) / in.gamma : -beta(j);

  double mu = -in.noise_power + se2 * coef.sum();
  for (int j = 0; j < n_users; ++j) mu += std::norm(proj(j)) * coef(j);

  const CVec a = coef.cast<cplx>().cwiseProduct(proj);
  const double qh2 = a.dot(gram * a).real();
  double trq2 = 0.0;
  for (int i = 0; i < n_users; ++i)
    for (int j = 0; j < n_users; ++j) trq2 += coef(i) * coef(j) * std::norm(gram(i, j));
  const double var = 2.0 * se2 * qh2 + se2 * se2 * trq2;
  return {mu, std::sqrt(std::max(var, 0.0))};
}

/// Variance with the cross terms u_j^H u_i (j != i) dropped; O(K) given the
/// cached |h_e^H u_j|^2 row.
inline double offset_var_simplified(int k, double gamma_k, double sigma_e, const RVec& beta,
                                    const RVec& gain_row) {
  double signal = 0.0;
  double trace = 0.0;
  for (Eigen::Index j = 0; j < beta.size(); ++j) {
    const double b2 = j == k ? beta(j) * beta(j) / (gamma_k * gamma_k) : beta(j) * beta(j);
    signal += gain_row(j) * b2;
    trace += b2;
  }
  const double se2 = sigma_e * sigma_e;
  return 2.0 * se2 * signal + se2 * se2 * trace;
}

// ---------------------------------------------------------------------------
// Offset coefficient and Gaussian tail

enum class OffsetMode { cantelli, gaussian };

inline OffsetMode parse_offset_mode(std::string_view s) {
  if (s == "cantelli") return OffsetMode::cantelli;
  if (s == "gaussian") return OffsetMode::gaussian;
  throw InvalidConfig("unknown offset mode '" + std::string(s) + "'");
}

/// Standard normal CDF.
inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

/// Gaussian tail Q(x) = erfc(x / sqrt 2) / 2.
inline double q_function(double x) { return 0.5 * std::erfc(x / std::numbers::sqrt2); }

/// Cantelli: r = sqrt(1/delta - 1) (safe). Gaussian: Q(r) = delta.
inline double r_from_delta(double delta, OffsetMode mode) {
  if (!(delta > 0.0 && delta < 1.0)) throw InvalidArgument("outage tolerance must lie in (0,1)");
  if (mode == OffsetMode::cantelli) return std::sqrt(1.0 / delta - 1.0);
  return std::numbers::sqrt2 * boost::math::erfc_inv(2.0 * delta);
}

/// Outage predicted by the Gaussian approximation of f_k.
inline double predicted_outage(const OffsetStats& s) {
  if (s.sigma == 0.0) return s.mu >= 0.0 ? 0.0 : 1.0;
  return q_function(s.mu / s.sigma);
}

}  // namespace offsetbf
