#pragma once

// Synthetic multi-user MISO scenarios: large-scale attenuation with
// log-normal shadowing, i.i.d. Rayleigh small-scale fading, and the additive
// Gaussian channel-estimation error model h = h_est + e, e ~ CN(m, C).

#include "offsetbf/core.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <optional>
#include <span>
#include <vector>

namespace offsetbf {

/// Distribution of the estimation error e_k ~ CN(m_k, C_k).
struct UncertaintyModel {
  CVec mean;
  CMat covariance;
  bool iid = true;
  double sigma_e = 0.0;

  static UncertaintyModel make_iid(Eigen::Index n_antennas, double sigma_e) {
    if (!(sigma_e >= 0.0)) throw InvalidModel("sigma_e must be nonnegative");
    UncertaintyModel m;
    m.mean = CVec::Zero(n_antennas);
    m.covariance = (sigma_e * sigma_e) * CMat::Identity(n_antennas, n_antennas);
    m.iid = true;
    m.sigma_e = sigma_e;
    return m;
  }

  static UncertaintyModel make_general(CVec mean, CMat covariance) {
    UncertaintyModel m;
    m.mean = std::move(mean);
    m.covariance = std::move(covariance);
    m.iid = false;
    m.sigma_e = 0.0;
    m.validate();
    return m;
  }

  Eigen::Index size() const { return mean.size(); }

  /// Throws InvalidModel unless C is Hermitian PSD (tolerance 1e-12 scaled by
  /// the largest entry) and the iid fields are coherent.
  void validate() const {
    const Eigen::Index n = mean.size();
    if (covariance.rows() != n || covariance.cols() != n)
      throw InvalidModel("covariance shape does not match mean");
    const double scale = std::max(1.0, covariance.cwiseAbs().maxCoeff());
    if ((covariance - covariance.adjoint()).cwiseAbs().maxCoeff() > 1e-12 * scale)
      throw InvalidModel("covariance is not Hermitian");
    if (n > 0) {
      Eigen::SelfAdjointEigenSolver<CMat> es(covariance, Eigen::EigenvaluesOnly);
      if (es.eigenvalues().minCoeff() < -1e-12 * scale)
        throw InvalidModel("covariance is not positive semidefinite");
    }
    if (iid) {
      if (sigma_e < 0.0) throw InvalidModel("sigma_e must be nonnegative");
      if (mean.cwiseAbs().maxCoeff() != 0.0) throw InvalidModel("iid model requires zero mean");
    }
  }

  /// Hermitian PSD square root C^{1/2}.
  CMat sqrt_covariance() const {
    if (iid) return sigma_e * CMat::Identity(size(), size());
    validate();
    Eigen::SelfAdjointEigenSolver<CMat> es(covariance);
    const RVec lam = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
    return es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().adjoint();
  }
};

/// Draws e = m + C^{1/2} g with g ~ CN(0, I). Precomputes C^{1/2} once.
class ErrorSampler {
 public:
  explicit ErrorSampler(const UncertaintyModel& model)
      : mean_(model.mean), iid_(model.iid), sigma_(model.sigma_e) {
    if (!iid_) root_ = model.sqrt_covariance();
  }

  CVec draw(Rng& rng) const {
    const CVec g = draw_cn_vector(rng, mean_.size());
    if (iid_) return sigma_ * g;
    return mean_ + root_ * g;
  }

 private:
  CVec mean_;
  CMat root_;
  bool iid_;
  double sigma_;
};

struct UserChannel {
  CVec h_true;
  CVec h_est;
  UncertaintyModel uncertainty;
  double noise_power = 1.0;  // Watts
  double gamma = 1.0;        // linear SINR target
  double delta = 0.1;        // outage tolerance

  /// alpha_k = ||h_est||^2.
  double alpha() const { return h_est.squaredNorm(); }

  void validate() const {
    if (!(gamma > 0.0)) throw InvalidConfig("SINR target must be positive");
    if (!(noise_power > 0.0)) throw InvalidConfig("noise power must be positive");
    if (!(delta > 0.0 && delta < 1.0)) throw InvalidConfig("outage tolerance must lie in (0,1)");
    if (h_est.size() != h_true.size() || uncertainty.size() != h_est.size())
      throw InvalidConfig("user vectors disagree in length");
    uncertainty.validate();
  }
};

struct Scenario {
  std::vector<UserChannel> users;
  int n_antennas = 0;
  std::uint64_t rng_seed = 0;

  int size() const { return static_cast<int>(users.size()); }

  void validate() const {
    if (users.empty()) throw InvalidConfig("scenario has no users");
    if (n_antennas < 1) throw InvalidConfig("n_antennas must be positive");
    for (const auto& u : users) {
      if (u.h_est.size() != n_antennas) throw InvalidConfig("user channel length differs from n_antennas");
      u.validate();
    }
  }

  /// N_t x K matrix whose k-th column is h_est of user k.
  CMat estimated_channels() const {
    CMat h(n_antennas, size());
    for (int k = 0; k < size(); ++k) h.col(k) = users[k].h_est;
    return h;
  }

  CMat true_channels() const {
    CMat h(n_antennas, size());
    for (int k = 0; k < size(); ++k) h.col(k) = users[k].h_true;
    return h;
  }

  RVec gammas() const {
    RVec g(size());
    for (int k = 0; k < size(); ++k) g(k) = users[k].gamma;
    return g;
  }

  RVec noise_powers() const {
    RVec s(size());
    for (int k = 0; k < size(); ++k) s(k) = users[k].noise_power;
    return s;
  }

  /// Per-user i.i.d. error standard deviations. General-covariance users
  /// report sqrt(tr(C)/N_t).
  RVec sigma_e() const {
    RVec s(size());
    for (int k = 0; k < size(); ++k) {
      const auto& m = users[k].uncertainty;
      s(k) = m.iid ? m.sigma_e : std::sqrt(m.covariance.trace().real() / n_antennas);
    }
    return s;
  }

  bool all_iid() const {
    for (const auto& u : users)
      if (!u.uncertainty.iid) return false;
    return true;
  }

  Scenario subset(std::span<const int> keep) const {
    Scenario s;
    s.n_antennas = n_antennas;
    s.rng_seed = rng_seed;
    for (int k : keep) s.users.push_back(users.at(static_cast<std::size_t>(k)));
    return s;
  }
};

struct GeometryConfig {
  double radius_km = 3.2;
  int n_users = 3;
  int n_antennas = 4;
};

struct FadingConfig {
  double pathloss_exponent = 3.52;
  double shadowing_db = 8.0;
  double noise_dbm = -90.0;
  /// Large-scale gain at the 1 km reference distance.
  double reference_gain_db = -105.0;
  /// One value for all users or one per user.
  std::vector<double> sigma_e = {0.1};
  /// When true, sigma_e is relative to the user's large-scale amplitude, so
  /// the per-user error std is sigma_e * sqrt(gain_k).
  bool relative_error = true;
};

struct QosConfig {
  double gamma_db = 6.0;
  double delta = 0.02275;
};

/// Large-scale power gain (linear) at distance d for a shadowing draw in dB.
inline double large_scale_gain(const FadingConfig& f, double distance_km, double shadow_db) {
  const double db = f.reference_gain_db - 10.0 * f.pathloss_exponent * std::log10(distance_km) + shadow_db;
  return db_to_linear(db);
}

/// Drops K users uniformly in a disc around the base station and draws their
/// channels and estimation errors. Deterministic in `seed`.
inline Scenario generate_scenario(const GeometryConfig& geo, const FadingConfig& fading,
                                  const QosConfig& qos, std::uint64_t seed) {
  if (geo.n_users < 1) throw InvalidConfig("number of users must be at least 1");
  if (geo.n_antennas < 1) throw InvalidConfig("number of antennas must be at least 1");
  if (!(geo.radius_km > 0.0)) throw InvalidConfig("cell radius must be positive");
  if (fading.sigma_e.empty()) throw InvalidConfig("sigma_e list is empty");
  if (fading.sigma_e.size() != 1 && fading.sigma_e.size() != static_cast<std::size_t>(geo.n_users))
    throw InvalidConfig("sigma_e must have one entry or one per user");
  if (!(qos.delta > 0.0 && qos.delta < 1.0)) throw InvalidConfig("outage tolerance must lie in (0,1)");

  Scenario s;
  s.n_antennas = geo.n_antennas;
  s.rng_seed = seed;
  const double noise = dbm_to_watts(fading.noise_dbm);
  const double gamma = db_to_linear(qos.gamma_db);

  for (int k = 0; k < geo.n_users; ++k) {
    Rng rng(derive_seed(seed, static_cast<std::uint64_t>(k)));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    // Uniform in the disc; the model is isotropic so the angle is not drawn.
    // 1 - U lies in (0, 1], so the distance is never exactly zero.
    const double d = geo.radius_km * std::sqrt(1.0 - unit(rng));
    std::normal_distribution<double> shadow(0.0, fading.shadowing_db);
    const double gain = large_scale_gain(fading, d, shadow(rng));

    const double se_in = fading.sigma_e.size() == 1 ? fading.sigma_e[0] : fading.sigma_e[static_cast<std::size_t>(k)];
    if (se_in < 0.0) throw InvalidConfig("sigma_e must be nonnegative");
    const double se = fading.relative_error ? se_in * std::sqrt(gain) : se_in;

    UserChannel u;
    u.h_true = std::sqrt(gain) * draw_cn_vector(rng, geo.n_antennas);
    u.uncertainty = UncertaintyModel::make_iid(geo.n_antennas, se);
    u.h_est = u.h_true - ErrorSampler(u.uncertainty).draw(rng);
    u.noise_power = noise;
    u.gamma = gamma;
    u.delta = qos.delta;
    s.users.push_back(std::move(u));
  }
  return s;
}

/// One error realization for `user`, deterministic in `seed`.
inline CVec draw_error(const UserChannel& user, std::uint64_t seed) {
  user.uncertainty.validate();
  Rng rng(seed);
  return ErrorSampler(user.uncertainty).draw(rng);
}

/// Indices of users with power_reference * ||h_est||^2 / sigma^2 >= gamma.
inline std::vector<int> user_selection(const Scenario& s, double power_reference = 100.0) {
  std::vector<int> keep;
  for (int k = 0; k < s.size(); ++k) {
    const auto& u = s.users[static_cast<std::size_t>(k)];
    if (power_reference * u.alpha() / u.noise_power >= u.gamma) keep.push_back(k);
  }
  return keep;
}

}  // namespace offsetbf
