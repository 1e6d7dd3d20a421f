#pragma once

// Shared vocabulary for the offset-based robust beamforming library:
// linear-algebra aliases, the error hierarchy and seed/RNG helpers.

#include <Eigen/Dense>

#include <cmath>
#include <complex>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace offsetbf {

using cplx = std::complex<double>;
using CVec = Eigen::VectorXcd;
using CMat = Eigen::MatrixXcd;
using RVec = Eigen::VectorXd;
using RMat = Eigen::MatrixXd;

/// Base class of every error raised by the library. `stage()` names the
/// pipeline stage that failed so front ends can report it.
class Error : public std::runtime_error {
 public:
  Error(std::string stage, const std::string& what)
      : std::runtime_error(stage + ": " + what), stage_(std::move(stage)) {}
  const std::string& stage() const noexcept { return stage_; }

 private:
  std::string stage_;
};

class InvalidConfig : public Error {
 public:
  explicit InvalidConfig(const std::string& what) : Error("config", what) {}
};

class InvalidArgument : public Error {
 public:
  explicit InvalidArgument(const std::string& what) : Error("argument", what) {}
};

class InvalidModel : public Error {
 public:
  explicit InvalidModel(const std::string& what) : Error("uncertainty-model", what) {}
};

class DegenerateChannels : public Error {
 public:
  explicit DegenerateChannels(const std::string& what) : Error("directions", what) {}
};

class DegenerateGeometry : public Error {
 public:
  explicit DegenerateGeometry(const std::string& what) : Error("coupling-matrix", what) {}
};

/// Raised when a loading has a negative power at its fixed point; the
/// remedy is rescheduling.
class InfeasibleLoading : public Error {
 public:
  InfeasibleLoading(const std::string& what, RVec powers = {})
      : Error("power-loading", what), powers_(std::move(powers)) {}
  const RVec& powers() const noexcept { return powers_; }

 private:
  RVec powers_;
};

/// Iterative solver ran out of iterations; carries the last iterate.
class ConvergenceFailure : public Error {
 public:
  ConvergenceFailure(std::string stage, const std::string& what, RVec last_iterate = {})
      : Error(std::move(stage), what), last_(std::move(last_iterate)) {}
  const RVec& last_iterate() const noexcept { return last_; }

 private:
  RVec last_;
};

// ---------------------------------------------------------------------------
// Seeds and random draws

/// splitmix64 finalizer; a bijective 64-bit mixer.
constexpr std::uint64_t mix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Seed of sub-stream `stream` under `base`. Order independent: the seed of
/// trial t never depends on how many other trials were drawn.
constexpr std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream) noexcept {
  return mix64(mix64(base) ^ mix64(stream + 0x632be59bd9b4e019ULL));
}

using Rng = std::mt19937_64;

/// Standard circular complex Gaussian CN(0, 1): real and imaginary parts
/// independent with variance 1/2 each.
inline cplx draw_cn(Rng& rng) {
  std::normal_distribution<double> n(0.0, std::sqrt(0.5));
  const double re = n(rng);
  const double im = n(rng);
  return {re, im};
}

inline CVec draw_cn_vector(Rng& rng, Eigen::Index n) {
  CVec v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = draw_cn(rng);
  return v;
}

inline double db_to_linear(double db) { return std::pow(10.0, db / 10.0); }
inline double linear_to_db(double lin) { return 10.0 * std::log10(lin); }
inline double dbm_to_watts(double dbm) { return std::pow(10.0, (dbm - 30.0) / 10.0); }

/// Hermitian part (X + X^H)/2; the matrix analogue of Re{.} used in the
/// stationarity conditions.
inline CMat hermitian_part(const CMat& x) { return 0.5 * (x + x.adjoint()); }

}  // namespace offsetbf
