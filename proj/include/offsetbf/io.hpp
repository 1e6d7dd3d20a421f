#pragma once

// JSON and CSV at the program boundary. Complex vectors are arrays of
// [re, im] pairs. Units are explicit: powers in Watts, noise either as
// noise_power (W) or noise_dbm, SINR targets either as gamma (linear) or
// gamma_db.

#include "offsetbf/channel.hpp"
#include "offsetbf/core.hpp"
#include "offsetbf/montecarlo.hpp"
#include "offsetbf/powerload.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

namespace offsetbf {

using Json = nlohmann::ordered_json;

class ParseError : public Error {
 public:
  explicit ParseError(const std::string& what) : Error("parse", what) {}
};

namespace io {

inline Json to_json(const CVec& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back({v(i).real(), v(i).imag()});
  return a;
}

inline Json to_json(const CMat& m) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) a.push_back(to_json(CVec(m.row(i).transpose())));
  return a;
}

inline Json to_json(const RVec& v) {
  Json a = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v(i));
  return a;
}

/// NaN and infinities have no JSON literal; they are written as null.
inline Json number_or_null(double x) { return std::isfinite(x) ? Json(x) : Json(nullptr); }

inline CVec complex_vector(const Json& j, const std::string& what) {
  if (!j.is_array()) throw ParseError(what + " must be an array of [re, im] pairs");
  CVec v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    const Json& e = j[i];
    if (!e.is_array() || e.size() != 2 || !e[0].is_number() || !e[1].is_number())
      throw ParseError(what + " entry " + std::to_string(i) + " is not an [re, im] pair");
    v(static_cast<Eigen::Index>(i)) = {e[0].get<double>(), e[1].get<double>()};
  }
  return v;
}

inline CMat complex_matrix(const Json& j, const std::string& what) {
  if (!j.is_array()) throw ParseError(what + " must be an array of rows");
  const auto n = static_cast<Eigen::Index>(j.size());
  CMat m(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const CVec row = complex_vector(j[static_cast<std::size_t>(i)], what);
    if (row.size() != n) throw ParseError(what + " must be square");
    m.row(i) = row.transpose();
  }
  return m;
}

inline double number(const Json& obj, const char* key, const std::string& ctx) {
  const auto it = obj.find(key);
  if (it == obj.end() || !it->is_number()) throw ParseError(ctx + ": '" + key + "' must be a number");
  return it->get<double>();
}

/// Exactly one of `linear` and `db` must be present.
inline double linear_or_db(const Json& obj, const char* linear, const char* db, const std::string& ctx,
                           double (*from_db)(double)) {
  const bool has_lin = obj.contains(linear);
  const bool has_db = obj.contains(db);
  if (has_lin == has_db)
    throw InvalidConfig(ctx + ": give exactly one of '" + std::string(linear) + "' and '" + db + "'");
  return has_lin ? number(obj, linear, ctx) : from_db(number(obj, db, ctx));
}

inline Json parse_text(const std::string& text, const std::string& source) {
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(source + ": " + e.what());
  }
}

inline Json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InvalidConfig("cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_text(ss.str(), path);
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw InvalidConfig("cannot write '" + path + "'");
  out << text;
  if (!out) throw InvalidConfig("write to '" + path + "' failed");
}

// ---------------------------------------------------------------------------
// Scenarios

inline Json scenario_to_json(const Scenario& s) {
  Json users = Json::array();
  for (const auto& u : s.users) {
    Json ju;
    ju["h_true"] = to_json(u.h_true);
    ju["h_est"] = to_json(u.h_est);
    if (u.uncertainty.iid) {
      ju["sigma_e"] = u.uncertainty.sigma_e;
    } else {
      ju["error_mean"] = to_json(u.uncertainty.mean);
      ju["error_covariance"] = to_json(u.uncertainty.covariance);
    }
    ju["noise_power"] = u.noise_power;
    ju["gamma"] = u.gamma;
    ju["delta"] = u.delta;
    users.push_back(std::move(ju));
  }
  return {{"n_antennas", s.n_antennas}, {"rng_seed", s.rng_seed}, {"users", std::move(users)}};
}

inline Scenario scenario_from_json(const Json& j) {
  if (!j.is_object()) throw ParseError("scenario must be a JSON object");
  Scenario s;
  const double nt = number(j, "n_antennas", "scenario");
  if (nt != std::floor(nt) || nt < 1) throw InvalidConfig("n_antennas must be a positive integer");
  s.n_antennas = static_cast<int>(nt);
  if (j.contains("rng_seed")) s.rng_seed = j.at("rng_seed").get<std::uint64_t>();
  if (!j.contains("users") || !j.at("users").is_array()) throw ParseError("scenario: 'users' must be an array");
  int idx = 0;
  for (const Json& ju : j.at("users")) {
    const std::string ctx = "user " + std::to_string(idx++);
    if (!ju.is_object()) throw ParseError(ctx + " must be an object");
    UserChannel u;
    if (!ju.contains("h_est")) throw ParseError(ctx + ": missing 'h_est'");
    u.h_est = complex_vector(ju.at("h_est"), ctx + " h_est");
    u.h_true = ju.contains("h_true") ? complex_vector(ju.at("h_true"), ctx + " h_true") : u.h_est;
    const bool iid = ju.contains("sigma_e");
    const bool general = ju.contains("error_covariance");
    if (iid == general) throw InvalidConfig(ctx + ": give exactly one of 'sigma_e' and 'error_covariance'");
    if (iid) {
      u.uncertainty = UncertaintyModel::make_iid(u.h_est.size(), number(ju, "sigma_e", ctx));
    } else {
      const CMat c = complex_matrix(ju.at("error_covariance"), ctx + " error_covariance");
      const CVec m = ju.contains("error_mean") ? complex_vector(ju.at("error_mean"), ctx + " error_mean")
                                               : CVec::Zero(c.rows());
      u.uncertainty = UncertaintyModel::make_general(m, c);
    }
    u.noise_power = linear_or_db(ju, "noise_power", "noise_dbm", ctx, dbm_to_watts);
    u.gamma = linear_or_db(ju, "gamma", "gamma_db", ctx, db_to_linear);
    u.delta = ju.contains("delta") ? number(ju, "delta", ctx) : 0.1;
    s.users.push_back(std::move(u));
  }
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------
// Reports and tables

inline Json report_to_json(const DesignReport& r) {
  Json users = Json::array();
  for (std::size_t i = 0; i < r.served.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    users.push_back({{"index", r.served[i]},
                     {"beta", r.powers(k)},
                     {"r", number_or_null(r.offsets(k))},
                     {"mu_f", r.stats[i].mu},
                     {"sigma_f", r.stats[i].sigma},
                     {"predicted_outage", r.predicted_outage(k)}});
  }
  return {{"total_power", r.total_power},
          {"served", r.served},
          {"rescheduled", r.rescheduled},
          {"iterations", r.iterations_used},
          {"common_offset", number_or_null(r.common_offset)},
          {"unbounded_offset", r.unbounded_offset},
          {"variance_mode", std::string(to_string(r.variance_mode))},
          {"users", std::move(users)}};
}

inline std::string fmt(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  std::ostringstream os;
  os << std::setprecision(std::numeric_limits<double>::max_digits10) << x;
  return os.str();
}

/// One row per served user, then one row per dropped user with empty fields.
inline std::string report_csv(const DesignReport& r) {
  std::ostringstream os;
  os << "index,beta,r,mu_f,sigma_f,predicted_outage,dropped\n";
  for (std::size_t i = 0; i < r.served.size(); ++i) {
    const auto k = static_cast<Eigen::Index>(i);
    os << r.served[i] << ',' << fmt(r.powers(k)) << ',' << fmt(r.offsets(k)) << ',' << fmt(r.stats[i].mu) << ','
       << fmt(r.stats[i].sigma) << ',' << fmt(r.predicted_outage(k)) << ",0\n";
  }
  for (int d : r.rescheduled) os << d << ",,,,,,1\n";
  return os.str();
}

inline std::string sweep_csv(const std::vector<SweepPoint>& rows) {
  std::ostringstream os;
  os << "algorithm,r,mean_power_W,mean_outage,stderr_outage,n_viable\n";
  for (const auto& p : rows) {
    os << p.algorithm << ',' << fmt(p.r) << ',';
    if (p.empty()) {
      os << ",,,0\n";  // no viable realization at this point
    } else {
      os << fmt(p.mean_power) << ',' << fmt(p.mean_outage) << ',' << fmt(p.stderr_outage) << ',' << p.n_viable
         << '\n';
    }
  }
  return os.str();
}

}  // namespace io
}  // namespace offsetbf
