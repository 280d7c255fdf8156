#pragma once

#include "core.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>

namespace devrate {

//! h_n = c n^{-a} L(n) with L either 1 or (log max(n, e))^b.
class BandwidthSchedule
{
public:
  BandwidthSchedule(double c, double a, int d, std::optional<double> log_power = {})
    : c_(c)
    , a_(a)
    , d_(d)
    , log_power_(log_power)
  {
    if (!(c > 0.0))
      throw ConfigError("bandwidth constant c must be positive");
    if (d < 1 || d > 2)
      throw ConfigError("schedule dimension must be 1 or 2");
    // a = 0 is the frozen (constant) bandwidth, kept for degenerate checks
    if (!(a >= 0.0) || !(a * d < 1.0))
      throw ConfigError("bandwidth exponent must satisfy 0 <= a < 1/d");
  }

  double c() const { return c_; }
  double a() const { return a_; }
  int d() const { return d_; }
  std::optional<double> log_power() const { return log_power_; }
  bool nonincreasing() const { return !log_power_ || *log_power_ <= 0.0; }

  double operator()(double n) const
  {
    if (!(n >= 1.0))
      throw InputError("bandwidth index must be >= 1");
    double h = c_ * std::pow(n, -a_);
    if (log_power_)
      h *= std::pow(std::log(std::max(n, std::numbers::e)), *log_power_);
    return h;
  }

  nlohmann::json to_json() const
  {
    nlohmann::json j{ { "c", c_ }, { "a", a_ }, { "d", d_ } };
    if (log_power_)
      j["sv"] = { { "log_power", *log_power_ } };
    else
      j["sv"] = "none";
    return j;
  }

  static BandwidthSchedule from_json(const nlohmann::json& j)
  {
    std::optional<double> lp;
    if (j.contains("sv") && j["sv"].is_object())
      lp = j["sv"].at("log_power").get<double>();
    else if (j.contains("sv") && j["sv"] != "none")
      throw ConfigError("schedule sv must be \"none\" or {\"log_power\": b}");
    return { j.at("c").get<double>(), j.at("a").get<double>(), j.value("d", 1), lp };
  }

private:
  double c_;
  double a_;
  int d_;
  std::optional<double> log_power_;
};

inline double
hn(const BandwidthSchedule& s, double n)
{
  return s(n);
}

//! (1 / (n h_n^beta)) sum_{i<=n} h_i^beta, which tends to 1 / (1 - a beta).
inline double
regvar_sum(const BandwidthSchedule& s, double beta, long n)
{
  if (!(s.a() * beta < 1.0))
    throw ConfigError("regvar_sum diverges for a * beta >= 1");
  if (n < 1)
    throw InputError("regvar_sum needs n >= 1");
  // Kahan summation keeps the 1e6-term sum exact to a few ulps
  double sum = 0.0, comp = 0.0;
  for (long i = 1; i <= n; ++i) {
    double term = std::pow(s(static_cast<double>(i)), beta) - comp;
    double t = sum + term;
    comp = (t - sum) - term;
    sum = t;
  }
  return sum / (static_cast<double>(n) * std::pow(s(static_cast<double>(n)), beta));
}

//! v_n = n^gamma.
struct SpeedSequence
{
  double gamma;

  double operator()(double n) const { return std::pow(n, gamma); }
};

struct SpeedReport
{
  double gamma;
  bool diverges;     //!< gamma > 0: v_n -> inf
  bool variance_ok;  //!< 2 gamma < 1 - a d: v_n^2 / (n h_n^d) -> 0
  bool bias_ok;      //!< gamma < a p: v_n h_n^p -> 0
  double feasible_lo;
  double feasible_hi;
  bool feasible;     //!< the open interval (lo, hi) is nonempty
  bool pass;

  nlohmann::json to_json() const
  {
    return { { "gamma", gamma },         { "diverges", diverges },
             { "variance_ok", variance_ok }, { "bias_ok", bias_ok },
             { "feasible_lo", feasible_lo }, { "feasible_hi", feasible_hi },
             { "feasible", feasible },   { "pass", pass } };
  }
};

//! Exponent check of the moderate-deviation speed conditions for power-law
//! (optionally log-corrected) sequences. Infeasibility is reported, not
//! thrown.
inline SpeedReport
check_speed(const BandwidthSchedule& s, const SpeedSequence& v, int p)
{
  if (p < 2)
    throw ConfigError("kernel order p must be >= 2");
  const double ad = s.a() * s.d();
  SpeedReport rep{};
  rep.gamma = v.gamma;
  rep.diverges = v.gamma > 0.0;
  rep.variance_ok = 2.0 * v.gamma < 1.0 - ad;
  rep.bias_ok = v.gamma < s.a() * p;
  rep.feasible_lo = 0.0;
  rep.feasible_hi = std::min(0.5 * (1.0 - ad), s.a() * p);
  rep.feasible = rep.feasible_hi > rep.feasible_lo;
  rep.pass = rep.diverges && rep.variance_ok && rep.bias_ok;
  return rep;
}

} // namespace devrate
