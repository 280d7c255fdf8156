#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <compare>
#include <limits>
#include <stdexcept>
#include <string>

namespace devrate {

//! Dimensions handled at desk scale: d <= 2, q <= 2, and (u, v) in R^{q+1}.
inline constexpr int kMaxDim = 3;

using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxDim, 1>;
using Mat =
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxDim, kMaxDim>;

//! Invalid or inconsistent configuration (bad names, parameters, schedules).
class ConfigError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

//! Malformed input data (dimension mismatch, singular covariance, ...).
class InputError : public std::runtime_error
{
public:
  using std::runtime_error::runtime_error;
};

//! A numerical procedure failed to reach its tolerance.
class NumericError : public std::runtime_error
{
public:
  NumericError(const std::string& what, double residual)
    : std::runtime_error(what)
    , residual_(residual)
  {}

  double residual() const { return residual_; }

private:
  double residual_;
};

//! A value in (-inf, +inf]. Rate functions legitimately take +inf; this type
//! keeps that out of floating-point arithmetic.
class Extended
{
public:
  static Extended finite(double v) { return Extended(v, false); }
  static Extended infinity() { return Extended(0.0, true); }

  bool is_infinite() const { return infinite_; }
  bool is_finite() const { return !infinite_; }

  double value() const
  {
    if (infinite_)
      throw std::logic_error("value() called on an infinite Extended");
    return value_;
  }

  //! +inf maps to the IEEE infinity; only for reporting.
  double to_double() const
  {
    return infinite_ ? std::numeric_limits<double>::infinity() : value_;
  }

  friend bool operator==(const Extended& a, const Extended& b)
  {
    return a.infinite_ == b.infinite_ && (a.infinite_ || a.value_ == b.value_);
  }

  friend std::partial_ordering operator<=>(const Extended& a,
                                           const Extended& b)
  {
    if (a.infinite_ && b.infinite_)
      return std::partial_ordering::equivalent;
    if (a.infinite_)
      return std::partial_ordering::greater;
    if (b.infinite_)
      return std::partial_ordering::less;
    return a.value_ <=> b.value_;
  }

  friend Extended min(const Extended& a, const Extended& b)
  {
    return (b < a) ? b : a;
  }

private:
  Extended(double v, bool inf)
    : value_(v)
    , infinite_(inf)
  {}

  double value_;
  bool infinite_;
};

inline Vec
make_vec(std::initializer_list<double> values)
{
  Vec v(static_cast<Eigen::Index>(values.size()));
  Eigen::Index i = 0;
  for (double x : values)
    v(i++) = x;
  return v;
}

} // namespace devrate
