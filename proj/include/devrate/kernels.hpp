#pragma once

#include "core.hpp"
#include "quadrature.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace devrate {

enum class KernelName
{
  uniform,
  epanechnikov,
  gaussian,
  fourth_order_signed,
  custom_intervals,
  custom_tabulated
};

inline std::string
to_string(KernelName name)
{
  switch (name) {
    case KernelName::uniform:
      return "uniform";
    case KernelName::epanechnikov:
      return "epanechnikov";
    case KernelName::gaussian:
      return "gaussian";
    case KernelName::fourth_order_signed:
      return "fourth_order_signed";
    case KernelName::custom_intervals:
      return "custom_intervals";
    case KernelName::custom_tabulated:
      return "custom_tabulated";
  }
  return "unknown";
}

struct Interval
{
  double lo;
  double hi;
  double length() const { return hi - lo; }
};

//! Piece of a piecewise-constant profile: value `weight` on [lo, hi].
struct WeightedInterval
{
  double lo;
  double hi;
  double weight;
};

//! K = 1_D - 1_D' on the real line, with D and D' disjoint.
struct SignedIndicator
{
  std::vector<Interval> D;
  std::vector<Interval> Dprime;
  double lambda_D;
  double lambda_Dprime;
};

//! Interval endpoints of the fourth-order signed kernel
//! K = 1_[-a,a] - 1_[-b,-a) - 1_(a,b].
struct FourthOrderEndpoints
{
  double a;
  double b;
};

inline FourthOrderEndpoints
fourth_order_endpoints()
{
  const double c = std::cbrt(2.0);
  return { c / 6.0 + c * c / 12.0 + 1.0 / 3.0,
           c / 3.0 + c * c / 6.0 + 1.0 / 6.0 };
}

//! A kernel on R^d built as the product of a one-dimensional profile.
//!
//! Kernels are immutable. Built-ins carry exact metadata; user kernels start
//! out unverified and must go through certify() before the rate-function
//! code accepts them.
class Kernel
{
public:
  static Kernel builtin(KernelName name, int d);
  static Kernel from_intervals(std::vector<WeightedInterval> pieces,
                               std::optional<int> order = std::nullopt);
  static Kernel from_table(std::vector<double> z, std::vector<double> values,
                           std::optional<int> order = std::nullopt);

  double operator()(std::span<const double> z) const;
  double operator()(const Vec& z) const
  {
    return (*this)(std::span<const double>(z.data(), z.size()));
  }
  double profile(double t) const;

  KernelName name() const { return name_; }
  int dim() const { return dim_; }
  //! Radius in the sup-norm of the support box; +inf for the Gaussian.
  double support_radius() const { return support_radius_; }
  //! Radius actually integrated over (the Gaussian is truncated).
  double quadrature_radius() const { return quadrature_radius_; }
  double sup_norm() const { return sup_norm_; }
  std::optional<int> order() const { return order_; }
  Extended lambda_splus() const { return lambda_splus_; }
  Extended lambda_sminus() const { return lambda_sminus_; }
  bool verified() const { return verified_; }
  bool nonnegative() const
  {
    return lambda_sminus_.is_finite() && lambda_sminus_.value() == 0.0;
  }
  //! ∫ K^2, computed by quadrature at construction.
  double l2_norm_squared() const { return l2_; }
  //! True when the kernel is constant between its breakpoints.
  bool piecewise_constant() const { return shape_ == Shape::piecewise_constant; }
  //! One-dimensional segment boundaries on which the profile is smooth.
  const std::vector<double>& breakpoints() const { return breaks_; }
  //! Quadrature axes covering the support, one per coordinate.
  std::vector<Axis> axes(int nodes) const
  {
    return std::vector<Axis>(static_cast<size_t>(dim_), Axis{ breaks_, nodes });
  }
  std::optional<SignedIndicator> signed_indicator() const;

  nlohmann::json to_json() const;
  static Kernel from_json(const nlohmann::json& j);

private:
  friend Kernel certify(const Kernel&, int, double);
  Kernel() = default;
  void finish();

  enum class Shape
  {
    piecewise_constant,
    epanechnikov,
    gaussian,
    piecewise_linear
  };

  KernelName name_{};
  Shape shape_{};
  int dim_ = 1;
  std::vector<WeightedInterval> pieces_;
  std::vector<double> table_z_, table_k_;
  std::vector<double> breaks_;
  double support_radius_ = 0.0;
  double quadrature_radius_ = 0.0;
  double sup_norm_ = 0.0;
  std::optional<int> order_;
  Extended lambda_splus_ = Extended::finite(0.0);
  Extended lambda_sminus_ = Extended::finite(0.0);
  bool verified_ = false;
  double l2_ = 0.0;
};

inline double
Kernel::profile(double t) const
{
  switch (shape_) {
    case Shape::piecewise_constant:
      for (const auto& p : pieces_)
        if (t >= p.lo && t <= p.hi)
          return p.weight;
      return 0.0;
    case Shape::epanechnikov:
      return std::abs(t) < 1.0 ? 0.75 * (1.0 - t * t) : 0.0;
    case Shape::gaussian:
      return std::exp(-0.5 * t * t) / std::sqrt(2.0 * std::numbers::pi);
    case Shape::piecewise_linear: {
      if (t < table_z_.front() || t > table_z_.back())
        return 0.0;
      auto it = std::upper_bound(table_z_.begin(), table_z_.end(), t);
      if (it == table_z_.end())
        return table_k_.back();
      size_t i = static_cast<size_t>(it - table_z_.begin());
      double w = (t - table_z_[i - 1]) / (table_z_[i] - table_z_[i - 1]);
      return (1.0 - w) * table_k_[i - 1] + w * table_k_[i];
    }
  }
  return 0.0;
}

inline double
Kernel::operator()(std::span<const double> z) const
{
  double out = 1.0;
  for (double t : z) {
    if (std::abs(t) > support_radius_)
      return 0.0;
    out *= profile(t);
  }
  return out;
}

inline Kernel
Kernel::builtin(KernelName name, int d)
{
  if (d < 1 || d > 2)
    throw ConfigError("kernel dimension must be 1 or 2");
  Kernel k;
  k.name_ = name;
  k.dim_ = d;
  k.order_ = 2;
  k.verified_ = true;
  const double dd = static_cast<double>(d);
  switch (name) {
    case KernelName::uniform:
      k.shape_ = Shape::piecewise_constant;
      k.pieces_ = { { -0.5, 0.5, 1.0 } };
      k.support_radius_ = 0.5;
      k.sup_norm_ = 1.0;
      k.lambda_splus_ = Extended::finite(1.0);
      break;
    case KernelName::epanechnikov:
      k.shape_ = Shape::epanechnikov;
      k.support_radius_ = 1.0;
      k.sup_norm_ = std::pow(0.75, dd);
      k.lambda_splus_ = Extended::finite(std::pow(2.0, dd));
      break;
    case KernelName::gaussian:
      k.shape_ = Shape::gaussian;
      k.support_radius_ = std::numeric_limits<double>::infinity();
      k.sup_norm_ = std::pow(2.0 * std::numbers::pi, -0.5 * dd);
      k.lambda_splus_ = Extended::infinity();
      break;
    case KernelName::fourth_order_signed: {
      if (d != 1)
        throw ConfigError("fourth_order_signed is defined for d = 1 only");
      auto [a, b] = fourth_order_endpoints();
      k.shape_ = Shape::piecewise_constant;
      k.pieces_ = { { -a, a, 1.0 }, { -b, -a, -1.0 }, { a, b, -1.0 } };
      k.support_radius_ = b;
      k.sup_norm_ = 1.0;
      k.order_ = 4;
      k.lambda_splus_ = Extended::finite(2.0 * a);
      k.lambda_sminus_ = Extended::finite(2.0 * (b - a));
      break;
    }
    default:
      throw ConfigError("not a built-in kernel: " + to_string(name));
  }
  k.finish();
  return k;
}

inline Kernel
Kernel::from_intervals(std::vector<WeightedInterval> pieces,
                       std::optional<int> order)
{
  if (pieces.empty())
    throw ConfigError("custom kernel needs at least one interval");
  auto sorted = pieces;
  std::sort(sorted.begin(), sorted.end(), [](const auto& l, const auto& r) {
    return l.lo < r.lo;
  });
  for (size_t i = 0; i < sorted.size(); ++i) {
    if (!(sorted[i].hi > sorted[i].lo) || !std::isfinite(sorted[i].weight))
      throw ConfigError("custom kernel interval must satisfy lo < hi");
    if (i > 0 && sorted[i].lo < sorted[i - 1].hi)
      throw ConfigError("custom kernel intervals overlap");
  }
  Kernel k;
  k.name_ = KernelName::custom_intervals;
  k.shape_ = Shape::piecewise_constant;
  k.pieces_ = std::move(pieces);
  k.order_ = order;
  double splus = 0.0, sminus = 0.0;
  for (const auto& p : k.pieces_) {
    k.support_radius_ =
      std::max({ k.support_radius_, std::abs(p.lo), std::abs(p.hi) });
    k.sup_norm_ = std::max(k.sup_norm_, std::abs(p.weight));
    if (p.weight > 0)
      splus += p.hi - p.lo;
    else if (p.weight < 0)
      sminus += p.hi - p.lo;
  }
  k.lambda_splus_ = Extended::finite(splus);
  k.lambda_sminus_ = Extended::finite(sminus);
  k.finish();
  return k;
}

inline Kernel
Kernel::from_table(std::vector<double> z,
                   std::vector<double> values,
                   std::optional<int> order)
{
  if (z.size() < 2 || z.size() != values.size())
    throw ConfigError("tabulated kernel needs matching z and k arrays (>= 2)");
  for (size_t i = 1; i < z.size(); ++i)
    if (!(z[i] > z[i - 1]))
      throw ConfigError("tabulated kernel abscissae must be increasing");
  Kernel k;
  k.name_ = KernelName::custom_tabulated;
  k.shape_ = Shape::piecewise_linear;
  k.order_ = order;
  k.support_radius_ = std::max(std::abs(z.front()), std::abs(z.back()));
  for (double v : values)
    k.sup_norm_ = std::max(k.sup_norm_, std::abs(v));
  k.table_z_ = std::move(z);
  k.table_k_ = std::move(values);
  // measures are estimated by support_measures(); unknown until certified
  k.lambda_splus_ = Extended::infinity();
  k.lambda_sminus_ = Extended::infinity();
  k.finish();
  return k;
}

inline void
Kernel::finish()
{
  if (shape_ == Shape::gaussian) {
    // truncate where the profile drops below 1e-12
    quadrature_radius_ =
      std::sqrt(2.0 * std::log(1.0 / (1e-12 * std::sqrt(2.0 * std::numbers::pi))));
    breaks_.clear();
    const int segments = 8;
    for (int i = 0; i <= segments; ++i)
      breaks_.push_back(-quadrature_radius_ +
                        2.0 * quadrature_radius_ * i / segments);
  } else {
    quadrature_radius_ = support_radius_;
    breaks_.clear();
    if (shape_ == Shape::piecewise_constant) {
      for (const auto& p : pieces_) {
        breaks_.push_back(p.lo);
        breaks_.push_back(p.hi);
      }
    } else if (shape_ == Shape::piecewise_linear) {
      breaks_ = table_z_;
    } else {
      breaks_ = { -1.0, 1.0 };
    }
    std::sort(breaks_.begin(), breaks_.end());
    breaks_.erase(std::unique(breaks_.begin(), breaks_.end()), breaks_.end());
    if (breaks_.front() < 0.0 && breaks_.back() > 0.0 &&
        !std::binary_search(breaks_.begin(), breaks_.end(), 0.0))
      breaks_.insert(std::lower_bound(breaks_.begin(), breaks_.end(), 0.0), 0.0);
  }

  auto one_d = [this](auto fn) {
    QuadSettings s;
    s.nodes = 32;
    s.tol = 1e-13;
    s.max_refine = 8;
    return integrate(std::vector<Axis>{ Axis{ breaks_, s.nodes } },
                     s,
                     0.0,
                     [&](std::span<const double> z, double w, double& acc) {
                       acc += w * fn(z[0]);
                     })
      .value;
  };
  double mass = one_d([this](double t) { return profile(t); });
  if (std::abs(mass - 1.0) > 1e-8)
    throw ConfigError("kernel does not integrate to one (integral = " +
                      std::to_string(mass) + ")");
  double l2 = one_d([this](double t) {
    double k = profile(t);
    return k * k;
  });
  l2_ = std::pow(l2, static_cast<double>(dim_));
}

inline std::optional<SignedIndicator>
Kernel::signed_indicator() const
{
  if (shape_ != Shape::piecewise_constant || dim_ != 1)
    return std::nullopt;
  SignedIndicator out{ {}, {}, 0.0, 0.0 };
  for (const auto& p : pieces_) {
    if (p.weight == 1.0) {
      out.D.push_back({ p.lo, p.hi });
      out.lambda_D += p.hi - p.lo;
    } else if (p.weight == -1.0) {
      out.Dprime.push_back({ p.lo, p.hi });
      out.lambda_Dprime += p.hi - p.lo;
    } else if (p.weight != 0.0) {
      return std::nullopt;
    }
  }
  return out;
}

inline nlohmann::json
Kernel::to_json() const
{
  nlohmann::json j;
  j["d"] = dim_;
  switch (name_) {
    case KernelName::custom_intervals: {
      nlohmann::json iv = nlohmann::json::array();
      for (const auto& p : pieces_)
        iv.push_back({ p.lo, p.hi, p.weight });
      j["custom"] = { { "intervals", iv } };
      break;
    }
    case KernelName::custom_tabulated:
      j["custom"] = { { "tabulated", { { "z", table_z_ }, { "k", table_k_ } } } };
      break;
    default:
      j["name"] = to_string(name_);
  }
  if (order_)
    j["order"] = *order_;
  else
    j["order"] = nullptr;
  if (std::isfinite(support_radius_))
    j["support_radius"] = support_radius_;
  else
    j["support_radius"] = "inf";
  return j;
}

inline Kernel
Kernel::from_json(const nlohmann::json& j)
{
  if (!j.is_object())
    throw ConfigError("kernel spec must be a JSON object");
  int d = j.value("d", 1);
  std::optional<int> order;
  if (j.contains("order") && !j["order"].is_null())
    order = j["order"].get<int>();
  Kernel k;
  if (j.contains("name")) {
    const auto name = j["name"].get<std::string>();
    if (name == "uniform")
      k = builtin(KernelName::uniform, d);
    else if (name == "epanechnikov")
      k = builtin(KernelName::epanechnikov, d);
    else if (name == "gaussian")
      k = builtin(KernelName::gaussian, d);
    else if (name == "fourth_order_signed")
      k = builtin(KernelName::fourth_order_signed, d);
    else
      throw ConfigError("unknown kernel name: " + name);
  } else if (j.contains("custom")) {
    if (d != 1)
      throw ConfigError("custom kernels are supported for d = 1 only");
    const auto& c = j["custom"];
    if (c.contains("intervals")) {
      std::vector<WeightedInterval> pieces;
      for (const auto& row : c["intervals"]) {
        if (!row.is_array() || row.size() != 3)
          throw ConfigError("custom interval must be [lo, hi, weight]");
        pieces.push_back(
          { row[0].get<double>(), row[1].get<double>(), row[2].get<double>() });
      }
      k = from_intervals(std::move(pieces), order);
    } else if (c.contains("tabulated")) {
      k = from_table(c["tabulated"].at("z").get<std::vector<double>>(),
                     c["tabulated"].at("k").get<std::vector<double>>(),
                     order);
    } else {
      throw ConfigError("custom kernel needs 'intervals' or 'tabulated'");
    }
  } else {
    throw ConfigError("kernel spec needs 'name' or 'custom'");
  }
  if (j.contains("support_radius") && j["support_radius"].is_number() &&
      j["support_radius"].get<double>() + 1e-12 < k.support_radius())
    throw ConfigError("declared support_radius is smaller than the support");
  return k;
}

//! Per-coordinate moment report for the order condition.
struct OrderReport
{
  int p;
  //! moments[j][s-1] = ∫ y_j^s K(y) dy for s = 1..p-1
  std::vector<std::vector<double>> moments;
  //! ∫ |y_j^p K(y)| dy
  std::vector<double> abs_moment_p;
  double integral;
  double quadrature_error;
  bool pass;
};

inline OrderReport
verify_order(const Kernel& k, int p, double tol)
{
  if (p < 2)
    throw ConfigError("kernel order p must be >= 2");
  const int d = k.dim();
  const int per = p; // s = 1..p-1 plus the absolute p-th moment
  const Eigen::Index n = static_cast<Eigen::Index>(d * per + 1);
  QuadSettings qs;
  qs.nodes = 64;
  qs.tol = 1e-14;
  qs.max_refine = 8;
  auto result = integrate(
    k.axes(qs.nodes),
    qs,
    Eigen::VectorXd(Eigen::VectorXd::Zero(n)),
    [&](std::span<const double> y, double w, Eigen::VectorXd& acc) {
      double kv = k(y);
      if (kv == 0.0)
        return;
      acc(n - 1) += w * kv;
      for (int j = 0; j < d; ++j) {
        double pw = 1.0;
        for (int s = 1; s < p; ++s) {
          pw *= y[j];
          acc(j * per + s - 1) += w * pw * kv;
        }
        acc(j * per + p - 1) += w * std::abs(pw * y[j] * kv);
      }
    });
  OrderReport rep{ p, {}, {}, result.value(n - 1), result.error, true };
  for (int j = 0; j < d; ++j) {
    std::vector<double> mom;
    for (int s = 1; s < p; ++s) {
      double m = result.value(j * per + s - 1);
      mom.push_back(m);
      if (std::abs(m) > tol)
        rep.pass = false;
    }
    rep.moments.push_back(mom);
    double am = result.value(j * per + p - 1);
    rep.abs_moment_p.push_back(am);
    if (!std::isfinite(am))
      rep.pass = false;
  }
  return rep;
}

struct SupportMeasures
{
  Extended splus;
  Extended sminus;
  double uncertainty; //!< 0 for exact metadata
};

//! Lebesgue measures of {K > 0} and {K < 0}. Stored metadata for built-ins
//! and interval kernels; adaptive grid counting otherwise.
inline SupportMeasures
support_measures(const Kernel& k)
{
  if (k.name() != KernelName::custom_tabulated)
    return { k.lambda_splus(), k.lambda_sminus(), 0.0 };
  const double lo = -k.support_radius();
  const double hi = k.support_radius();
  double prev_plus = -1.0, prev_minus = -1.0, unc = hi - lo;
  for (int level = 10; level <= 22; ++level) {
    const long cells = 1L << level;
    const double width = (hi - lo) / static_cast<double>(cells);
    double plus = 0.0, minus = 0.0;
    long mixed = 0;
    double left = k.profile(lo);
    for (long c = 0; c < cells; ++c) {
      double right = k.profile(lo + (c + 1) * width);
      double mid = k.profile(lo + (c + 0.5) * width);
      if (mid > 0)
        plus += width;
      else if (mid < 0)
        minus += width;
      if ((left > 0) != (right > 0) || (left < 0) != (right < 0))
        ++mixed;
      left = right;
    }
    unc = static_cast<double>(mixed) * width;
    if (std::abs(plus - prev_plus) < 1e-9 && std::abs(minus - prev_minus) < 1e-9)
      return { Extended::finite(plus), Extended::finite(minus), unc };
    prev_plus = plus;
    prev_minus = minus;
  }
  return { Extended::finite(prev_plus), Extended::finite(prev_minus), unc };
}

//! Runs verify_order and support_measures and returns a verified copy
//! carrying the confirmed order and measures. Throws ConfigError on failure.
inline Kernel
certify(const Kernel& k, int p, double tol)
{
  auto report = verify_order(k, p, tol);
  if (!report.pass)
    throw ConfigError("kernel fails the order-" + std::to_string(p) +
                      " moment conditions");
  auto measures = support_measures(k);
  Kernel out = k;
  out.order_ = p;
  out.lambda_splus_ = measures.splus;
  out.lambda_sminus_ = measures.sminus;
  out.verified_ = true;
  return out;
}

} // namespace devrate
