#pragma once

#include "core.hpp"
#include "dataset.hpp"
#include "kernels.hpp"
#include "models.hpp"
#include "quadrature.hpp"
#include "schedules.hpp"

#include <cmath>
#include <functional>
#include <vector>

namespace devrate {

//! Estimator output at one point: m_n(x), g_n(x) and their ratio.
struct EvalPoint
{
  Vec x;
  Vec m;
  double g;
  Vec r;
  size_t n;
  bool zero_density; //!< g_n(x) == 0, in which case r is the zero vector
};

namespace detail {

inline EvalPoint
finish_point(const Vec& x, Vec m, double g, size_t n)
{
  EvalPoint out{ x, m, g, Vec::Zero(m.size()), n, g == 0.0 };
  if (!out.zero_density)
    out.r = m / g;
  return out;
}

inline void
check_dims(const Dataset& data, const Kernel& k, const Vec& x)
{
  if (data.dx() != k.dim() || x.size() != data.dx())
    throw InputError("dimension mismatch between data, kernel and point");
}

} // namespace detail

//! Nadaraya-Watson estimate at x with bandwidth h.
inline EvalPoint
eval_nw(const Dataset& data, const Kernel& k, double h, const Vec& x)
{
  if (!(h > 0.0))
    throw InputError("bandwidth must be positive");
  if (data.empty())
    throw InputError("dataset is empty");
  detail::check_dims(data, k, x);
  const int d = data.dx();
  Vec z(d);
  Vec m = Vec::Zero(data.dy());
  double g = 0.0;
  for (size_t i = 0; i < data.size(); ++i) {
    auto xi = data.x(i);
    for (int j = 0; j < d; ++j)
      z(j) = (x(j) - xi[static_cast<size_t>(j)]) / h;
    double kv = k(z);
    if (kv == 0.0)
      continue;
    auto yi = data.y(i);
    for (int j = 0; j < data.dy(); ++j)
      m(j) += yi[static_cast<size_t>(j)] * kv;
    g += kv;
  }
  const double scale = 1.0 / (static_cast<double>(data.size()) * std::pow(h, d));
  return detail::finish_point(x, m * scale, g * scale, data.size());
}

//! Running sums of the semi-recursive estimator at a fixed point; the i-th
//! observation is smoothed with its own bandwidth h_i.
class RecursiveState
{
public:
  RecursiveState(Kernel k, BandwidthSchedule sched, Vec x, int dy)
    : kernel_(std::move(k))
    , sched_(sched)
    , x_(std::move(x))
    , sum_m_(Vec::Zero(dy))
  {
    if (x_.size() != kernel_.dim() || sched_.d() != kernel_.dim())
      throw InputError("dimension mismatch between point, kernel and schedule");
  }

  void update(std::span<const double> xi, std::span<const double> yi)
  {
    if (static_cast<Eigen::Index>(xi.size()) != x_.size() ||
        static_cast<Eigen::Index>(yi.size()) != sum_m_.size())
      throw InputError("observation dimension mismatch");
    ++count_;
    const double h = sched_(static_cast<double>(count_));
    const int d = static_cast<int>(x_.size());
    Vec z(d);
    for (int j = 0; j < d; ++j)
      z(j) = (x_(j) - xi[static_cast<size_t>(j)]) / h;
    const double w = kernel_(z) / std::pow(h, d);
    if (w == 0.0)
      return;
    for (Eigen::Index j = 0; j < sum_m_.size(); ++j)
      sum_m_(j) += yi[static_cast<size_t>(j)] * w;
    sum_g_ += w;
  }

  size_t count() const { return count_; }
  const Vec& sum_m() const { return sum_m_; }
  double sum_g() const { return sum_g_; }

  //! m~_i = S_m / i, g~_i = S_g / i, r~_i = m~_i / g~_i or 0.
  EvalPoint query() const
  {
    if (count_ == 0)
      return detail::finish_point(x_, Vec::Zero(sum_m_.size()), 0.0, 0);
    const double inv = 1.0 / static_cast<double>(count_);
    return detail::finish_point(x_, sum_m_ * inv, sum_g_ * inv, count_);
  }

private:
  Kernel kernel_;
  BandwidthSchedule sched_;
  Vec x_;
  Vec sum_m_;
  double sum_g_ = 0.0;
  size_t count_ = 0;
};

inline RecursiveState
update_recursive(RecursiveState state,
                 std::span<const double> xi,
                 std::span<const double> yi)
{
  state.update(xi, yi);
  return state;
}

//! Semi-recursive estimate over a whole dataset (observations in order).
inline EvalPoint
eval_semirecursive(const Dataset& data,
                   const Kernel& k,
                   const BandwidthSchedule& sched,
                   const Vec& x)
{
  if (data.empty())
    throw InputError("dataset is empty");
  detail::check_dims(data, k, x);
  RecursiveState state(k, sched, x, data.dy());
  for (size_t i = 0; i < data.size(); ++i)
    state.update(data.x(i), data.y(i));
  return state.query();
}

struct BiasRow
{
  double n;
  double h;
  double bias_m; //!< |E m_n(x) - m(x)|
  double bias_g; //!< |E g_n(x) - g(x)|
};

struct BiasTable
{
  std::vector<BiasRow> rows;
  double slope_m; //!< least-squares slope of log bias_m against log h
  double slope_g;
};

namespace detail {

inline double
loglog_slope(const std::vector<BiasRow>& rows, double BiasRow::*field)
{
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  int n = 0;
  for (const auto& r : rows) {
    double b = r.*field;
    if (!(b > 0.0))
      continue;
    double lx = std::log(r.h), ly = std::log(b);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
    ++n;
  }
  if (n < 2)
    return std::numeric_limits<double>::quiet_NaN();
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

} // namespace detail

//! Exact bias of m_n and g_n by quadrature:
//! E m_n(x) - m(x) = ∫ K(y) [m(x - h y) - m(x)] dy.
inline BiasTable
bias_probe(const std::function<Vec(const Vec&)>& m,
           const std::function<double(const Vec&)>& g,
           const Kernel& k,
           const BandwidthSchedule& sched,
           const Vec& x,
           const std::vector<double>& ns)
{
  if (x.size() != k.dim())
    throw InputError("dimension mismatch between point and kernel");
  const Vec m0 = m(x);
  const double g0 = g(x);
  const Eigen::Index q = m0.size();
  QuadSettings qs;
  qs.tol = 1e-13;
  qs.max_refine = 6;
  BiasTable table;
  for (double n : ns) {
    const double h = sched(n);
    using Acc = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, 4, 1>;
    auto res = integrate(
      k.axes(qs.nodes), qs, Acc(Acc::Zero(q + 1)),
      [&](std::span<const double> y, double w, Acc& acc) {
        double kv = k(y);
        if (kv == 0.0)
          return;
        Vec t(x.size());
        for (Eigen::Index j = 0; j < x.size(); ++j)
          t(j) = x(j) - h * y[static_cast<size_t>(j)];
        acc.head(q) += w * kv * (m(t) - m0);
        acc(q) += w * kv * (g(t) - g0);
      });
    table.rows.push_back({ n, h, res.value.head(q).norm(), std::abs(res.value(q)) });
  }
  table.slope_m = detail::loglog_slope(table.rows, &BiasRow::bias_m);
  table.slope_g = detail::loglog_slope(table.rows, &BiasRow::bias_g);
  return table;
}

inline BiasTable
bias_probe(const JointModel& model,
           const Kernel& k,
           const BandwidthSchedule& sched,
           const Vec& x,
           const std::vector<double>& ns)
{
  if (model.dx() != k.dim())
    throw InputError("dimension mismatch between model and kernel");
  return bias_probe([&](const Vec& t) { return model.m(t); },
                    [&](const Vec& t) { return model.g(t); },
                    k, sched, x, ns);
}

} // namespace devrate
