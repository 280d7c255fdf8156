#pragma once

#include "core.hpp"

#include <algorithm>
#include <array>
#include <boost/math/special_functions/legendre.hpp>
#include <map>
#include <mutex>
#include <span>
#include <vector>

namespace devrate {

//! Quadrature settings shared by every integral in the rate-function code.
struct QuadSettings
{
  int nodes = 64;         //!< Gauss-Legendre nodes per panel on z axes
  int panels = 1;         //!< initial panels per kernel segment
  double tol = 1e-9;      //!< accepted |I_n - I_{n/2}| relative to max(1,|I|)
  int max_refine = 6;     //!< panel doublings before giving up
  int s_nodes = 16;       //!< nodes per panel on the semi-recursive s axis
  int lambda_nodes = 16;  //!< nodes for the per-term integrals in Lambda_n

  void validate() const
  {
    if (nodes < 2 || nodes % 2 != 0)
      throw ConfigError("quad.nodes must be an even integer >= 2");
    if (s_nodes < 2 || s_nodes % 2 != 0)
      throw ConfigError("quad.s_nodes must be an even integer >= 2");
    if (panels < 1 || max_refine < 0 || lambda_nodes < 1)
      throw ConfigError("quad.panels, quad.max_refine, quad.lambda_nodes "
                        "must be positive");
    if (!(tol > 0.0))
      throw ConfigError("quad.tol must be positive");
  }
};

//! Gauss-Legendre rule on [-1, 1].
class GaussLegendre
{
public:
  explicit GaussLegendre(int n);

  int size() const { return static_cast<int>(nodes_.size()); }
  const std::vector<double>& nodes() const { return nodes_; }
  const std::vector<double>& weights() const { return weights_; }

private:
  std::vector<double> nodes_;
  std::vector<double> weights_;
};

inline GaussLegendre::GaussLegendre(int n)
{
  if (n < 1)
    throw ConfigError("Gauss-Legendre rule needs at least one node");
  // legendre_p_zeros returns the nonnegative zeros in increasing order
  auto zeros = boost::math::legendre_p_zeros<double>(n);
  std::vector<double> all;
  for (auto it = zeros.rbegin(); it != zeros.rend(); ++it)
    if (*it != 0.0)
      all.push_back(-*it);
  for (double z : zeros)
    all.push_back(z);
  nodes_ = all;
  weights_.resize(all.size());
  for (size_t i = 0; i < all.size(); ++i) {
    double x = all[i];
    double dp = boost::math::legendre_p_prime(n, x);
    weights_[i] = 2.0 / ((1.0 - x * x) * dp * dp);
  }
}

//! Process-wide cache of rules; entries are never erased so references stay
//! valid.
inline const GaussLegendre&
gauss_legendre(int n)
{
  static std::mutex mutex;
  static std::map<int, GaussLegendre> cache;
  std::lock_guard<std::mutex> lock(mutex);
  auto it = cache.find(n);
  if (it == cache.end())
    it = cache.emplace(n, GaussLegendre(n)).first;
  return it->second;
}

//! An integration axis: sorted breakpoints delimiting smooth segments, and
//! the number of nodes per panel.
struct Axis
{
  std::vector<double> breaks;
  int nodes;
};

//! Nodes and weights of a composite rule along one axis.
struct AxisRule
{
  std::vector<double> nodes;
  std::vector<double> weights;
};

inline AxisRule
composite_rule(const Axis& axis, int panels, int nodes)
{
  const auto& rule = gauss_legendre(nodes);
  AxisRule out;
  for (size_t s = 0; s + 1 < axis.breaks.size(); ++s) {
    double lo = axis.breaks[s];
    double hi = axis.breaks[s + 1];
    if (!(hi > lo))
      continue;
    double width = (hi - lo) / panels;
    for (int p = 0; p < panels; ++p) {
      double a = lo + p * width;
      double half = 0.5 * width;
      double mid = a + half;
      for (int k = 0; k < rule.size(); ++k) {
        out.nodes.push_back(mid + half * rule.nodes()[k]);
        out.weights.push_back(half * rule.weights()[k]);
      }
    }
  }
  return out;
}

//! Tensor-product sum: calls f(point, weight, acc) for every grid point.
template<class R, class F>
void
tensor_sum(const std::vector<AxisRule>& rules, R& acc, F&& f)
{
  const size_t dim = rules.size();
  for (const auto& r : rules)
    if (r.nodes.empty())
      return;
  std::vector<size_t> idx(dim, 0);
  std::array<double, 8> point{};
  while (true) {
    double w = 1.0;
    for (size_t a = 0; a < dim; ++a) {
      point[a] = rules[a].nodes[idx[a]];
      w *= rules[a].weights[idx[a]];
    }
    f(std::span<const double>(point.data(), dim), w, acc);
    size_t a = 0;
    for (; a < dim; ++a) {
      if (++idx[a] < rules[a].nodes.size())
        break;
      idx[a] = 0;
    }
    if (a == dim)
      break;
  }
}

inline double
quad_norm(double x)
{
  return std::abs(x);
}

template<class Derived>
double
quad_norm(const Eigen::MatrixBase<Derived>& x)
{
  return x.template lpNorm<Eigen::Infinity>();
}

template<class R>
struct QuadResult
{
  R value;
  double error;
  int panels;
};

//! Adaptive tensor Gauss-Legendre. Each level compares the rule with `nodes`
//! against the rule with `nodes / 2` on the same panels and doubles the
//! panel count until the difference drops below tol * max(1, |I|).
template<class R, class F>
QuadResult<R>
integrate(const std::vector<Axis>& axes,
          const QuadSettings& settings,
          const R& zero,
          F&& f)
{
  double err = std::numeric_limits<double>::infinity();
  for (int level = 0; level <= settings.max_refine; ++level) {
    int panels = settings.panels << level;
    std::vector<AxisRule> fine, coarse;
    for (const auto& axis : axes) {
      fine.push_back(composite_rule(axis, panels, axis.nodes));
      coarse.push_back(composite_rule(axis, panels, axis.nodes / 2));
    }
    R hi = zero;
    R lo = zero;
    tensor_sum(fine, hi, f);
    tensor_sum(coarse, lo, f);
    err = quad_norm(hi - lo);
    if (!std::isfinite(err))
      throw NumericError("non-finite integrand in quadrature", err);
    if (err <= settings.tol * std::max(1.0, quad_norm(hi)))
      return { hi, err, panels };
  }
  throw NumericError("quadrature did not reach tolerance", err);
}

//! Single fixed-rule evaluation, used where the integrand is known smooth and
//! the call count is large (finite-n cumulants).
template<class R, class F>
R
integrate_fixed(const std::vector<Axis>& axes, int nodes, const R& zero, F&& f)
{
  std::vector<AxisRule> rules;
  for (const auto& axis : axes)
    rules.push_back(composite_rule(axis, 1, nodes));
  R acc = zero;
  tensor_sum(rules, acc, f);
  return acc;
}

} // namespace devrate
