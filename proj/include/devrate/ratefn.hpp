#pragma once

#include "core.hpp"
#include "io.hpp"
#include "kernels.hpp"
#include "models.hpp"
#include "parallel.hpp"
#include "quadrature.hpp"
#include "schedules.hpp"

#include <json.hpp>

#include <cmath>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace devrate {

//! Which estimator the cumulant belongs to: Nadaraya-Watson, or the
//! semi-recursive estimator with bandwidth exponent a.
struct Variant
{
  enum class Kind
  {
    nw,
    semirec
  };

  Kind kind = Kind::nw;
  double a = 0.0;

  static Variant nw() { return {}; }
  static Variant semirec(double a) { return { Kind::semirec, a }; }
  bool is_semirec() const { return kind == Kind::semirec; }

  nlohmann::json to_json() const
  {
    if (is_semirec())
      return { { "kind", "semirec" }, { "a", a } };
    return { { "kind", "nw" } };
  }

  static Variant from_json(const nlohmann::json& j)
  {
    if (j.is_string() && j.get<std::string>() == "nw")
      return nw();
    const auto kind = j.at("kind").get<std::string>();
    if (kind == "nw")
      return nw();
    if (kind == "semirec")
      return semirec(j.at("a").get<double>());
    throw ConfigError("unknown variant: " + kind);
  }
};

inline QuadSettings
quad_from_json(const nlohmann::json& j)
{
  QuadSettings q;
  q.nodes = j.value("nodes", q.nodes);
  q.panels = j.value("panels", q.panels);
  q.tol = j.value("tol", q.tol);
  q.max_refine = j.value("max_refine", q.max_refine);
  q.s_nodes = j.value("s_nodes", q.s_nodes);
  q.lambda_nodes = j.value("lambda_nodes", q.lambda_nodes);
  q.validate();
  return q;
}

inline nlohmann::json
quad_to_json(const QuadSettings& q)
{
  return { { "nodes", q.nodes },       { "panels", q.panels },
           { "tol", q.tol },           { "max_refine", q.max_refine },
           { "s_nodes", q.s_nodes },   { "lambda_nodes", q.lambda_nodes } };
}

//! Everything the limiting cumulant at a point depends on. Immutable; the
//! cached quantities are computed once at construction.
class CumulantContext
{
public:
  CumulantContext(std::shared_ptr<const JointModel> model,
                  Kernel kernel,
                  Vec x,
                  Variant variant = Variant::nw(),
                  QuadSettings quad = {});

  const JointModel& model() const { return *model_; }
  std::shared_ptr<const JointModel> model_ptr() const { return model_; }
  const Kernel& kernel() const { return kernel_; }
  const Vec& x() const { return x_; }
  const Variant& variant() const { return variant_; }
  const QuadSettings& quad() const { return quad_; }
  int d() const { return kernel_.dim(); }
  int q() const { return model_->dy(); }
  //! a d for the semi-recursive variant, 0 for Nadaraya-Watson.
  double ad() const { return variant_.is_semirec() ? variant_.a * d() : 0.0; }
  double g_x() const { return g_x_; }
  const Vec& r_x() const { return r_x_; }
  Vec m_x() const { return r_x_ * g_x_; }
  const Mat& sigma_x() const { return sigma_x_; }
  double kernel_l2() const { return kernel_.l2_norm_squared(); }

  nlohmann::json to_json() const;
  static CumulantContext from_json(const nlohmann::json& j);

private:
  std::shared_ptr<const JointModel> model_;
  Kernel kernel_;
  Vec x_;
  Variant variant_;
  QuadSettings quad_;
  double g_x_;
  Vec r_x_;
  Mat sigma_x_;
};

inline CumulantContext::CumulantContext(std::shared_ptr<const JointModel> model,
                                        Kernel kernel,
                                        Vec x,
                                        Variant variant,
                                        QuadSettings quad)
  : model_(std::move(model))
  , kernel_(std::move(kernel))
  , x_(std::move(x))
  , variant_(variant)
  , quad_(quad)
{
  if (!model_)
    throw ConfigError("cumulant context needs a model");
  if (!kernel_.verified())
    throw ConfigError("kernel is unverified; run certify() first");
  if (model_->dx() != kernel_.dim() || x_.size() != kernel_.dim())
    throw ConfigError("dimension mismatch between model, kernel and point");
  if (variant_.is_semirec() && !(variant_.a > 0.0 && variant_.a * d() < 1.0))
    throw ConfigError("semi-recursive variant needs 0 < a < 1/d");
  quad_.validate();
  g_x_ = model_->g(x_);
  r_x_ = model_->r(x_);
  sigma_x_ = model_->sigma(x_);
}

inline nlohmann::json
CumulantContext::to_json() const
{
  return { { "model", model_->spec().to_json() },
           { "kernel", kernel_.to_json() },
           { "x", vec_to_json(x_) },
           { "variant", variant_.to_json() },
           { "quad", quad_to_json(quad_) } };
}

inline CumulantContext
CumulantContext::from_json(const nlohmann::json& j)
{
  auto model = std::make_shared<const JointModel>(
    ModelSpec::from_json(j.at("model")));
  Kernel k = Kernel::from_json(j.at("kernel"));
  if (!k.verified()) {
    if (!k.order())
      throw ConfigError("custom kernels need a declared order to be certified");
    k = certify(k, *k.order(), 1e-8);
  }
  Variant variant =
    j.contains("variant") ? Variant::from_json(j["variant"]) : Variant::nw();
  QuadSettings quad =
    j.contains("quad") ? quad_from_json(j["quad"]) : QuadSettings{};
  return { model, k, vec_from_json(j.at("x"), "x"), variant, quad };
}

//! Psi (and optionally its gradient and Hessian) at w = (u, v).
struct PsiEval
{
  double value;
  Vec grad; //!< (d/du, d/dv)
  Mat hess;
  double quad_error;
};

namespace detail {

//! Breaks of the s^{ad} axis: geometric panels refining toward both ends
//! down to the scale on which the exponent changes by O(1). The layer at 0
//! comes from the weight, the one at 1 from large arguments of the exponential.
inline std::vector<double>
graded_breaks(double scale)
{
  const double first = std::max(1.0 / (64.0 * scale), 0x1p-60);
  std::vector<double> lower;
  for (double b = first; b < 0.5; b *= 2.0)
    lower.push_back(b);
  std::vector<double> breaks{ 0.0 };
  breaks.insert(breaks.end(), lower.begin(), lower.end());
  breaks.push_back(0.5);
  for (auto it = lower.rbegin(); it != lower.rend(); ++it)
    breaks.push_back(1.0 - *it);
  breaks.push_back(1.0);
  return breaks;
}

} // namespace detail

//! Evaluates Psi_x(u, v) = ∫ [e^{v K(z)} M_x(u K(z)) - g(x)] dz (NW), or the
//! semi-recursive version with the extra s-integral, to order 0, 1 or 2.
//!
//! The semi-recursive s-integral is taken in the variable sigma = s^{ad}:
//! ∫_0^1 s^{-ad} F(s^{ad}) ds = ∫_0^1 (1/ad) sigma^{1/ad - 2} F(sigma) dsigma,
//! whose integrand is bounded at 0 because F(0) = 0.
inline PsiEval
eval_psi_full(const CumulantContext& ctx, const Vec& u, double v, int order)
{
  const int q = ctx.q();
  if (u.size() != q)
    throw InputError("u must have dimension q");
  const int m = q + 1;
  const Eigen::Index size = 1 + (order >= 1 ? m : 0) + (order >= 2 ? m * m : 0);
  using Packed = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, 16, 1>;

  const JointModel& model = ctx.model();
  const Kernel& K = ctx.kernel();
  const double g = ctx.g_x();
  const Vec& r = ctx.r_x();
  const bool semirec = ctx.variant().is_semirec();
  const double ad = ctx.ad();

  std::vector<Axis> axes;
  if (semirec) {
    double scale = K.sup_norm() * (std::abs(v) + u.norm() * (r.norm() + 1.0)) +
                   K.sup_norm() * K.sup_norm() * u.squaredNorm() *
                     ctx.sigma_x().norm() +
                   1.0;
    axes.push_back(Axis{ detail::graded_breaks(scale), ctx.quad().s_nodes });
  }
  // The integrand depends on z only through K(z), so a piecewise constant
  // kernel needs a single node per piece (two for the error estimate).
  for (const auto& a : K.axes(K.piecewise_constant() ? 2 : ctx.quad().nodes))
    axes.push_back(a);

  const double sexp = semirec ? 1.0 / ad - 2.0 : 0.0;
  auto res = integrate(
    axes, ctx.quad(), Packed(Packed::Zero(size)),
    [&](std::span<const double> p, double w, Packed& acc) {
      double sigma = 1.0, factor = 1.0;
      auto z = p;
      if (semirec) {
        sigma = p[0];
        z = p.subspan(1);
        factor = std::exp(sexp * std::log(sigma)) / ad;
      }
      const double k = K(z);
      if (k == 0.0)
        return;
      const double ke = sigma * k;
      const Vec uk = u * ke;
      const auto nc = model.noise_cumulant(uk);
      const double E = v * ke + uk.dot(r) + nc.value;
      const double wf = w * factor;
      acc(0) += wf * g * std::expm1(E);
      if (order < 1)
        return;
      const double L = g * std::exp(E);
      const Vec a = r + nc.grad;
      const double c1 = wf * ke * L;
      acc.segment(1, q) += c1 * a;
      acc(q + 1) += c1;
      if (order < 2)
        return;
      const double c2 = c1 * ke;
      const Eigen::Index o = 1 + m;
      for (int i = 0; i < q; ++i) {
        for (int j = 0; j < q; ++j)
          acc(o + i * m + j) += c2 * (a(i) * a(j) + nc.hess(i, j));
        acc(o + i * m + q) += c2 * a(i);
        acc(o + q * m + i) += c2 * a(i);
      }
      acc(o + q * m + q) += c2;
    });

  PsiEval out{ res.value(0), Vec(), Mat(), res.error };
  if (order >= 1)
    out.grad = res.value.segment(1, m);
  if (order >= 2) {
    out.hess.resize(m, m);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < m; ++j)
        out.hess(i, j) = res.value(1 + m + i * m + j);
  }
  return out;
}

inline double
eval_psi(const CumulantContext& ctx, const Vec& u, double v)
{
  return eval_psi_full(ctx, u, v, 0).value;
}

//! (d Psi/du, d Psi/dv) by differentiating under the integral.
inline std::pair<Vec, double>
eval_psi_grad(const CumulantContext& ctx, const Vec& u, double v)
{
  auto e = eval_psi_full(ctx, u, v, 1);
  const int q = ctx.q();
  return { e.grad.head(q), e.grad(q) };
}

enum class RateStatus
{
  converged,
  diverged_to_infinite,
  max_iter
};

inline std::string
to_string(RateStatus s)
{
  switch (s) {
    case RateStatus::converged:
      return "converged";
    case RateStatus::diverged_to_infinite:
      return "diverged_to_infinite";
    case RateStatus::max_iter:
      return "max_iter";
  }
  return "unknown";
}

//! Evidence that the Legendre supremum is +inf: the ascent left the norm
//! budget while the objective was still strictly increasing.
struct DivergenceCertificate
{
  int iterations;
  double norm;
  double directional_derivative;
  double objective;
};

struct ConjugateOptions
{
  int max_iter = 5000;
  double grad_tol = 1e-9;       //!< on |t - grad Psi|, scaled by max(1, |t|)
  double norm_budget = 1e6;     //!< iterate norm that triggers the +inf test
  double min_slope = 1e-12;     //!< directional derivative for the certificate
  std::optional<Vec> start;     //!< warm start (u, v)
};

//! Result of one Legendre transform evaluation I(t1, t2).
struct RateResult
{
  RateStatus status;
  Vec u;  //!< maximizer (last iterate when not converged)
  double v;
  double residual;
  int iterations;
  //! last objective: a valid lower bound on I in every status
  double lower_bound;
  std::optional<DivergenceCertificate> certificate;

  //! I(t1, t2); throws NumericError when the status is indeterminate.
  Extended value() const
  {
    switch (status) {
      case RateStatus::converged:
        return Extended::finite(lower_bound);
      case RateStatus::diverged_to_infinite:
        return Extended::infinity();
      case RateStatus::max_iter:
        break;
    }
    throw NumericError("Legendre transform did not converge", residual);
  }
};

//! I(t1, t2) = sup_{u,v} <u,t1> + v t2 - Psi(u, v), by damped Newton ascent
//! with backtracking.
inline RateResult
conjugate(const CumulantContext& ctx,
          const Vec& t1,
          double t2,
          const ConjugateOptions& opt = {})
{
  const int q = ctx.q();
  if (t1.size() != q)
    throw InputError("t1 must have dimension q");
  const int m = q + 1;
  Vec t(m);
  t.head(q) = t1;
  t(q) = t2;
  Vec w = opt.start ? *opt.start : Vec(Vec::Zero(m));
  if (w.size() != m)
    throw InputError("warm start must have dimension q + 1");
  const double tol = opt.grad_tol * std::max(1.0, t.norm());

  // With K >= 0, Psi(0, v) <= 0 for v < 0, so the objective along the ray
  // (0, v), v -> -inf, is at least v t2 -> +inf.
  if (t2 < 0.0 && ctx.kernel().nonnegative()) {
    RateResult out{ RateStatus::diverged_to_infinite, Vec::Zero(q), 0.0, 0.0,
                    0, 0.0, DivergenceCertificate{ 0, 0.0, -t2, 0.0 } };
    return out;
  }

  auto objective = [&](const Vec& p) -> std::optional<double> {
    try {
      double val = t.dot(p) - eval_psi(ctx, p.head(q), p(q));
      if (!std::isfinite(val))
        return std::nullopt;
      return val;
    } catch (const NumericError&) {
      return std::nullopt;
    }
  };

  RateResult out{ RateStatus::max_iter, w.head(q), w(q), 0.0, 0, 0.0, {} };
  Vec last_dir;
  bool last_increase = false;
  double radius = 10.0;

  for (int it = 0; it < opt.max_iter; ++it) {
    PsiEval P = eval_psi_full(ctx, w.head(q), w(q), 2);
    const Vec grad = t - P.grad;
    const double obj = t.dot(w) - P.value;
    out.u = w.head(q);
    out.v = w(q);
    out.residual = grad.norm();
    out.iterations = it;
    out.lower_bound = obj;
    if (out.residual <= tol) {
      out.status = RateStatus::converged;
      return out;
    }
    if (last_increase && w.norm() > opt.norm_budget) {
      double slope = grad.dot(last_dir.normalized());
      if (slope > opt.min_slope) {
        out.status = RateStatus::diverged_to_infinite;
        out.certificate = DivergenceCertificate{ it, w.norm(), slope, obj };
        return out;
      }
    }

    Eigen::LDLT<Mat> ldlt(P.hess);
    Vec dir;
    if (ldlt.info() == Eigen::Success && ldlt.isPositive())
      dir = ldlt.solve(grad);
    radius = std::max(radius, 10.0 * std::max(1.0, w.norm()));
    // Steepest ascent starts from the full trust radius: when the Hessian is
    // numerically flat the gradient alone says nothing about the step length.
    const Vec steepest = grad * (radius / grad.norm());
    if (dir.size() != m || !dir.allFinite() || grad.dot(dir) <= 0.0)
      dir = steepest;

    bool accepted = false;
    for (int attempt = 0; attempt < 2 && !accepted; ++attempt) {
      if (attempt == 1)
        dir = steepest;
      if (dir.norm() > radius)
        dir *= radius / dir.norm();
      const double slope = grad.dot(dir);
      double alpha = 1.0;
      for (int ls = 0; ls < 80; ++ls, alpha *= 0.5) {
        auto f = objective(w + alpha * dir);
        if (f && *f >= obj + 1e-4 * alpha * slope && *f > obj) {
          accepted = true;
          break;
        }
      }
      if (accepted) {
        last_dir = alpha * dir;
        w += alpha * dir;
      }
    }
    last_increase = accepted;
    if (!accepted) {
      // No further increase is possible at working precision; accept the
      // point when the gradient is within the quadrature noise floor.
      if (out.residual <= 1e3 * tol)
        out.status = RateStatus::converged;
      return out;
    }
  }
  return out;
}

//! Minimizer over v of Psi(u, .) by one-dimensional Newton.
inline double
inner_minimizer_v(const CumulantContext& ctx, const Vec& u, double v0 = 0.0)
{
  const int q = ctx.q();
  double v = v0;
  for (int it = 0; it < 200; ++it) {
    auto P = eval_psi_full(ctx, u, v, 2);
    double d1 = P.grad(q);
    double d2 = P.hess(q, q);
    if (std::abs(d1) <= 1e-13 * std::max(1.0, std::abs(P.value)))
      return v;
    double step = -d1 / d2;
    if (!std::isfinite(step))
      break;
    step = std::clamp(step, -5.0, 5.0);
    double f0 = P.value;
    double alpha = 1.0;
    bool ok = false;
    for (int ls = 0; ls < 60; ++ls, alpha *= 0.5) {
      try {
        if (eval_psi(ctx, u, v + alpha * step) <= f0) {
          ok = true;
          break;
        }
      } catch (const NumericError&) {
      }
    }
    if (!ok)
      return v;
    v += alpha * step;
  }
  throw NumericError("inner minimization over v did not converge", v);
}

//! J, J* and the minimizing t for the ratio estimator at s.
struct RegressionRate
{
  Vec s;
  Extended jstar; //!< inf over t != 0 of I(s t, t)
  Extended j;     //!< min(J*, I(0, 0))
  //! I(0, 0), evaluated only when J* is infinite
  std::optional<Extended> i00;
  std::optional<double> t_min;

  nlohmann::json to_json() const
  {
    return { { "s", vec_to_json(s) },
             { "jstar", extended_to_json(jstar) },
             { "j", extended_to_json(j) },
             { "i00", i00 ? extended_to_json(*i00) : nlohmann::json() },
             { "t_min", t_min ? nlohmann::json(*t_min) : nlohmann::json() } };
  }
};

namespace detail {

struct SideMin
{
  Extended value;
  std::optional<double> t;
};

//! Convex one-sided minimization of t -> I(s t, t) over t in side * [2^-20, 2^20].
//! The values on the geometric grid t_k = side 2^k are unimodal in k, so the
//! scan walks downhill from k = 0 and stops at the first increase; only when
//! the start is infinite is the whole grid scanned. Golden-section search then
//! refines inside the bracket around the best node.
template<class F>
SideMin
minimize_side(F&& f, double side)
{
  constexpr int lo = -20, hi = 20;
  std::vector<double> ts;
  std::vector<std::optional<Extended>> memo(hi - lo + 1);
  for (int k = lo; k <= hi; ++k)
    ts.push_back(side * std::ldexp(1.0, k));
  auto at = [&](size_t i) -> Extended {
    if (!memo[i])
      memo[i] = f(ts[i]);
    return *memo[i];
  };

  size_t best = static_cast<size_t>(-lo);
  if (at(best).is_infinite()) {
    for (size_t i = 0; i < ts.size(); ++i)
      if (at(i) < at(best))
        best = i;
  } else {
    for (int dir : { -1, 1 }) {
      size_t i = best;
      while ((dir < 0 ? i > 0 : i + 1 < ts.size()) &&
             at(i + static_cast<size_t>(dir)) < at(i))
        i += static_cast<size_t>(dir);
      if (i != best) {
        best = i;
        break;
      }
    }
  }
  if (at(best).is_infinite())
    return { Extended::infinity(), std::nullopt };
  if (best == 0 || best + 1 == ts.size())
    return { at(best), ts[best] };
  // golden section on [a, c] with interior point b
  double a = ts[best - 1], b = ts[best], c = ts[best + 1];
  Extended fb = at(best);
  const double invphi = 0.5 * (std::sqrt(5.0) - 1.0);
  // J is quadratic near its minimizer, so a relative bracket of 1e-7 in t
  // already pins the value far below the transform tolerance.
  for (int it = 0; it < 200 && std::abs(c - a) > 1e-7 * std::abs(b); ++it) {
    // probe the larger of the two sub-intervals
    bool right = std::abs(c - b) > std::abs(b - a);
    double x = right ? b + (1.0 - invphi) * (c - b) : b - (1.0 - invphi) * (b - a);
    Extended fx = f(x);
    if (fx < fb) {
      if (right)
        a = b;
      else
        c = b;
      b = x;
      fb = fx;
    } else {
      if (right)
        c = x;
      else
        a = x;
    }
  }
  return { fb, b };
}

} // namespace detail

//! J(s) = inf_t I(s t, t) with J* = inf over t != 0.
inline RegressionRate
regression_rate(const CumulantContext& ctx, const Vec& s)
{
  if (s.size() != ctx.q())
    throw InputError("s must have dimension q");
  // warm start each transform from the last finite maximizer
  std::optional<Vec> warm;
  auto eval = [&](double t) {
    ConjugateOptions opt;
    opt.start = warm;
    auto res = conjugate(ctx, s * t, t, opt);
    if (res.status == RateStatus::converged) {
      Vec w(ctx.q() + 1);
      w << res.u, res.v;
      warm = w;
    }
    return res.value();
  };
  auto pos = detail::minimize_side(eval, 1.0);
  warm.reset();
  auto neg = detail::minimize_side(eval, -1.0);
  RegressionRate out{ s, min(pos.value, neg.value), Extended::infinity(),
                      std::nullopt, std::nullopt };
  out.t_min = (neg.value < pos.value) ? neg.t : pos.t;
  if (out.jstar.is_finite()) {
    // J = J* whenever J* is finite, so I(0, 0) is not needed
    out.j = out.jstar;
  } else {
    out.i00 = conjugate(ctx, Vec::Zero(ctx.q()), 0.0).value();
    out.j = *out.i00;
    if (out.j.is_finite())
      out.t_min = 0.0;
  }
  return out;
}

namespace detail {

inline Eigen::LDLT<Mat>
checked_sigma(const CumulantContext& ctx)
{
  if (!(ctx.g_x() > 0.0))
    throw InputError("g(x) must be positive");
  Eigen::LDLT<Mat> ldlt(ctx.sigma_x());
  if (ldlt.info() != Eigen::Success || !ldlt.isPositive() || ldlt.rcond() < 1e-12)
    throw InputError("conditional covariance is singular");
  return ldlt;
}

} // namespace detail

//! Quadratic moderate-deviation rate g(x) v' Sigma^{-1} v / (2 ∫K^2),
//! multiplied by (1 + ad) for the semi-recursive estimator.
inline double
mdp_rate(const CumulantContext& ctx, const Vec& v)
{
  if (v.size() != ctx.q())
    throw InputError("v must have dimension q");
  auto ldlt = detail::checked_sigma(ctx);
  double base = ctx.g_x() * v.dot(ldlt.solve(v)) / (2.0 * ctx.kernel_l2());
  return (1.0 + ctx.ad()) * base;
}

//! Limiting quadratic cumulant u' Sigma u ∫K^2 / (2 g(x)), divided by
//! (1 + ad) for the semi-recursive estimator.
inline double
phi_limit(const CumulantContext& ctx, const Vec& u)
{
  if (u.size() != ctx.q())
    throw InputError("u must have dimension q");
  detail::checked_sigma(ctx);
  double base = u.dot(ctx.sigma_x() * u) * ctx.kernel_l2() / (2.0 * ctx.g_x());
  return base / (1.0 + ctx.ad());
}

//! Finite-n normalized cumulant Lambda_{n,x}(u, v) of (m_n, g_n) (or of the
//! semi-recursive sums), computed exactly by quadrature from the model's
//! shifted Laplace transform.
inline double
eval_lambda_n(const CumulantContext& ctx,
              const Vec& u,
              double v,
              long n,
              const BandwidthSchedule& sched)
{
  if (n < 1)
    throw InputError("n must be >= 1");
  if (u.size() != ctx.q())
    throw InputError("u must have dimension q");
  if (sched.d() != ctx.d())
    throw ConfigError("schedule dimension does not match the context");
  if (ctx.variant().is_semirec() && std::abs(sched.a() - ctx.variant().a) > 1e-15)
    throw ConfigError("schedule exponent differs from the semi-recursive a");
  const JointModel& model = ctx.model();
  const Kernel& K = ctx.kernel();
  const Vec& x = ctx.x();
  const int d = ctx.d();

  // ∫ [e^{rho v K} M_{x - h z}(rho u K) - g(x - h z)] dz
  auto term = [&](double h, double rho, std::span<const double> z, double kz) {
    Vec tpt(d);
    for (int j = 0; j < d; ++j)
      tpt(j) = x(j) - h * z[static_cast<size_t>(j)];
    const double gt = model.g(tpt);
    if (kz == 0.0 || gt == 0.0)
      return 0.0;
    const Vec uk = u * (rho * kz);
    return gt * std::expm1(v * rho * kz + uk.dot(model.r(tpt)) +
                           model.noise_cumulant(uk).value);
  };

  const double hn = sched(static_cast<double>(n));
  const double hnd = std::pow(hn, d);
  if (!ctx.variant().is_semirec()) {
    auto res = integrate(K.axes(ctx.quad().nodes), ctx.quad(), 0.0,
                         [&](std::span<const double> z, double w, double& acc) {
                           acc += w * term(hn, 1.0, z, K(z));
                         });
    return std::log1p(hnd * res.value) / hnd;
  }

  // precomputed tensor nodes for the n per-observation integrals
  std::vector<AxisRule> rules;
  for (const auto& a : K.axes(ctx.quad().lambda_nodes))
    rules.push_back(composite_rule(a, 1, a.nodes));
  struct Node
  {
    std::array<double, 2> z;
    double w;
    double k;
  };
  std::vector<Node> nodes;
  {
    int dummy = 0;
    tensor_sum(rules, dummy, [&](std::span<const double> z, double w, int&) {
      Node nd{ {}, w, K(z) };
      for (size_t j = 0; j < z.size(); ++j)
        nd.z[j] = z[j];
      if (nd.k != 0.0)
        nodes.push_back(nd);
    });
  }

  constexpr long chunk = 4096;
  const size_t chunks = static_cast<size_t>((n + chunk - 1) / chunk);
  std::vector<double> partial(chunks, 0.0);
  parallel_for(chunks, [&](size_t c) {
    const long first = static_cast<long>(c) * chunk + 1;
    const long last = std::min(n, first + chunk - 1);
    double sum = 0.0, comp = 0.0;
    for (long i = first; i <= last; ++i) {
      const double hi = sched(static_cast<double>(i));
      const double hid = std::pow(hi, d);
      const double rho = hnd / hid;
      double A = 0.0;
      for (const auto& nd : nodes)
        A += nd.w * term(hi, rho, std::span<const double>(nd.z.data(), static_cast<size_t>(d)), nd.k);
      double y = std::log1p(hid * A) - comp;
      double s = sum + y;
      comp = (s - sum) - y;
      sum = s;
    }
    partial[c] = sum;
  });
  double total = 0.0;
  for (double p : partial)
    total += p;
  return total / (static_cast<double>(n) * hnd);
}

//! Closed forms for K = 1_D - 1_D' (d = q = 1, Nadaraya-Watson).
namespace example3 {

inline SignedIndicator
require(const CumulantContext& ctx)
{
  auto si = ctx.kernel().signed_indicator();
  if (!si || ctx.q() != 1 || ctx.d() != 1 || ctx.variant().is_semirec())
    throw ConfigError("closed form needs a signed indicator kernel with "
                      "d = q = 1 and the Nadaraya-Watson variant");
  return *si;
}

//! e^v lambda(D) M_x(u) + e^{-v} lambda(D') M_x(-u) - [lambda(D) + lambda(D')] g(x)
inline double
psi(const CumulantContext& ctx, double u, double v)
{
  auto si = require(ctx);
  const auto& model = ctx.model();
  Vec uu = make_vec({ u });
  return std::exp(v) * si.lambda_D * model.laplace(ctx.x(), uu) +
         std::exp(-v) * si.lambda_Dprime * model.laplace(ctx.x(), -uu) -
         (si.lambda_D + si.lambda_Dprime) * ctx.g_x();
}

//! argmin over v of Psi(u, .)
inline double
v0(const CumulantContext& ctx, double u)
{
  auto si = require(ctx);
  Vec uu = make_vec({ u });
  return 0.5 * (std::log(si.lambda_Dprime) +
                ctx.model().log_tilt(ctx.x(), -uu) -
                std::log(si.lambda_D) - ctx.model().log_tilt(ctx.x(), uu));
}

//! 2 sqrt(lambda(D) lambda(D')) sqrt(M_x(u) M_x(-u)) - [lambda(D) + lambda(D')] g(x)
inline double
psi_at_v0(const CumulantContext& ctx, double u)
{
  auto si = require(ctx);
  Vec uu = make_vec({ u });
  const auto& model = ctx.model();
  double half = 0.5 * (model.log_tilt(ctx.x(), uu) + model.log_tilt(ctx.x(), -uu));
  return 2.0 * std::sqrt(si.lambda_D * si.lambda_Dprime) * ctx.g_x() * std::exp(half) -
         (si.lambda_D + si.lambda_Dprime) * ctx.g_x();
}

//! I(s, 0) = sup_u [u s - Psi(u, v0(u))], a concave one-dimensional problem.
inline Extended
rate_at_zero_t(const CumulantContext& ctx, double s)
{
  auto si = require(ctx);
  const auto& model = ctx.model();
  const double c = 2.0 * std::sqrt(si.lambda_D * si.lambda_Dprime) * ctx.g_x();
  // u s - c exp(h(u)) + const, h(u) = (kappa(u) + kappa(-u)) / 2
  auto parts = [&](double u, double& h, double& dh, double& d2h) {
    auto p = model.noise_cumulant(make_vec({ u }));
    auto mneg = model.noise_cumulant(make_vec({ -u }));
    h = 0.5 * (p.value + mneg.value);
    dh = 0.5 * (p.grad(0) - mneg.grad(0));
    d2h = 0.5 * (p.hess(0, 0) + mneg.hess(0, 0));
  };
  auto obj = [&](double u) { return u * s - psi_at_v0(ctx, u); };
  double u = 0.0;
  for (int it = 0; it < 500; ++it) {
    double h, dh, d2h;
    parts(u, h, dh, d2h);
    double e = c * std::exp(h);
    double d1 = s - e * dh;
    double d2 = -e * (dh * dh + d2h);
    if (std::abs(d1) <= 1e-12 * std::max(1.0, std::abs(s)))
      return Extended::finite(obj(u));
    double step = -d1 / d2;
    if (!std::isfinite(step))
      break;
    step = std::clamp(step, -10.0, 10.0);
    double f0 = obj(u), alpha = 1.0;
    // near the optimum the objective is flat to rounding, so allow ties
    const double slack = 4e-16 * std::max(1.0, std::abs(f0));
    while (alpha > 1e-12 && !(obj(u + alpha * step) >= f0 - slack))
      alpha *= 0.5;
    if (alpha <= 1e-12)
      return Extended::finite(f0);
    u += alpha * step;
  }
  throw NumericError("closed-form I(s, 0) maximization did not converge", u);
}

} // namespace example3

//! Outcome of the Condition (C) check inf_s I(s, 0) = I(0, 0).
struct ConditionCReport
{
  enum class Status
  {
    pass,
    fail,
    inconclusive
  };
  Status status;
  std::string reason;
  Extended i00;
  std::vector<std::pair<Vec, Extended>> values; //!< (s, I(s, 0)) on the grid

  nlohmann::json to_json() const
  {
    static const char* names[] = { "pass", "fail", "inconclusive" };
    nlohmann::json grid = nlohmann::json::array();
    for (const auto& [s, val] : values)
      grid.push_back({ { "s", vec_to_json(s) }, { "I", extended_to_json(val) } });
    return { { "status", names[static_cast<int>(status)] },
             { "reason", reason },
             { "i00", extended_to_json(i00) },
             { "grid", grid } };
  }
};

inline ConditionCReport
check_condition_c(const CumulantContext& ctx, const std::vector<Vec>& grid)
{
  using S = ConditionCReport::Status;
  const Kernel& K = ctx.kernel();
  ConditionCReport rep{ S::inconclusive, "", Extended::infinity(), {} };

  if (K.nonnegative()) {
    rep.status = S::pass;
    rep.reason = "Example 1: nonnegative kernel, I(s, 0) = +inf for s != 0";
    if (K.lambda_splus().is_finite())
      rep.i00 = Extended::finite(ctx.g_x() * K.lambda_splus().value() /
                                 (1.0 - ctx.ad()));
    return rep;
  }

  const double tol = 1e-8;
  auto grid_ok = [&](const Extended& i00) {
    for (const auto& [s, val] : rep.values)
      if (i00.is_finite() && val.is_finite() &&
          val.value() < i00.value() - tol * std::max(1.0, i00.value()))
        return false;
    return true;
  };

  const bool closed_form = K.signed_indicator() && ctx.q() == 1 &&
                           ctx.d() == 1 && !ctx.variant().is_semirec();
  if (closed_form) {
    rep.i00 = example3::rate_at_zero_t(ctx, 0.0);
    for (const auto& s : grid)
      rep.values.emplace_back(s, example3::rate_at_zero_t(ctx, s(0)));
  } else {
    rep.i00 = conjugate(ctx, Vec::Zero(ctx.q()), 0.0).value();
    for (const auto& s : grid)
      rep.values.emplace_back(s, conjugate(ctx, s, 0.0).value());
  }
  const bool ok = grid_ok(rep.i00);

  if (ctx.model().symmetric_in_y(ctx.x())) {
    rep.status = ok ? S::pass : S::fail;
    rep.reason = "Example 2: f(x, .) symmetric in each coordinate of y";
  } else if (closed_form) {
    rep.status = ok ? S::pass : S::fail;
    rep.reason = "Example 3: signed indicator kernel, closed-form grid";
  } else {
    rep.status = ok ? S::inconclusive : S::fail;
    rep.reason = ok ? "grid heuristic: no violation found on the grid"
                    : "grid value below I(0, 0)";
  }
  return rep;
}

} // namespace devrate
