#pragma once

#include "core.hpp"
#include "dataset.hpp"
#include "io.hpp"
#include "random.hpp"

#include <json.hpp>

#include <cmath>
#include <numbers>
#include <string>
#include <vector>

namespace devrate {

enum class Family
{
  gaussian_noise,
  bounded_noise,
  symmetric_y
};

inline std::string
to_string(Family f)
{
  switch (f) {
    case Family::gaussian_noise:
      return "gaussian_noise";
    case Family::bounded_noise:
      return "bounded_noise";
    case Family::symmetric_y:
      return "symmetric_y";
  }
  return "unknown";
}

//! One coordinate of the regression function r : R^d -> R^q.
struct RegressionTerm
{
  enum class Kind
  {
    constant,  //!< c
    linear,    //!< c + <slope, t>
    sine,      //!< c + A sin(w t_1)
    quadratic  //!< c + A |t|^2
  };

  Kind kind = Kind::constant;
  double intercept = 0.0;
  double amplitude = 1.0;
  double frequency = 1.0;
  std::vector<double> slope;

  double operator()(const Vec& t) const
  {
    switch (kind) {
      case Kind::constant:
        return intercept;
      case Kind::linear: {
        double s = intercept;
        for (Eigen::Index j = 0; j < t.size(); ++j)
          s += slope[static_cast<size_t>(j)] * t(j);
        return s;
      }
      case Kind::sine:
        return intercept + amplitude * std::sin(frequency * t(0));
      case Kind::quadratic:
        return intercept + amplitude * t.squaredNorm();
    }
    return 0.0;
  }
};

//! Parametric description of a joint law Y = r(X) + eps with X ~ N(0, I_d)
//! and eps independent of X.
struct ModelSpec
{
  Family family = Family::gaussian_noise;
  int dx = 1;
  int dy = 1;
  std::vector<RegressionTerm> regression; //!< one per response coordinate
  std::vector<std::vector<double>> cov;   //!< gaussian_noise: Cov(eps)
  std::vector<double> half_width;         //!< bounded_noise: eps_j ~ U[-b_j, b_j]
  std::vector<double> shift;              //!< symmetric_y: eps_j = +-mu_j + s_j Z
  std::vector<double> scale;

  void validate() const;
  nlohmann::json to_json() const;
  static ModelSpec from_json(const nlohmann::json& j);
};

inline void
ModelSpec::validate() const
{
  if (dx < 1 || dx > 2 || dy < 1 || dy > 2)
    throw ConfigError("model dimensions must satisfy 1 <= dx, dy <= 2");
  if (static_cast<int>(regression.size()) != dy)
    throw ConfigError("model needs one regression term per response");
  for (const auto& t : regression)
    if (t.kind == RegressionTerm::Kind::linear &&
        static_cast<int>(t.slope.size()) != dx)
      throw ConfigError("linear regression slope must have dx entries");
  const auto n = static_cast<size_t>(dy);
  switch (family) {
    case Family::gaussian_noise: {
      if (cov.size() != n)
        throw ConfigError("gaussian_noise needs a dy x dy covariance");
      Mat c(dy, dy);
      for (size_t i = 0; i < n; ++i) {
        if (cov[i].size() != n)
          throw ConfigError("gaussian_noise needs a dy x dy covariance");
        for (size_t k = 0; k < n; ++k)
          c(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) =
            cov[i][k];
      }
      if (!c.isApprox(c.transpose()))
        throw ConfigError("noise covariance must be symmetric");
      Eigen::LLT<Mat> llt(c);
      if (llt.info() != Eigen::Success)
        throw ConfigError("noise covariance must be positive definite");
      break;
    }
    case Family::bounded_noise:
      if (half_width.size() != n)
        throw ConfigError("bounded_noise needs dy half widths");
      for (double b : half_width)
        if (!(b > 0.0))
          throw ConfigError("bounded_noise half widths must be positive");
      break;
    case Family::symmetric_y:
      if (shift.size() != n || scale.size() != n)
        throw ConfigError("symmetric_y needs dy shifts and scales");
      for (size_t i = 0; i < n; ++i)
        if (!(shift[i] >= 0.0) || !(scale[i] > 0.0))
          throw ConfigError("symmetric_y needs shift >= 0 and scale > 0");
      break;
  }
}

inline nlohmann::json
ModelSpec::to_json() const
{
  nlohmann::json j;
  j["family"] = to_string(family);
  j["dx"] = dx;
  j["dy"] = dy;
  nlohmann::json reg = nlohmann::json::array();
  for (const auto& t : regression) {
    nlohmann::json r;
    switch (t.kind) {
      case RegressionTerm::Kind::constant:
        r["kind"] = "constant";
        break;
      case RegressionTerm::Kind::linear:
        r["kind"] = "linear";
        r["slope"] = t.slope;
        break;
      case RegressionTerm::Kind::sine:
        r["kind"] = "sin";
        r["amplitude"] = t.amplitude;
        r["frequency"] = t.frequency;
        break;
      case RegressionTerm::Kind::quadratic:
        r["kind"] = "quadratic";
        r["amplitude"] = t.amplitude;
        break;
    }
    r["intercept"] = t.intercept;
    reg.push_back(r);
  }
  j["regression"] = reg;
  switch (family) {
    case Family::gaussian_noise:
      j["noise"] = { { "cov", cov } };
      break;
    case Family::bounded_noise:
      j["noise"] = { { "half_width", half_width } };
      break;
    case Family::symmetric_y:
      j["noise"] = { { "shift", shift }, { "scale", scale } };
      break;
  }
  return j;
}

inline ModelSpec
ModelSpec::from_json(const nlohmann::json& j)
{
  if (!j.is_object())
    throw ConfigError("model spec must be a JSON object");
  ModelSpec s;
  const auto fam = j.at("family").get<std::string>();
  if (fam == "gaussian_noise")
    s.family = Family::gaussian_noise;
  else if (fam == "bounded_noise")
    s.family = Family::bounded_noise;
  else if (fam == "symmetric_y")
    s.family = Family::symmetric_y;
  else
    throw ConfigError("unknown model family: " + fam);
  s.dx = j.value("dx", 1);
  s.dy = j.value("dy", 1);
  if (j.contains("regression")) {
    for (const auto& r : j["regression"]) {
      RegressionTerm t;
      const auto kind = r.value("kind", std::string("constant"));
      if (kind == "constant")
        t.kind = RegressionTerm::Kind::constant;
      else if (kind == "linear")
        t.kind = RegressionTerm::Kind::linear;
      else if (kind == "sin")
        t.kind = RegressionTerm::Kind::sine;
      else if (kind == "quadratic")
        t.kind = RegressionTerm::Kind::quadratic;
      else
        throw ConfigError("unknown regression kind: " + kind);
      t.intercept = r.value("intercept", 0.0);
      t.amplitude = r.value("amplitude", 1.0);
      t.frequency = r.value("frequency", 1.0);
      if (r.contains("slope"))
        t.slope = r["slope"].get<std::vector<double>>();
      s.regression.push_back(t);
    }
  } else {
    s.regression.assign(static_cast<size_t>(s.dy), RegressionTerm{});
  }
  const auto noise = j.value("noise", nlohmann::json::object());
  switch (s.family) {
    case Family::gaussian_noise:
      if (noise.contains("cov")) {
        s.cov = noise["cov"].get<std::vector<std::vector<double>>>();
      } else {
        s.cov.assign(static_cast<size_t>(s.dy),
                     std::vector<double>(static_cast<size_t>(s.dy), 0.0));
        for (size_t i = 0; i < s.cov.size(); ++i)
          s.cov[i][i] = 1.0;
      }
      break;
    case Family::bounded_noise:
      s.half_width = noise.value(
        "half_width", std::vector<double>(static_cast<size_t>(s.dy), 1.0));
      break;
    case Family::symmetric_y:
      s.shift = noise.value("shift",
                            std::vector<double>(static_cast<size_t>(s.dy), 1.0));
      s.scale = noise.value("scale",
                            std::vector<double>(static_cast<size_t>(s.dy), 0.5));
      break;
  }
  s.validate();
  return s;
}

//! Log-Laplace transform of the noise and its first two derivatives in w.
struct NoiseCumulant
{
  double value;
  Vec grad;
  Mat hess;
};

namespace detail {

//! log(sinh(x) / x) and its first two derivatives.
inline void
log_sinhc(double x, double& f, double& df, double& d2f)
{
  const double ax = std::abs(x);
  if (ax < 1e-2) {
    double x2 = x * x;
    f = x2 / 6.0 - x2 * x2 / 180.0 + x2 * x2 * x2 / 2835.0;
    df = x / 3.0 - x * x2 / 45.0 + 2.0 * x * x2 * x2 / 945.0;
    d2f = 1.0 / 3.0 - x2 / 15.0 + 2.0 * x2 * x2 / 189.0;
    return;
  }
  f = ax + std::log1p(-std::exp(-2.0 * ax)) - std::numbers::ln2 - std::log(ax);
  double coth = 1.0 / std::tanh(x);
  df = coth - 1.0 / x;
  double sh = std::sinh(x);
  d2f = 1.0 / (x * x) - (std::isinf(sh) ? 0.0 : 1.0 / (sh * sh));
}

//! log(cosh(x)) and its first two derivatives.
inline void
log_cosh(double x, double& f, double& df, double& d2f)
{
  const double ax = std::abs(x);
  f = ax + std::log1p(std::exp(-2.0 * ax)) - std::numbers::ln2;
  double th = std::tanh(x);
  df = th;
  d2f = 1.0 - th * th;
}

} // namespace detail

//! Analytic joint law of (X, Y) exposing everything the rate-function
//! quadrature and the Monte Carlo harness need.
class JointModel
{
public:
  explicit JointModel(ModelSpec spec);

  const ModelSpec& spec() const { return spec_; }
  int dx() const { return spec_.dx; }
  int dy() const { return spec_.dy; }

  //! Marginal density of X (standard normal).
  double g(const Vec& t) const
  {
    return std::exp(-0.5 * t.squaredNorm() - 0.5 * dx() * std::log(2.0 * std::numbers::pi));
  }
  Vec r(const Vec& t) const
  {
    Vec out(dy());
    for (int j = 0; j < dy(); ++j)
      out(j) = spec_.regression[static_cast<size_t>(j)](t);
    return out;
  }
  Vec m(const Vec& t) const { return r(t) * g(t); }
  //! V(Y | X = t); constant in t for these families.
  Mat sigma(const Vec& /*t*/) const { return sigma_; }

  //! True when f(t, .) is symmetric in each coordinate of y.
  bool symmetric_in_y(const Vec& t) const;

  NoiseCumulant noise_cumulant(const Vec& w) const;

  //! log M_t(w) - log g(t) = <w, r(t)> + kappa(w).
  double log_tilt(const Vec& t, const Vec& w) const
  {
    return w.dot(r(t)) + noise_cumulant(w).value;
  }
  //! M_t(w) = ∫ e^{<w,y>} f(t, y) dy.
  double laplace(const Vec& t, const Vec& w) const
  {
    return g(t) * std::exp(log_tilt(t, w));
  }
  Vec laplace_grad(const Vec& t, const Vec& w) const
  {
    auto nc = noise_cumulant(w);
    Vec rt = r(t);
    return g(t) * std::exp(w.dot(rt) + nc.value) * (rt + nc.grad);
  }

  void draw_x(Stream& rng, Vec& x) const
  {
    x.resize(dx());
    for (int j = 0; j < dx(); ++j)
      x(j) = rng.normal();
  }
  void draw_y(Stream& rng, const Vec& x, Vec& y) const;

  //! n i.i.d. draws; deterministic in seed.
  Dataset sample(size_t n, std::uint64_t seed) const
  {
    if (n < 1)
      throw InputError("sample size must be at least 1");
    Stream rng(seed);
    Dataset data(dx(), dy());
    Vec x, y;
    for (size_t i = 0; i < n; ++i) {
      draw_x(rng, x);
      draw_y(rng, x, y);
      data.push_back(x, y);
    }
    return data;
  }

private:
  ModelSpec spec_;
  Mat sigma_;
  Mat chol_;
};

inline JointModel::JointModel(ModelSpec spec)
  : spec_(std::move(spec))
{
  spec_.validate();
  const int q = spec_.dy;
  sigma_ = Mat::Zero(q, q);
  for (int i = 0; i < q; ++i) {
    const auto si = static_cast<size_t>(i);
    switch (spec_.family) {
      case Family::gaussian_noise:
        for (int k = 0; k < q; ++k)
          sigma_(i, k) = spec_.cov[si][static_cast<size_t>(k)];
        break;
      case Family::bounded_noise:
        sigma_(i, i) = spec_.half_width[si] * spec_.half_width[si] / 3.0;
        break;
      case Family::symmetric_y:
        sigma_(i, i) =
          spec_.shift[si] * spec_.shift[si] + spec_.scale[si] * spec_.scale[si];
        break;
    }
  }
  Eigen::LLT<Mat> llt(sigma_);
  chol_ = llt.matrixL();
}

inline bool
JointModel::symmetric_in_y(const Vec& t) const
{
  if (r(t).cwiseAbs().maxCoeff() != 0.0)
    return false;
  if (spec_.family == Family::gaussian_noise)
    return sigma_.isDiagonal();
  return true;
}

inline NoiseCumulant
JointModel::noise_cumulant(const Vec& w) const
{
  const int q = dy();
  NoiseCumulant out{ 0.0, Vec::Zero(q), Mat::Zero(q, q) };
  switch (spec_.family) {
    case Family::gaussian_noise:
      out.grad = sigma_ * w;
      out.value = 0.5 * w.dot(out.grad);
      out.hess = sigma_;
      break;
    case Family::bounded_noise:
      for (int j = 0; j < q; ++j) {
        double b = spec_.half_width[static_cast<size_t>(j)];
        double f, df, d2f;
        detail::log_sinhc(b * w(j), f, df, d2f);
        out.value += f;
        out.grad(j) = b * df;
        out.hess(j, j) = b * b * d2f;
      }
      break;
    case Family::symmetric_y:
      for (int j = 0; j < q; ++j) {
        double mu = spec_.shift[static_cast<size_t>(j)];
        double s = spec_.scale[static_cast<size_t>(j)];
        double f, df, d2f;
        detail::log_cosh(mu * w(j), f, df, d2f);
        out.value += f + 0.5 * s * s * w(j) * w(j);
        out.grad(j) = mu * df + s * s * w(j);
        out.hess(j, j) = mu * mu * d2f + s * s;
      }
      break;
  }
  return out;
}

inline void
JointModel::draw_y(Stream& rng, const Vec& x, Vec& y) const
{
  const int q = dy();
  y = r(x);
  switch (spec_.family) {
    case Family::gaussian_noise: {
      Vec z(q);
      for (int j = 0; j < q; ++j)
        z(j) = rng.normal();
      y += chol_ * z;
      break;
    }
    case Family::bounded_noise:
      for (int j = 0; j < q; ++j) {
        double b = spec_.half_width[static_cast<size_t>(j)];
        y(j) += rng.uniform(-b, b);
      }
      break;
    case Family::symmetric_y:
      for (int j = 0; j < q; ++j) {
        double mu = spec_.shift[static_cast<size_t>(j)];
        double s = spec_.scale[static_cast<size_t>(j)];
        y(j) += (rng.coin() ? mu : -mu) + s * rng.normal();
      }
      break;
  }
}

inline JointModel
build_model(const ModelSpec& spec)
{
  return JointModel(spec);
}

} // namespace devrate
