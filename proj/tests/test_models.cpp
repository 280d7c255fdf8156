#include <devrate/models.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace devrate;

namespace {

JointModel
make(const char* text)
{
  return JointModel(ModelSpec::from_json(nlohmann::json::parse(text)));
}

// log E exp(w eps) by composite Simpson on the noise density.
double
log_mgf_numeric(double (*density)(double), double lo, double hi, double w)
{
  const int n = 20000;
  const double h = (hi - lo) / n;
  double acc = 0.0;
  for (int i = 0; i <= n; ++i) {
    double e = lo + i * h;
    double c = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    acc += c * density(e) * std::exp(w * e);
  }
  return std::log(acc * h / 3.0);
}

double
uniform_density(double e)
{
  return std::abs(e) <= 1.0 ? 0.5 : 0.0;
}

double
mixture_density(double e)
{
  // 0.5 N(1, 0.25) + 0.5 N(-1, 0.25)
  auto phi = [](double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); };
  return 0.5 * (phi((e - 1.0) / 0.5) + phi((e + 1.0) / 0.5)) / 0.5;
}

} // namespace

TEST(Models, MarginalDensityIsStandardNormal)
{
  auto m = make(R"({"family": "gaussian_noise", "dx": 2, "dy": 1,
                    "regression": [{"kind": "constant"}]})");
  Vec t = make_vec({ 0.3, -1.1 });
  double expected = std::exp(-0.5 * t.squaredNorm()) / (2.0 * std::numbers::pi);
  EXPECT_NEAR(m.g(t), expected, 1e-15);
}

TEST(Models, RegressionTerms)
{
  auto m = make(R"({"family": "gaussian_noise", "dx": 1, "dy": 2,
                    "regression": [{"kind": "sin", "amplitude": 2, "frequency": 3, "intercept": 1},
                                   {"kind": "linear", "slope": [0.5], "intercept": -1}],
                    "noise": {"cov": [[1,0],[0,1]]}})");
  Vec r = m.r(make_vec({ 0.2 }));
  EXPECT_NEAR(r(0), 1.0 + 2.0 * std::sin(0.6), 1e-15);
  EXPECT_NEAR(r(1), -1.0 + 0.1, 1e-15);
  auto quad = make(R"({"family": "gaussian_noise", "regression": [{"kind": "quadratic", "amplitude": 4}]})");
  EXPECT_NEAR(quad.r(make_vec({ 0.2 }))(0), 4.0 * 0.04, 1e-15);
  EXPECT_NEAR(m.m(make_vec({ 0.2 }))(1), r(1) * m.g(make_vec({ 0.2 })), 1e-15);
  EXPECT_THROW(make(R"({"family": "gaussian_noise", "dy": 3,
                        "regression": [{"kind": "constant"}, {"kind": "constant"}, {"kind": "constant"}]})"),
               ConfigError);
}

TEST(Models, GaussianCumulantIsQuadratic)
{
  auto m = make(R"({"family": "gaussian_noise", "dx": 1, "dy": 2,
                    "regression": [{"kind": "constant"}, {"kind": "constant"}],
                    "noise": {"cov": [[2.0, 0.5], [0.5, 1.0]]}})");
  Vec w = make_vec({ 0.7, -1.3 });
  Mat S(2, 2);
  S << 2.0, 0.5, 0.5, 1.0;
  auto nc = m.noise_cumulant(w);
  EXPECT_NEAR(nc.value, 0.5 * w.dot(S * w), 1e-14);
  EXPECT_TRUE(nc.grad.isApprox(S * w, 1e-14));
  EXPECT_TRUE(nc.hess.isApprox(S, 1e-14));
}

TEST(Models, BoundedAndSymmetricCumulantsAgainstQuadrature)
{
  auto b = make(R"({"family": "bounded_noise", "regression": [{"kind": "constant"}],
                    "noise": {"half_width": [1.0]}})");
  auto s = make(R"({"family": "symmetric_y", "regression": [{"kind": "constant"}],
                    "noise": {"shift": [1.0], "scale": [0.5]}})");
  for (double w : { -3.0, -0.5, -0.004, 0.0, 0.004, 0.8, 2.5 }) {
    EXPECT_NEAR(b.noise_cumulant(make_vec({ w })).value,
                log_mgf_numeric(uniform_density, -1.0, 1.0, w), 1e-10)
      << w;
    EXPECT_NEAR(s.noise_cumulant(make_vec({ w })).value,
                log_mgf_numeric(mixture_density, -6.0, 6.0, w), 1e-9)
      << w;
  }
}

TEST(Models, CumulantDerivativesMatchFiniteDifferences)
{
  for (const char* text :
       { R"({"family": "bounded_noise", "regression": [{"kind": "constant"}], "noise": {"half_width": [1.5]}})",
         R"({"family": "symmetric_y", "regression": [{"kind": "constant"}]})" }) {
    auto m = make(text);
    for (double w : { -2.0, -0.3, 0.005, 0.9, 4.0 }) {
      const double h = 1e-5;
      auto f = [&](double x) { return m.noise_cumulant(make_vec({ x })).value; };
      auto g = [&](double x) { return m.noise_cumulant(make_vec({ x })).grad(0); };
      auto nc = m.noise_cumulant(make_vec({ w }));
      EXPECT_NEAR(nc.grad(0), (f(w + h) - f(w - h)) / (2 * h), 1e-8);
      EXPECT_NEAR(nc.hess(0, 0), (g(w + h) - g(w - h)) / (2 * h), 1e-8);
    }
  }
}

TEST(Models, LaplaceAtZeroIsDensity)
{
  auto m = make(R"({"family": "bounded_noise", "regression": [{"kind": "sin"}]})");
  Vec t = make_vec({ -0.4 });
  EXPECT_NEAR(m.laplace(t, make_vec({ 0.0 })), m.g(t), 1e-16);
  // laplace_grad at zero is m(t)
  EXPECT_NEAR(m.laplace_grad(t, make_vec({ 0.0 }))(0), m.m(t)(0), 1e-15);
}

TEST(Models, ConditionalMomentsOfSamples)
{
  auto m = make(R"({"family": "symmetric_y", "regression": [{"kind": "sin"}],
                    "noise": {"shift": [1.0], "scale": [0.5]}})");
  auto data = m.sample(200000, 17);
  double s1 = 0.0, s2 = 0.0;
  for (size_t i = 0; i < data.size(); ++i) {
    Vec x = make_vec({ data.x(i)[0] });
    double e = data.y(i)[0] - m.r(x)(0);
    s1 += e;
    s2 += e * e;
  }
  const double n = static_cast<double>(data.size());
  const double var = m.sigma(make_vec({ 0.0 }))(0, 0);
  EXPECT_NEAR(var, 1.25, 1e-15);
  EXPECT_NEAR(s1 / n, 0.0, 4.0 * std::sqrt(var / n));
  EXPECT_NEAR(s2 / n, var, 0.02);
}

TEST(Models, SamplingIsDeterministicInSeed)
{
  auto m = make(R"({"family": "gaussian_noise", "regression": [{"kind": "sin"}]})");
  auto a = m.sample(50, 99);
  auto b = m.sample(50, 99);
  auto c = m.sample(50, 100);
  EXPECT_EQ(a.y(49)[0], b.y(49)[0]);
  EXPECT_NE(a.y(49)[0], c.y(49)[0]);
}

TEST(Models, SymmetryDetection)
{
  auto sym = make(R"({"family": "symmetric_y", "regression": [{"kind": "constant"}]})");
  EXPECT_TRUE(sym.symmetric_in_y(make_vec({ 0.1 })));
  auto shifted = make(R"({"family": "symmetric_y", "regression": [{"kind": "constant", "intercept": 1}]})");
  EXPECT_FALSE(shifted.symmetric_in_y(make_vec({ 0.1 })));
  auto corr = make(R"({"family": "gaussian_noise", "dy": 2,
                       "regression": [{"kind": "constant"}, {"kind": "constant"}],
                       "noise": {"cov": [[1.0, 0.3], [0.3, 1.0]]}})");
  EXPECT_FALSE(corr.symmetric_in_y(make_vec({ 0.0 })));
}

TEST(Models, SpecValidationAndRoundTrip)
{
  auto spec = ModelSpec::from_json(nlohmann::json::parse(
    R"({"family": "gaussian_noise", "dx": 2, "dy": 1,
        "regression": [{"kind": "linear", "slope": [1.0, -2.0]}]})"));
  EXPECT_EQ(ModelSpec::from_json(spec.to_json()).to_json(), spec.to_json());
  EXPECT_THROW(ModelSpec::from_json(nlohmann::json::parse(R"({"family": "cauchy"})")),
               ConfigError);
  EXPECT_THROW(ModelSpec::from_json(nlohmann::json::parse(
                 R"({"family": "gaussian_noise", "noise": {"cov": [[-1.0]]}})")),
               ConfigError);
  EXPECT_THROW(ModelSpec::from_json(nlohmann::json::parse(
                 R"({"family": "gaussian_noise", "dx": 2,
                     "regression": [{"kind": "linear", "slope": [1.0]}]})")),
               ConfigError);
}
