#pragma once

#include "core.hpp"
#include "io.hpp"
#include "kernels.hpp"
#include "models.hpp"
#include "parallel.hpp"
#include "random.hpp"
#include "ratefn.hpp"
#include "schedules.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <numbers>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace devrate {

enum class Target
{
  ldp_curve,
  mdp_variance,
  concentration_ratio,
  linearized_error
};

inline std::string
to_string(Target t)
{
  switch (t) {
    case Target::ldp_curve:
      return "ldp_curve";
    case Target::mdp_variance:
      return "mdp_variance";
    case Target::concentration_ratio:
      return "concentration_ratio";
    case Target::linearized_error:
      return "linearized_error";
  }
  return "unknown";
}

//! One Monte Carlo experiment, fully serializable.
struct ExperimentConfig
{
  ModelSpec model;
  Kernel kernel = Kernel::builtin(KernelName::uniform, 1);
  BandwidthSchedule schedule{ 1.0, 0.2, 1 };
  std::vector<Variant> variants{ Variant::nw() };
  Vec x = make_vec({ 0.0 });
  std::vector<long> ns;
  long reps = 1000;
  std::uint64_t seed = 1;
  Target target = Target::ldp_curve;
  std::vector<double> deltas;        //!< deviation thresholds
  std::optional<double> speed_gamma; //!< v_n = n^gamma
  bool rate_bound = true;            //!< compute the rate-function level

  void validate() const
  {
    model.validate();
    if (!kernel.verified())
      throw ConfigError("experiment kernel must be verified");
    if (kernel.dim() != model.dx || x.size() != model.dx ||
        schedule.d() != model.dx)
      throw ConfigError("dimension mismatch between model, kernel, schedule and x");
    if (reps < 100)
      throw ConfigError("reps must be at least 100");
    if (ns.empty())
      throw ConfigError("ns must not be empty");
    for (size_t i = 0; i < ns.size(); ++i) {
      if (ns[i] < 1)
        throw ConfigError("sample sizes must be positive");
      if (i > 0 && ns[i] <= ns[i - 1])
        throw ConfigError("ns must be strictly increasing");
    }
    if (variants.empty())
      throw ConfigError("at least one variant is required");
    for (const auto& v : variants)
      if (v.is_semirec() && std::abs(v.a - schedule.a()) > 1e-15)
        throw ConfigError("semi-recursive exponent must equal the schedule's a");
    if (target == Target::ldp_curve || target == Target::concentration_ratio) {
      if (deltas.empty())
        throw ConfigError("deviation targets need at least one delta");
      for (double d : deltas)
        if (target == Target::ldp_curve ? !(d > 0.0) : !(d >= 0.0))
          throw ConfigError("delta must be positive");
    }
    if (target == Target::concentration_ratio) {
      bool nw = false, sr = false;
      for (const auto& v : variants)
        (v.is_semirec() ? sr : nw) = true;
      if (!nw || !sr)
        throw ConfigError("concentration_ratio needs both nw and semirec variants");
    }
    if ((target == Target::linearized_error) && !speed_gamma)
      throw ConfigError("linearized_error needs speed_gamma");
  }

  nlohmann::json to_json() const
  {
    nlohmann::json vs = nlohmann::json::array();
    for (const auto& v : variants)
      vs.push_back(v.to_json());
    nlohmann::json target_json = { { "kind", to_string(target) } };
    if (!deltas.empty())
      target_json["deltas"] = deltas;
    if (speed_gamma)
      target_json["speed_gamma"] = *speed_gamma;
    return { { "model", model.to_json() },
             { "kernel", kernel.to_json() },
             { "schedule", schedule.to_json() },
             { "variants", vs },
             { "x", vec_to_json(x) },
             { "ns", ns },
             { "reps", reps },
             { "seed", seed },
             { "target", target_json },
             { "rate_bound", rate_bound } };
  }

  static ExperimentConfig from_json(const nlohmann::json& j)
  {
    if (!j.is_object())
      throw ConfigError("experiment config must be a JSON object");
    ExperimentConfig c;
    c.model = ModelSpec::from_json(j.at("model"));
    Kernel k = Kernel::from_json(j.at("kernel"));
    if (!k.verified()) {
      if (!k.order())
        throw ConfigError("custom kernels need a declared order to be certified");
      k = certify(k, *k.order(), 1e-8);
    }
    c.kernel = k;
    c.schedule = BandwidthSchedule::from_json(j.at("schedule"));
    if (j.contains("variants")) {
      c.variants.clear();
      for (const auto& v : j["variants"]) {
        // a semi-recursive variant without an explicit a follows the schedule
        if (v.is_object() && v.value("kind", "") == "semirec" && !v.contains("a"))
          c.variants.push_back(Variant::semirec(c.schedule.a()));
        else if (v.is_string() && v.get<std::string>() == "semirec")
          c.variants.push_back(Variant::semirec(c.schedule.a()));
        else
          c.variants.push_back(Variant::from_json(v));
      }
    }
    c.x = vec_from_json(j.at("x"), "x");
    c.ns = j.at("ns").get<std::vector<long>>();
    c.reps = j.value("reps", c.reps);
    c.seed = j.value("seed", c.seed);
    const auto& t = j.at("target");
    const std::string kind = t.is_string() ? t.get<std::string>() : t.at("kind").get<std::string>();
    if (kind == "ldp_curve")
      c.target = Target::ldp_curve;
    else if (kind == "mdp_variance")
      c.target = Target::mdp_variance;
    else if (kind == "concentration_ratio")
      c.target = Target::concentration_ratio;
    else if (kind == "linearized_error")
      c.target = Target::linearized_error;
    else
      throw ConfigError("unknown target: " + kind);
    if (t.is_object()) {
      if (t.contains("delta"))
        c.deltas = { t["delta"].get<double>() };
      if (t.contains("deltas"))
        c.deltas = t["deltas"].get<std::vector<double>>();
      if (t.contains("speed_gamma"))
        c.speed_gamma = t["speed_gamma"].get<double>();
    }
    c.rate_bound = j.value("rate_bound", c.rate_bound);
    c.validate();
    return c;
  }
};

//! Estimate of one variant in one replication.
struct ReplicaEstimate
{
  Vec m;
  double g;
  Vec r; //!< m / g, or the zero vector when g == 0
  bool zero_density() const { return g == 0.0; }
};

//! Simulates `reps` independent samples of size n and evaluates every
//! variant on each of them (paired design). Replication k uses the stream
//! (seed, n_index, k), and Y is drawn only for observations some kernel
//! window reaches, so the cost is dominated by the X draws. Result is
//! indexed [replication][variant].
inline std::vector<std::vector<ReplicaEstimate>>
simulate_estimates(const JointModel& model,
                   const Kernel& kernel,
                   const BandwidthSchedule& sched,
                   const std::vector<Variant>& variants,
                   const Vec& x,
                   long n,
                   std::uint64_t n_index,
                   long reps,
                   std::uint64_t seed)
{
  if (n < 1 || reps < 1)
    throw InputError("n and reps must be positive");
  const int d = model.dx();
  const int q = model.dy();
  const double hn = sched(static_cast<double>(n));
  const double nw_scale = 1.0 / (static_cast<double>(n) * std::pow(hn, d));
  bool any_semirec = false;
  for (const auto& v : variants)
    any_semirec = any_semirec || v.is_semirec();
  // per-observation bandwidths of the semi-recursive estimator
  std::vector<double> hs, inv_hd;
  if (any_semirec) {
    hs.resize(static_cast<size_t>(n));
    inv_hd.resize(static_cast<size_t>(n));
    for (long i = 0; i < n; ++i) {
      hs[static_cast<size_t>(i)] = sched(static_cast<double>(i + 1));
      inv_hd[static_cast<size_t>(i)] = 1.0 / std::pow(hs[static_cast<size_t>(i)], d);
    }
  }
  const double reach = kernel.support_radius() *
                       (any_semirec ? std::max(hn, hs.front()) : hn);

  std::vector<std::vector<ReplicaEstimate>> out(static_cast<size_t>(reps));
  constexpr long chunk = 16;
  const size_t tasks = static_cast<size_t>((reps + chunk - 1) / chunk);
  parallel_for(tasks, [&](size_t task) {
    const long first = static_cast<long>(task) * chunk;
    const long last = std::min(reps, first + chunk);
    Vec xi(d), yi(q);
    std::array<double, kMaxDim> z{};
    std::vector<double> kv(variants.size());
    for (long rep = first; rep < last; ++rep) {
      Stream rng(seed, n_index, static_cast<std::uint64_t>(rep));
      std::vector<Vec> m(variants.size(), Vec::Zero(q));
      std::vector<double> g(variants.size(), 0.0);
      for (long i = 0; i < n; ++i) {
        model.draw_x(rng, xi);
        bool inside = true;
        for (int j = 0; j < d; ++j)
          inside = inside && std::abs(x(j) - xi(j)) <= reach;
        if (!inside)
          continue;
        bool hit = false;
        for (size_t v = 0; v < variants.size(); ++v) {
          const bool sr = variants[v].is_semirec();
          const double h = sr ? hs[static_cast<size_t>(i)] : hn;
          for (int j = 0; j < d; ++j)
            z[static_cast<size_t>(j)] = (x(j) - xi(j)) / h;
          double k = kernel(std::span<const double>(z.data(), static_cast<size_t>(d)));
          if (sr)
            k *= inv_hd[static_cast<size_t>(i)];
          kv[v] = k;
          hit = hit || k != 0.0;
        }
        if (!hit)
          continue;
        model.draw_y(rng, xi, yi);
        for (size_t v = 0; v < variants.size(); ++v) {
          if (kv[v] == 0.0)
            continue;
          m[v] += kv[v] * yi;
          g[v] += kv[v];
        }
      }
      auto& row = out[static_cast<size_t>(rep)];
      row.reserve(variants.size());
      for (size_t v = 0; v < variants.size(); ++v) {
        const double scale = variants[v].is_semirec() ? 1.0 / static_cast<double>(n) : nw_scale;
        ReplicaEstimate e{ m[v] * scale, g[v] * scale, Vec::Zero(q) };
        if (!e.zero_density())
          e.r = e.m / e.g;
        row.push_back(e);
      }
    }
  });
  return out;
}

//! Binomial estimate of an event probability.
struct ProbabilityEstimate
{
  long events;
  long trials;
  double p_hat;
  double se; //!< sqrt(p (1 - p) / trials)
};

inline ProbabilityEstimate
estimate_probability(long events, long trials)
{
  if (trials < 1 || events < 0 || events > trials)
    throw InputError("invalid event count");
  const double p = static_cast<double>(events) / static_cast<double>(trials);
  return { events, trials, p, std::sqrt(p * (1.0 - p) / static_cast<double>(trials)) };
}

//! One row of an empirical deviation curve.
struct DeviationRow
{
  long n;
  double h_n;
  double p_hat;
  double se;
  long events;
  //! -log(p_hat) / (n h_n^d); absent when no event was observed
  std::optional<double> norm_log;
};

struct DeviationCurve
{
  Variant variant;
  double delta;
  std::vector<DeviationRow> rows;
  //! inf of J over {|s - r(x)| >= delta}, from the boundary grid
  std::optional<Extended> rate_bound;
  //! n values at which norm_log decreased from the previous row
  std::vector<long> non_monotone;

  nlohmann::json to_json() const
  {
    nlohmann::json rs = nlohmann::json::array();
    for (const auto& r : rows)
      rs.push_back({ { "n", r.n },
                     { "h_n", r.h_n },
                     { "p_hat", r.p_hat },
                     { "se", r.se },
                     { "events", r.events },
                     { "norm_log", r.norm_log ? nlohmann::json(*r.norm_log) : nlohmann::json() } });
    return { { "variant", variant.to_json() },
             { "delta", delta },
             { "rows", rs },
             { "rate_bound", rate_bound ? extended_to_json(*rate_bound) : nlohmann::json() },
             { "non_monotone", non_monotone } };
  }
};

//! Writes the curve as CSV with columns n, h_n, p_hat, se, norm_log.
inline void
write_deviation_curve(std::ostream& os,
                      const DeviationCurve& curve,
                      const nlohmann::json& meta = nullptr)
{
  CsvWriter w(os);
  if (!meta.is_null())
    w.metadata(meta);
  w.header({ "n", "h_n", "p_hat", "se", "norm_log" });
  for (const auto& r : curve.rows)
    w.row({ std::to_string(r.n), format_double(r.h_n), format_double(r.p_hat),
            format_double(r.se), r.norm_log ? format_double(*r.norm_log) : "" });
}

namespace detail {

inline std::shared_ptr<const JointModel>
shared_model(const ModelSpec& spec)
{
  return std::make_shared<const JointModel>(spec);
}

//! Points s with |s - r| = delta: both signs for q = 1, a circle of 32
//! points for q = 2, and a 6 x 12 sphere grid for q = 3.
inline std::vector<Vec>
boundary_grid(const Vec& r, double delta)
{
  std::vector<Vec> out;
  const int q = static_cast<int>(r.size());
  if (q == 1) {
    out.push_back(r + make_vec({ delta }));
    out.push_back(r - make_vec({ delta }));
  } else if (q == 2) {
    for (int k = 0; k < 32; ++k) {
      double th = 2.0 * std::numbers::pi * k / 32.0;
      out.push_back(r + delta * make_vec({ std::cos(th), std::sin(th) }));
    }
  } else {
    out.push_back(r + delta * make_vec({ 0.0, 0.0, 1.0 }));
    out.push_back(r + delta * make_vec({ 0.0, 0.0, -1.0 }));
    for (int i = 1; i < 6; ++i)
      for (int k = 0; k < 12; ++k) {
        double th = std::numbers::pi * i / 6.0, ph = 2.0 * std::numbers::pi * k / 12.0;
        out.push_back(r + delta * make_vec({ std::sin(th) * std::cos(ph),
                                             std::sin(th) * std::sin(ph),
                                             std::cos(th) }));
      }
  }
  return out;
}

inline size_t
variant_index(const ExperimentConfig& cfg, bool semirec)
{
  for (size_t v = 0; v < cfg.variants.size(); ++v)
    if (cfg.variants[v].is_semirec() == semirec)
      return v;
  throw ConfigError(semirec ? "no semi-recursive variant configured"
                            : "no nw variant configured");
}

//! Median of a copy; deterministic.
inline double
quantile(std::vector<double> v, double p)
{
  if (v.empty())
    return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const double pos = p * static_cast<double>(v.size() - 1);
  const size_t lo = static_cast<size_t>(std::floor(pos));
  const size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

} // namespace detail

//! Lowest rate level on the closed deviation set {|s - r(x)| >= delta}.
//! The rate grows along rays leaving r(x), so the infimum sits on the
//! boundary sphere, which is sampled by a fixed grid.
inline Extended
deviation_rate_bound(const CumulantContext& ctx, double delta)
{
  Extended best = Extended::infinity();
  for (const auto& s : detail::boundary_grid(ctx.r_x(), delta))
    best = min(best, regression_rate(ctx, s).j);
  return best;
}

//! Empirical P[|r_n(x) - r(x)| >= delta] across ns, one curve per variant and
//! threshold.
inline std::vector<DeviationCurve>
run_ldp_curve(const ExperimentConfig& cfg)
{
  cfg.validate();
  if (cfg.target != Target::ldp_curve)
    throw ConfigError("run_ldp_curve needs target ldp_curve");
  const auto model = detail::shared_model(cfg.model);
  const Vec r = model->r(cfg.x);
  const int d = cfg.kernel.dim();

  std::vector<DeviationCurve> curves;
  for (const auto& v : cfg.variants)
    for (double delta : cfg.deltas)
      curves.push_back({ v, delta, {}, std::nullopt, {} });

  for (size_t ni = 0; ni < cfg.ns.size(); ++ni) {
    const long n = cfg.ns[ni];
    auto est = simulate_estimates(*model, cfg.kernel, cfg.schedule, cfg.variants,
                                  cfg.x, n, ni, cfg.reps, cfg.seed);
    const double hn = cfg.schedule(static_cast<double>(n));
    size_t c = 0;
    for (size_t v = 0; v < cfg.variants.size(); ++v)
      for (double delta : cfg.deltas) {
        long events = 0;
        for (const auto& row : est)
          if ((row[v].r - r).norm() >= delta)
            ++events;
        auto p = estimate_probability(events, cfg.reps);
        DeviationRow dr{ n, hn, p.p_hat, p.se, events, std::nullopt };
        if (p.p_hat > 0.0)
          dr.norm_log = -std::log(p.p_hat) / (static_cast<double>(n) * std::pow(hn, d));
        curves[c++].rows.push_back(dr);
      }
  }

  for (auto& curve : curves) {
    for (size_t i = 1; i < curve.rows.size(); ++i) {
      const auto& a = curve.rows[i - 1];
      const auto& b = curve.rows[i];
      if (a.norm_log && b.norm_log && *b.norm_log < *a.norm_log)
        curve.non_monotone.push_back(b.n);
    }
    const bool ctx_ok = !curve.variant.is_semirec() ||
                        (curve.variant.a > 0.0 && curve.variant.a * d < 1.0);
    if (cfg.rate_bound && ctx_ok) {
      CumulantContext ctx(model, cfg.kernel, cfg.x, curve.variant);
      curve.rate_bound = deviation_rate_bound(ctx, curve.delta);
    }
  }
  return curves;
}

//! Empirical covariance of sqrt(n h_n^d) (r_n(x) - r(x)) at the largest n
//! against the asymptotic prediction.
struct VarianceReport
{
  Variant variant;
  long n;
  long used; //!< replications with g_n(x) > 0
  Mat empirical;
  Mat predicted;
  Mat ratio; //!< entrywise empirical / predicted

  nlohmann::json to_json() const
  {
    auto mat = [](const Mat& m) {
      nlohmann::json a = nlohmann::json::array();
      for (Eigen::Index i = 0; i < m.rows(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j)
          row.push_back(m(i, j));
        a.push_back(row);
      }
      return a;
    };
    return { { "variant", variant.to_json() }, { "n", n },
             { "used", used },                 { "empirical", mat(empirical) },
             { "predicted", mat(predicted) },  { "ratio", mat(ratio) } };
  }
};

struct MdpVarianceResult
{
  std::vector<VarianceReport> variants;
  std::optional<SpeedReport> speed;
  //! trace ratio semirec / nw of the empirical covariances, when both ran
  std::optional<double> semirec_over_nw;

  nlohmann::json to_json() const
  {
    nlohmann::json vs = nlohmann::json::array();
    for (const auto& v : variants)
      vs.push_back(v.to_json());
    return { { "variants", vs },
             { "speed", speed ? speed->to_json() : nlohmann::json() },
             { "semirec_over_nw", semirec_over_nw ? nlohmann::json(*semirec_over_nw) : nlohmann::json() } };
  }
};

inline MdpVarianceResult
run_mdp_variance(const ExperimentConfig& cfg)
{
  cfg.validate();
  if (cfg.target != Target::mdp_variance)
    throw ConfigError("run_mdp_variance needs target mdp_variance");
  MdpVarianceResult res;
  if (cfg.speed_gamma) {
    res.speed = check_speed(cfg.schedule, SpeedSequence{ *cfg.speed_gamma },
                            cfg.kernel.order().value_or(2));
    if (!res.speed->pass)
      throw ConfigError("speed sequence violates the moderate-deviation conditions");
  }
  const auto model = detail::shared_model(cfg.model);
  const Vec r = model->r(cfg.x);
  const double g = model->g(cfg.x);
  if (!(g > 0.0))
    throw InputError("g(x) must be positive");
  const int q = model->dy();
  const int d = model->dx();
  const long n = cfg.ns.back();
  const double hn = cfg.schedule(static_cast<double>(n));
  const double root = std::sqrt(static_cast<double>(n) * std::pow(hn, d));
  auto est = simulate_estimates(*model, cfg.kernel, cfg.schedule, cfg.variants, cfg.x,
                                n, cfg.ns.size() - 1, cfg.reps, cfg.seed);

  for (size_t v = 0; v < cfg.variants.size(); ++v) {
    const auto& var = cfg.variants[v];
    Vec mean = Vec::Zero(q);
    long used = 0;
    for (const auto& row : est)
      if (!row[v].zero_density()) {
        mean += root * (row[v].r - r);
        ++used;
      }
    if (used < 2)
      throw InputError("insufficient data: fewer than 2 replications with g_n(x) > 0");
    mean /= static_cast<double>(used);
    Mat cov = Mat::Zero(q, q);
    for (const auto& row : est)
      if (!row[v].zero_density()) {
        Vec z = root * (row[v].r - r) - mean;
        cov += z * z.transpose();
      }
    cov /= static_cast<double>(used - 1);
    const double ad = var.is_semirec() ? var.a * d : 0.0;
    Mat pred = model->sigma(cfg.x) * (cfg.kernel.l2_norm_squared() / g / (1.0 + ad));
    Mat ratio = cov.cwiseQuotient(pred);
    res.variants.push_back({ var, n, used, cov, pred, ratio });
  }
  bool nw = false, sr = false;
  for (const auto& v : cfg.variants)
    (v.is_semirec() ? sr : nw) = true;
  if (nw && sr) {
    const auto& a = res.variants[detail::variant_index(cfg, false)];
    const auto& b = res.variants[detail::variant_index(cfg, true)];
    res.semirec_over_nw = b.empirical.trace() / a.empirical.trace();
  }
  return res;
}

//! B_n(x) = (m_n - m(x)) / g(x) - r(x) (g_n - g(x)) / g(x).
inline Vec
linearized_error(const Vec& m_n, double g_n, const Vec& m, double g, const Vec& r)
{
  return (m_n - m) / g - r * ((g_n - g) / g);
}

struct LinearizedRow
{
  long n;
  double v_n;
  long zero_density; //!< replications with g_n(x) = 0, excluded from the gap
  double gap_median; //!< of v_n |(r_n - r) - B_n|
  double gap_q90;
  Vec scaled_mean_b; //!< v_n mean(B_n)
};

struct LinearizedReport
{
  Variant variant;
  std::vector<LinearizedRow> rows;

  nlohmann::json to_json() const
  {
    nlohmann::json rs = nlohmann::json::array();
    for (const auto& r : rows)
      rs.push_back({ { "n", r.n },
                     { "v_n", r.v_n },
                     { "zero_density", r.zero_density },
                     { "gap_median", r.gap_median },
                     { "gap_q90", r.gap_q90 },
                     { "scaled_mean_b", vec_to_json(r.scaled_mean_b) } });
    return { { "variant", variant.to_json() }, { "rows", rs } };
  }
};

inline std::vector<LinearizedReport>
run_linearized_error(const ExperimentConfig& cfg)
{
  cfg.validate();
  if (cfg.target != Target::linearized_error)
    throw ConfigError("run_linearized_error needs target linearized_error");
  const auto speed = check_speed(cfg.schedule, SpeedSequence{ *cfg.speed_gamma },
                                 cfg.kernel.order().value_or(2));
  if (!speed.pass)
    throw ConfigError("speed sequence violates the moderate-deviation conditions");
  const auto model = detail::shared_model(cfg.model);
  const Vec r = model->r(cfg.x);
  const Vec m = model->m(cfg.x);
  const double g = model->g(cfg.x);
  if (!(g > 0.0))
    throw InputError("g(x) must be positive");

  std::vector<LinearizedReport> out;
  for (const auto& v : cfg.variants)
    out.push_back({ v, {} });
  for (size_t ni = 0; ni < cfg.ns.size(); ++ni) {
    const long n = cfg.ns[ni];
    const double vn = SpeedSequence{ *cfg.speed_gamma }(static_cast<double>(n));
    auto est = simulate_estimates(*model, cfg.kernel, cfg.schedule, cfg.variants,
                                  cfg.x, n, ni, cfg.reps, cfg.seed);
    for (size_t v = 0; v < cfg.variants.size(); ++v) {
      std::vector<double> gaps;
      gaps.reserve(est.size());
      Vec sum_b = Vec::Zero(r.size());
      long zero = 0;
      for (const auto& row : est) {
        const auto& e = row[v];
        Vec b = linearized_error(e.m, e.g, m, g, r);
        sum_b += b;
        if (e.zero_density()) {
          ++zero;
          continue;
        }
        gaps.push_back(vn * ((e.r - r) - b).norm());
      }
      out[v].rows.push_back({ n, vn, zero, detail::quantile(gaps, 0.5),
                              detail::quantile(gaps, 0.9),
                              vn * sum_b / static_cast<double>(est.size()) });
    }
  }
  return out;
}

//! Paired comparison of the deviation probabilities of both estimators.
struct ConcentrationRow
{
  long n;
  double delta;
  double p_nw;
  double p_semirec;
  double diff;    //!< p_semirec - p_nw
  double diff_se; //!< standard error of the paired difference
  //! "semirec_less", "nw_less" or "indeterminate" at the 95% level
  std::string verdict;
};

struct ConcentrationReport
{
  std::vector<ConcentrationRow> rows;

  nlohmann::json to_json() const
  {
    nlohmann::json rs = nlohmann::json::array();
    for (const auto& r : rows)
      rs.push_back({ { "n", r.n },           { "delta", r.delta },
                     { "p_nw", r.p_nw },     { "p_semirec", r.p_semirec },
                     { "diff", r.diff },     { "diff_se", r.diff_se },
                     { "verdict", r.verdict } });
    return { { "rows", rs } };
  }
};

inline ConcentrationReport
run_concentration_ratio(const ExperimentConfig& cfg)
{
  cfg.validate();
  if (cfg.target != Target::concentration_ratio)
    throw ConfigError("run_concentration_ratio needs target concentration_ratio");
  const auto model = detail::shared_model(cfg.model);
  const Vec r = model->r(cfg.x);
  const size_t inw = detail::variant_index(cfg, false);
  const size_t isr = detail::variant_index(cfg, true);
  ConcentrationReport rep;
  for (size_t ni = 0; ni < cfg.ns.size(); ++ni) {
    const long n = cfg.ns[ni];
    auto est = simulate_estimates(*model, cfg.kernel, cfg.schedule, cfg.variants,
                                  cfg.x, n, ni, cfg.reps, cfg.seed);
    for (double delta : cfg.deltas) {
      long a = 0, b = 0;
      double sum_d = 0.0, sum_d2 = 0.0;
      for (const auto& row : est) {
        const int ea = (row[inw].r - r).norm() >= delta ? 1 : 0;
        const int eb = (row[isr].r - r).norm() >= delta ? 1 : 0;
        a += ea;
        b += eb;
        const double dd = eb - ea;
        sum_d += dd;
        sum_d2 += dd * dd;
      }
      const double N = static_cast<double>(cfg.reps);
      const double mean = sum_d / N;
      const double var = std::max(0.0, (sum_d2 - N * mean * mean) / (N - 1.0));
      const double se = std::sqrt(var / N);
      std::string verdict = "indeterminate";
      if (mean + 1.96 * se < 0.0)
        verdict = "semirec_less";
      else if (mean - 1.96 * se > 0.0)
        verdict = "nw_less";
      rep.rows.push_back({ n, delta, a / N, b / N, mean, se, verdict });
    }
  }
  return rep;
}

} // namespace devrate
