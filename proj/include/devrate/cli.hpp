#pragma once

#include "core.hpp"
#include "devlab.hpp"
#include "estimators.hpp"
#include "io.hpp"
#include "kernels.hpp"
#include "ratefn.hpp"
#include "schedules.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

namespace devrate::cli {

//! A file the command wants to write, held in memory until the whole run
//! succeeded so that failures never leave partial output behind.
struct Artifact
{
  std::string name;
  std::string content;
};

struct Options
{
  std::string command;
  std::string config_path;
  std::string output_dir = ".";
  std::optional<std::uint64_t> seed;
  int verbosity = 0;
};

namespace detail {

inline void
log_line(std::ostream& err, const std::string& level, const std::string& msg,
         nlohmann::json extra = nlohmann::json::object())
{
  extra["level"] = level;
  extra["message"] = msg;
  err << extra.dump() << '\n';
}

inline void
allow_keys(const nlohmann::json& j, std::set<std::string> allowed)
{
  if (!j.is_object())
    throw ConfigError("config must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (!allowed.count(key))
      throw ConfigError("unknown config key: " + key);
}

inline std::set<std::string>
context_keys(std::set<std::string> extra)
{
  extra.insert({ "model", "kernel", "x", "variant", "quad", "seed" });
  return extra;
}

//! Metadata block shared by every artifact: the resolved config and seed.
inline nlohmann::json
meta(const Options& opt, const nlohmann::json& resolved, std::optional<std::uint64_t> seed)
{
  return { { "command", opt.command },
           { "config", resolved },
           { "seed", seed ? nlohmann::json(*seed) : nlohmann::json() } };
}

inline std::string
json_artifact(const nlohmann::json& metadata, const nlohmann::json& result)
{
  nlohmann::json doc = metadata;
  doc["result"] = result;
  return doc.dump(2) + "\n";
}

//! Evenly spaced points of a slice {center + tau dir : tau in [from, to]}.
struct Slice
{
  Vec direction;
  double from = -1.0;
  double to = 1.0;
  int points = 21;

  static Slice from_json(const nlohmann::json& j, int q)
  {
    Slice s;
    s.direction = Vec::Zero(q);
    s.direction(0) = 1.0;
    if (j.is_null())
      return s;
    if (j.contains("direction"))
      s.direction = vec_from_json(j["direction"], "slice.direction");
    s.from = j.value("from", s.from);
    s.to = j.value("to", s.to);
    s.points = j.value("points", s.points);
    if (s.direction.size() != q || s.direction.norm() == 0.0)
      throw ConfigError("slice.direction must be a nonzero vector of dimension q");
    if (s.points < 2 || !(s.to > s.from))
      throw ConfigError("slice needs points >= 2 and to > from");
    s.direction.normalize();
    return s;
  }

  nlohmann::json to_json() const
  {
    return { { "direction", vec_to_json(direction) },
             { "from", from }, { "to", to }, { "points", points } };
  }

  double tau(int k) const { return from + (to - from) * k / (points - 1); }
};

inline std::vector<std::string>
vec_cells(const Vec& v)
{
  std::vector<std::string> out;
  for (Eigen::Index i = 0; i < v.size(); ++i)
    out.push_back(format_double(v(i)));
  return out;
}

inline std::vector<std::string>
vec_header(const std::string& prefix, int q)
{
  std::vector<std::string> out;
  for (int i = 0; i < q; ++i)
    out.push_back(prefix + std::to_string(i + 1));
  return out;
}

} // namespace detail

//! J along a slice through r(x).
inline std::vector<Artifact>
cmd_rate(const Options& opt, const nlohmann::json& j)
{
  detail::allow_keys(j, detail::context_keys({ "slice" }));
  auto ctx = CumulantContext::from_json(j);
  auto slice = detail::Slice::from_json(j.value("slice", nlohmann::json()), ctx.q());
  nlohmann::json resolved = ctx.to_json();
  resolved["slice"] = slice.to_json();
  std::ostringstream os;
  CsvWriter w(os);
  w.metadata(detail::meta(opt, resolved, std::nullopt));
  auto header = detail::vec_header("s", ctx.q());
  header.insert(header.end(), { "tau", "value", "jstar", "status", "minimizer_t" });
  w.header(header);
  for (int k = 0; k < slice.points; ++k) {
    const double tau = slice.tau(k);
    const Vec s = ctx.r_x() + tau * slice.direction;
    auto rr = regression_rate(ctx, s);
    auto cells = detail::vec_cells(s);
    cells.push_back(format_double(tau));
    cells.push_back(format_extended(rr.j));
    cells.push_back(format_extended(rr.jstar));
    cells.push_back(rr.j.is_finite() ? "converged" : "diverged_to_infinite");
    cells.push_back(rr.t_min ? format_double(*rr.t_min) : "");
    w.row(cells);
  }
  return { { "rate_curve.csv", os.str() } };
}

//! Quadratic moderate-deviation rate along a slice through 0.
inline std::vector<Artifact>
cmd_mdp(const Options& opt, const nlohmann::json& j)
{
  detail::allow_keys(j, detail::context_keys({ "slice" }));
  auto ctx = CumulantContext::from_json(j);
  auto slice = detail::Slice::from_json(j.value("slice", nlohmann::json()), ctx.q());
  nlohmann::json resolved = ctx.to_json();
  resolved["slice"] = slice.to_json();
  std::ostringstream os;
  CsvWriter w(os);
  w.metadata(detail::meta(opt, resolved, std::nullopt));
  auto header = detail::vec_header("v", ctx.q());
  header.insert(header.end(), { "tau", "G", "phi" });
  w.header(header);
  for (int k = 0; k < slice.points; ++k) {
    const double tau = slice.tau(k);
    const Vec v = tau * slice.direction;
    auto cells = detail::vec_cells(v);
    cells.push_back(format_double(tau));
    cells.push_back(format_double(mdp_rate(ctx, v)));
    cells.push_back(format_double(phi_limit(ctx, v)));
    w.row(cells);
  }
  return { { "mdp_rate.csv", os.str() } };
}

//! Finite-n cumulant against its limit at the listed (u, v) points.
inline std::vector<Artifact>
cmd_lambda(const Options& opt, const nlohmann::json& j)
{
  detail::allow_keys(j, detail::context_keys({ "schedule", "ns", "points" }));
  auto ctx = CumulantContext::from_json(j);
  auto sched = BandwidthSchedule::from_json(j.at("schedule"));
  auto ns = j.at("ns").get<std::vector<long>>();
  const int q = ctx.q();
  std::vector<std::pair<Vec, double>> pts;
  for (const auto& p : j.at("points")) {
    auto vals = p.get<std::vector<double>>();
    if (static_cast<int>(vals.size()) != q + 1)
      throw ConfigError("each lambda point is [u_1, ..., u_q, v]");
    Vec u(q);
    for (int i = 0; i < q; ++i)
      u(i) = vals[static_cast<size_t>(i)];
    pts.emplace_back(u, vals.back());
  }
  nlohmann::json resolved = ctx.to_json();
  resolved["schedule"] = sched.to_json();
  resolved["ns"] = ns;
  resolved["points"] = j.at("points");
  std::ostringstream os;
  CsvWriter w(os);
  w.metadata(detail::meta(opt, resolved, std::nullopt));
  auto header = std::vector<std::string>{ "n" };
  auto uh = detail::vec_header("u", q);
  header.insert(header.end(), uh.begin(), uh.end());
  header.insert(header.end(), { "v", "lambda_n", "psi", "abs_diff" });
  w.header(header);
  for (const auto& [u, v] : pts) {
    const double psi = eval_psi(ctx, u, v);
    for (long n : ns) {
      const double lam = eval_lambda_n(ctx, u, v, n, sched);
      std::vector<std::string> cells{ std::to_string(n) };
      auto uc = detail::vec_cells(u);
      cells.insert(cells.end(), uc.begin(), uc.end());
      cells.push_back(format_double(v));
      cells.push_back(format_double(lam));
      cells.push_back(format_double(psi));
      cells.push_back(format_double(std::abs(lam - psi)));
      w.row(cells);
    }
  }
  return { { "lambda.csv", os.str() } };
}

//! Monte Carlo experiment; JSON report plus a CSV curve for deviation targets.
inline std::vector<Artifact>
cmd_simulate(const Options& opt, nlohmann::json j, std::ostream& err)
{
  if (opt.seed)
    j["seed"] = *opt.seed;
  auto cfg = ExperimentConfig::from_json(j);
  const nlohmann::json resolved = cfg.to_json();
  const auto metadata = detail::meta(opt, resolved, cfg.seed);
  if (opt.verbosity > 0)
    detail::log_line(err, "info", "simulation started",
                     { { "target", to_string(cfg.target) }, { "reps", cfg.reps } });
  std::vector<Artifact> out;
  switch (cfg.target) {
    case Target::ldp_curve: {
      auto curves = run_ldp_curve(cfg);
      nlohmann::json arr = nlohmann::json::array();
      std::ostringstream os;
      CsvWriter w(os);
      w.metadata(metadata);
      w.header({ "variant", "delta", "n", "h_n", "p_hat", "se", "norm_log" });
      for (const auto& c : curves) {
        arr.push_back(c.to_json());
        for (const auto& r : c.rows)
          w.row({ c.variant.is_semirec() ? "semirec" : "nw", format_double(c.delta),
                  std::to_string(r.n), format_double(r.h_n), format_double(r.p_hat),
                  format_double(r.se), r.norm_log ? format_double(*r.norm_log) : "" });
        for (long n : c.non_monotone)
          detail::log_line(err, "warning", "norm_log decreased at this n",
                           { { "n", n }, { "delta", c.delta } });
      }
      out.push_back({ "report.json", detail::json_artifact(metadata, { { "curves", arr } }) });
      out.push_back({ "deviation_curve.csv", os.str() });
      break;
    }
    case Target::mdp_variance:
      out.push_back({ "report.json",
                      detail::json_artifact(metadata, run_mdp_variance(cfg).to_json()) });
      break;
    case Target::linearized_error: {
      nlohmann::json arr = nlohmann::json::array();
      for (const auto& r : run_linearized_error(cfg))
        arr.push_back(r.to_json());
      out.push_back({ "report.json", detail::json_artifact(metadata, { { "variants", arr } }) });
      break;
    }
    case Target::concentration_ratio:
      out.push_back({ "report.json",
                      detail::json_artifact(metadata, run_concentration_ratio(cfg).to_json()) });
      break;
  }
  return out;
}

//! Moment and support report for a kernel. Returns false when the order
//! conditions fail (the report is still produced).
inline std::vector<Artifact>
cmd_verify_kernel(const Options& opt, const nlohmann::json& j, bool& pass)
{
  detail::allow_keys(j, { "kernel", "order", "tol", "seed" });
  Kernel k = Kernel::from_json(j.at("kernel"));
  int p = j.value("order", k.order().value_or(2));
  double tol = j.value("tol", 1e-10);
  auto rep = verify_order(k, p, tol);
  auto sm = support_measures(k);
  nlohmann::json resolved = { { "kernel", k.to_json() }, { "order", p }, { "tol", tol } };
  nlohmann::json result = { { "order", rep.p },
                            { "moments", rep.moments },
                            { "abs_moment_p", rep.abs_moment_p },
                            { "integral", rep.integral },
                            { "integral_error", std::abs(rep.integral - 1.0) },
                            { "quadrature_error", rep.quadrature_error },
                            { "lambda_splus", extended_to_json(sm.splus) },
                            { "lambda_sminus", extended_to_json(sm.sminus) },
                            { "measure_uncertainty", sm.uncertainty },
                            { "l2_norm_squared", k.l2_norm_squared() },
                            { "pass", rep.pass } };
  pass = rep.pass;
  return { { "kernel_report.json",
             detail::json_artifact(detail::meta(opt, resolved, std::nullopt), result) } };
}

inline std::vector<Artifact>
cmd_condition_c(const Options& opt, const nlohmann::json& j)
{
  detail::allow_keys(j, detail::context_keys({ "grid" }));
  auto ctx = CumulantContext::from_json(j);
  std::vector<Vec> grid;
  nlohmann::json grid_json = nlohmann::json::array();
  if (j.contains("grid")) {
    for (const auto& s : j["grid"])
      grid.push_back(vec_from_json(s, "grid point"));
  } else {
    for (int k = -4; k <= 4; ++k)
      if (k != 0)
        grid.push_back(Vec::Constant(ctx.q(), 0.5 * k));
  }
  for (const auto& s : grid) {
    if (s.size() != ctx.q())
      throw ConfigError("grid points must have dimension q");
    grid_json.push_back(vec_to_json(s));
  }
  nlohmann::json resolved = ctx.to_json();
  resolved["grid"] = grid_json;
  auto rep = check_condition_c(ctx, grid);
  return { { "condition_c.json",
             detail::json_artifact(detail::meta(opt, resolved, std::nullopt), rep.to_json()) } };
}

inline std::vector<Artifact>
cmd_bias(const Options& opt, const nlohmann::json& j)
{
  detail::allow_keys(j, { "model", "kernel", "schedule", "x", "ns", "seed" });
  JointModel model(ModelSpec::from_json(j.at("model")));
  Kernel k = Kernel::from_json(j.at("kernel"));
  auto sched = BandwidthSchedule::from_json(j.at("schedule"));
  Vec x = vec_from_json(j.at("x"), "x");
  auto ns = j.at("ns").get<std::vector<double>>();
  auto table = bias_probe(model, k, sched, x, ns);
  nlohmann::json resolved = { { "model", model.spec().to_json() },
                              { "kernel", k.to_json() },
                              { "schedule", sched.to_json() },
                              { "x", vec_to_json(x) },
                              { "ns", ns } };
  auto metadata = detail::meta(opt, resolved, std::nullopt);
  metadata["slope_m"] = table.slope_m;
  metadata["slope_g"] = table.slope_g;
  std::ostringstream os;
  CsvWriter w(os);
  w.metadata(metadata);
  w.header({ "n", "h", "bias_m", "bias_g" });
  for (const auto& r : table.rows)
    w.row({ format_double(r.n), format_double(r.h), format_double(r.bias_m),
            format_double(r.bias_g) });
  return { { "bias.csv", os.str() } };
}

//! Parses the command line, runs the subcommand and writes its artifacts.
//! Exit codes: 0 success, 1 configuration or input error, 2 numeric failure.
inline int
run(int argc, const char* const* argv, std::ostream& err = std::cerr)
{
  CLI::App app{ "Large and moderate deviation toolkit for kernel regression estimators" };
  app.require_subcommand(1);
  Options opt;
  std::uint64_t seed = 0;
  auto add = [&](const std::string& name, const std::string& help) {
    auto* sub = app.add_subcommand(name, help);
    sub->add_option("--config,-c", opt.config_path, "JSON config file")->required();
    sub->add_option("--output-dir,-o", opt.output_dir, "directory for artifacts");
    sub->add_option("--seed", seed, "override the config seed");
    sub->add_flag("-v,--verbose", opt.verbosity, "log progress to stderr");
    return sub;
  };
  add("rate", "J along a slice through r(x)");
  add("mdp", "moderate-deviation rate along a slice");
  add("lambda", "finite-n cumulant against its limit");
  add("simulate", "Monte Carlo experiment");
  add("verify-kernel", "kernel moment and support report");
  add("condition-c", "check inf_s I(s, 0) = I(0, 0) on a grid");
  add("bias", "exact bias of m_n and g_n across sample sizes");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e);
    return 0;
  } catch (const CLI::ParseError& e) {
    detail::log_line(err, "error", e.what(), { { "kind", "usage" } });
    return 1;
  }
  opt.command = app.get_subcommands().front()->get_name();
  if (app.get_subcommands().front()->count("--seed"))
    opt.seed = seed;

  std::vector<Artifact> artifacts;
  int code = 0;
  try {
    std::ifstream in(opt.config_path);
    if (!in)
      throw ConfigError("cannot read config file: " + opt.config_path);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError(std::string("invalid JSON: ") + e.what());
    }
    if (opt.verbosity > 0)
      detail::log_line(err, "info", "running", { { "command", opt.command } });
    if (opt.command == "rate")
      artifacts = cmd_rate(opt, j);
    else if (opt.command == "mdp")
      artifacts = cmd_mdp(opt, j);
    else if (opt.command == "lambda")
      artifacts = cmd_lambda(opt, j);
    else if (opt.command == "simulate")
      artifacts = cmd_simulate(opt, j, err);
    else if (opt.command == "verify-kernel") {
      bool pass = true;
      artifacts = cmd_verify_kernel(opt, j, pass);
      if (!pass) {
        detail::log_line(err, "error", "kernel fails the order conditions",
                         { { "kind", "config" } });
        code = 1;
      }
    } else if (opt.command == "condition-c")
      artifacts = cmd_condition_c(opt, j);
    else if (opt.command == "bias")
      artifacts = cmd_bias(opt, j);
  } catch (const NumericError& e) {
    detail::log_line(err, "error", e.what(),
                     { { "kind", "numeric" }, { "residual", e.residual() } });
    return 2;
  } catch (const ConfigError& e) {
    detail::log_line(err, "error", e.what(), { { "kind", "config" } });
    return 1;
  } catch (const InputError& e) {
    detail::log_line(err, "error", e.what(), { { "kind", "input" } });
    return 1;
  } catch (const nlohmann::json::exception& e) {
    detail::log_line(err, "error", e.what(), { { "kind", "config" } });
    return 1;
  }

  try {
    std::filesystem::create_directories(opt.output_dir);
    for (const auto& a : artifacts) {
      std::ofstream out(std::filesystem::path(opt.output_dir) / a.name, std::ios::binary);
      out << a.content;
      if (!out)
        throw std::runtime_error("cannot write " + a.name);
      if (opt.verbosity > 0)
        detail::log_line(err, "info", "wrote artifact", { { "file", a.name } });
    }
  } catch (const std::exception& e) {
    detail::log_line(err, "error", e.what(), { { "kind", "io" } });
    return 1;
  }
  return code;
}

} // namespace devrate::cli
