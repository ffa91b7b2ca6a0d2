#include "fedbilevel/experiment.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "fedbilevel/centralized.hpp"
#include "fedbilevel/dataset.hpp"
#include "fedbilevel/fedsim.hpp"
#include "fedbilevel/nonconvex.hpp"
#include "fedbilevel/oracles.hpp"
#include "fedbilevel/partition.hpp"
#include "fedbilevel/problems.hpp"
#include "fedbilevel/urs.hpp"

namespace fedbilevel {
namespace {

using json = nlohmann::json;

// ---------------------------------------------------------------------------
// Schema resolution: raw document -> canonical document with defaults filled.

std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

void check_keys(const json& obj, const std::string& path,
                const std::set<std::string>& allowed) {
  if (!obj.is_object()) throw ConfigError(path.empty() ? "<root>" : path, "expected an object");
  for (const auto& [key, value] : obj.items()) {
    (void)value;
    if (!allowed.count(key)) throw ConfigError(join(path, key), "unknown field");
  }
}

const json* find(const json& obj, const std::string& key) {
  auto it = obj.find(key);
  return it == obj.end() || it->is_null() ? nullptr : &*it;
}

double get_real(const json& obj, const std::string& path, const std::string& key,
                std::optional<double> fallback) {
  const json* v = find(obj, key);
  if (!v) {
    if (!fallback) throw ConfigError(join(path, key), "required field missing");
    return *fallback;
  }
  if (!v->is_number()) throw ConfigError(join(path, key), "expected a number");
  const double x = v->get<double>();
  if (!std::isfinite(x)) throw ConfigError(join(path, key), "must be finite");
  return x;
}

std::optional<double> opt_real(const json& obj, const std::string& path,
                               const std::string& key) {
  if (!find(obj, key)) return std::nullopt;
  return get_real(obj, path, key, std::nullopt);
}

long long get_int(const json& obj, const std::string& path, const std::string& key,
                  std::optional<long long> fallback, long long minimum) {
  const json* v = find(obj, key);
  long long x;
  if (!v) {
    if (!fallback) throw ConfigError(join(path, key), "required field missing");
    x = *fallback;
  } else {
    if (!v->is_number_integer()) throw ConfigError(join(path, key), "expected an integer");
    if (v->is_number_unsigned() &&
        v->get<std::uint64_t>() > static_cast<std::uint64_t>(std::numeric_limits<long long>::max()))
      throw ConfigError(join(path, key), "integer out of range");
    x = v->get<long long>();
  }
  if (x < minimum)
    throw ConfigError(join(path, key), "must be >= " + std::to_string(minimum));
  return x;
}

std::uint64_t get_seed(const json& obj, const std::string& path,
                       const std::string& key, std::uint64_t fallback) {
  const json* v = find(obj, key);
  if (!v) return fallback;
  if (!v->is_number_integer() || (v->is_number_integer() && !v->is_number_unsigned() &&
                                  v->get<long long>() < 0))
    throw ConfigError(join(path, key), "expected a non-negative integer");
  return v->get<std::uint64_t>();
}

bool get_bool(const json& obj, const std::string& path, const std::string& key,
              bool fallback) {
  const json* v = find(obj, key);
  if (!v) return fallback;
  if (!v->is_boolean()) throw ConfigError(join(path, key), "expected true or false");
  return v->get<bool>();
}

std::string get_choice(const json& obj, const std::string& path,
                       const std::string& key, std::optional<std::string> fallback,
                       const std::set<std::string>& choices) {
  const json* v = find(obj, key);
  std::string s;
  if (!v) {
    if (!fallback) throw ConfigError(join(path, key), "required field missing");
    s = *fallback;
  } else {
    if (!v->is_string()) throw ConfigError(join(path, key), "expected a string");
    s = v->get<std::string>();
  }
  if (!choices.empty() && !choices.count(s)) {
    std::string list;
    for (const auto& c : choices) list += (list.empty() ? "" : ", ") + c;
    throw ConfigError(join(path, key), "'" + s + "' is not one of: " + list);
  }
  return s;
}

std::vector<double> get_reals(const json& obj, const std::string& path,
                              const std::string& key) {
  const json* v = find(obj, key);
  if (!v) throw ConfigError(join(path, key), "required field missing");
  if (!v->is_array()) throw ConfigError(join(path, key), "expected an array of numbers");
  std::vector<double> out;
  for (std::size_t i = 0; i < v->size(); ++i) {
    const json& e = (*v)[i];
    if (!e.is_number() || !std::isfinite(e.get<double>()))
      throw ConfigError(join(path, key) + "[" + std::to_string(i) + "]",
                        "expected a finite number");
    out.push_back(e.get<double>());
  }
  return out;
}

const json& section(const json& root, const std::string& key, const json& empty) {
  const json* v = find(root, key);
  return v ? *v : empty;
}

json resolve_outer(const json& raw, const std::string& path) {
  check_keys(raw, path, {"kind", "center", "mu", "epsilon"});
  json out;
  const std::string kind = get_choice(
      raw, path, "kind", std::string("instance"),
      {"instance", "min-norm", "shifted", "zero", "moreau-l1", "moreau-lsp"});
  out["kind"] = kind;
  if (kind == "shifted") out["center"] = get_reals(raw, path, "center");
  if (kind == "moreau-l1" || kind == "moreau-lsp") {
    const double mu = get_real(raw, path, "mu", kind == "moreau-lsp" ? 0.01 : 0.1);
    if (!(mu > 0.0)) throw ConfigError(join(path, "mu"), "must be > 0");
    out["mu"] = mu;
  }
  if (kind == "moreau-lsp") {
    const double eps = get_real(raw, path, "epsilon", 0.1);
    if (!(eps > 0.0)) throw ConfigError(join(path, "epsilon"), "must be > 0");
    if (std::sqrt(out["mu"].get<double>()) > eps)
      throw ConfigError(join(path, "mu"), "LSP needs sqrt(mu) <= epsilon");
    out["epsilon"] = eps;
  }
  return out;
}

json resolve_problem(const json& raw, std::uint64_t seed) {
  const std::string path = "problem";
  if (!raw.is_object()) throw ConfigError(path, "required section missing");
  const std::string kind = get_choice(
      raw, path, "kind", std::nullopt,
      {"overparam-ls", "weak-sharp-l2", "quadratic-ball", "heterogeneous-quadratics", "csv"});
  json out;
  out["kind"] = kind;
  out["seed"] = get_seed(raw, path, "seed", seed);
  std::set<std::string> keys = {"kind", "seed", "outer"};

  if (kind == "overparam-ls") {
    keys.insert({"n", "m", "clients", "curvature_min", "curvature_max", "solution_norm"});
    check_keys(raw, path, keys);
    out["n"] = get_int(raw, path, "n", 50, 2);
    out["m"] = get_int(raw, path, "m", 20, 1);
    if (out["m"].get<long long>() >= out["n"].get<long long>())
      throw ConfigError(join(path, "m"), "must be < n (over-parameterized)");
    out["clients"] = get_int(raw, path, "clients", 5, 1);
    const OverparamOptions d;
    out["curvature_min"] = get_real(raw, path, "curvature_min", d.curvatureMin);
    out["curvature_max"] = get_real(raw, path, "curvature_max", d.curvatureMax);
    out["solution_norm"] = get_real(raw, path, "solution_norm", d.solutionNorm);
  } else if (kind == "weak-sharp-l2" || kind == "quadratic-ball") {
    keys.insert({"rows", "cols", "clients"});
    if (kind == "weak-sharp-l2") keys.insert("outer_center");
    check_keys(raw, path, keys);
    const WeakSharpOptions d;
    out["rows"] = get_int(raw, path, "rows", d.rows, 1);
    out["cols"] = get_int(raw, path, "cols", d.cols, 1);
    out["clients"] = get_int(raw, path, "clients", static_cast<long long>(d.clients), 1);
    if (find(raw, "outer_center")) {
      out["outer_center"] = get_reals(raw, path, "outer_center");
      if (static_cast<long long>(out["outer_center"].size()) != out["cols"].get<long long>())
        throw ConfigError(join(path, "outer_center"), "length must equal cols");
    }
  } else if (kind == "heterogeneous-quadratics") {
    keys.insert({"curvatures", "centers", "samples"});
    check_keys(raw, path, keys);
    const auto a = get_reals(raw, path, "curvatures");
    const auto c = get_reals(raw, path, "centers");
    if (a.empty()) throw ConfigError(join(path, "curvatures"), "needs at least one client");
    if (c.size() != a.size()) throw ConfigError(join(path, "centers"), "length must match curvatures");
    out["curvatures"] = a;
    out["centers"] = c;
    std::vector<long long> samples(a.size(), 10);
    if (const json* s = find(raw, "samples")) {
      if (!s->is_array() || s->size() != a.size())
        throw ConfigError(join(path, "samples"), "expected one positive integer per client");
      for (std::size_t i = 0; i < a.size(); ++i) {
        if (!(*s)[i].is_number_integer() || (*s)[i].get<long long>() < 1)
          throw ConfigError(join(path, "samples") + "[" + std::to_string(i) + "]",
                            "expected a positive integer");
        samples[i] = (*s)[i].get<long long>();
      }
    }
    out["samples"] = samples;
  } else {
    keys.insert({"path", "header", "delimiter", "clients", "alpha", "partition_seed",
                 "partition_out"});
    check_keys(raw, path, keys);
    out["path"] = get_choice(raw, path, "path", std::nullopt, {});
    out["header"] = get_bool(raw, path, "header", false);
    const std::string delim = get_choice(raw, path, "delimiter", std::string(","), {});
    if (delim.size() != 1) throw ConfigError(join(path, "delimiter"), "must be one character");
    out["delimiter"] = delim;
    out["clients"] = get_int(raw, path, "clients", std::nullopt, 1);
    const double alpha = get_real(raw, path, "alpha", 0.5);
    if (!(alpha > 0.0)) throw ConfigError(join(path, "alpha"), "must be > 0");
    out["alpha"] = alpha;
    out["partition_seed"] = get_seed(raw, path, "partition_seed", out["seed"].get<std::uint64_t>());
    if (find(raw, "partition_out"))
      out["partition_out"] = get_choice(raw, path, "partition_out", std::nullopt, {});
  }
  const json empty = json::object();
  out["outer"] = resolve_outer(section(raw, "outer", empty), join(path, "outer"));
  return out;
}

json resolve(const json& raw) {
  check_keys(raw, "", {"seed", "problem", "method", "schedule", "metrics", "bounds",
                       "two_loop", "output", "sweep"});
  const json empty = json::object();
  json out;
  const std::uint64_t seed = get_seed(raw, "", "seed", 0);
  out["seed"] = seed;
  out["problem"] = resolve_problem(section(raw, "problem", json()), seed);

  const json& m = section(raw, "method", json());
  if (!m.is_object()) throw ConfigError("method", "required section missing");
  check_keys(m, "method", {"name", "control_variate", "stochastic", "batch",
                           "with_replacement", "workers", "divergence_threshold",
                           "agm_variant"});
  json method;
  const std::string name = get_choice(m, "method", "name", std::nullopt,
                                      {"fedavg", "scaffold", "agm", "two-loop"});
  method["name"] = name;
  method["control_variate"] = get_choice(m, "method", "control_variate", std::string("ii"), {"i", "ii"});
  method["stochastic"] = get_bool(m, "method", "stochastic", false);
  method["batch"] = get_int(m, "method", "batch", 1, 1);
  method["with_replacement"] = get_bool(m, "method", "with_replacement", true);
  method["workers"] = get_int(m, "method", "workers", 1, 1);
  const double threshold = get_real(m, "method", "divergence_threshold", 1e12);
  if (!(threshold > 0.0)) throw ConfigError("method.divergence_threshold", "must be > 0");
  method["divergence_threshold"] = threshold;
  method["agm_variant"] = get_choice(m, "method", "agm_variant", std::string("auto"),
                                     {"auto", "convex", "strongly-convex"});
  out["method"] = method;

  const json& s = section(raw, "schedule", empty);
  check_keys(s, "schedule", {"rule", "R", "K", "S", "p", "a", "b", "Gamma", "eta",
                             "gamma_local", "gamma_global", "enforce_caps"});
  json sched;
  const bool twoLoop = name == "two-loop";
  if (twoLoop) {
    if (find(s, "rule") && s["rule"] != "fedavg-sc")
      throw ConfigError("schedule.rule", "two-loop inner runs use fedavg-sc");
    for (const char* k : {"R", "eta", "gamma_local", "Gamma"})
      if (find(s, k)) throw ConfigError(join("schedule", k), "not used by two-loop; R_t = t");
  } else {
    sched["rule"] = get_choice(s, "schedule", "rule",
                               std::string(name == "scaffold" ? "scaffold-sc" : "fedavg-sc"),
                               {"fedavg-sc", "fedavg-cvx", "scaffold-sc", "scaffold-cvx", "manual"});
    sched["R"] = get_int(s, "schedule", "R", std::nullopt, 1);
    sched["Gamma"] = get_real(s, "schedule", "Gamma", 0.0);
    if (auto v = opt_real(s, "schedule", "eta")) sched["eta"] = *v;
    if (auto v = opt_real(s, "schedule", "gamma_local")) sched["gamma_local"] = *v;
  }
  sched["K"] = get_int(s, "schedule", "K", 1, 1);
  if (find(s, "S")) sched["S"] = get_int(s, "schedule", "S", std::nullopt, 1);
  sched["p"] = get_real(s, "schedule", "p", 2.0);
  if (auto v = opt_real(s, "schedule", "a")) sched["a"] = *v;
  if (auto v = opt_real(s, "schedule", "b")) sched["b"] = *v;
  if (auto v = opt_real(s, "schedule", "gamma_global")) sched["gamma_global"] = *v;
  sched["enforce_caps"] = get_bool(s, "schedule", "enforce_caps", true);
  out["schedule"] = sched;

  const json& mt = section(raw, "metrics", empty);
  check_keys(mt, "metrics", {"oracle", "wallclock"});
  out["metrics"] = {{"oracle", get_bool(mt, "metrics", "oracle", true)},
                    {"wallclock", get_bool(mt, "metrics", "wallclock", false)}};

  const json& b = section(raw, "bounds", empty);
  check_keys(b, "bounds", {"M"});
  out["bounds"] = json::object();
  if (auto v = opt_real(b, "bounds", "M")) {
    if (!(*v > 0.0)) throw ConfigError("bounds.M", "must be > 0");
    out["bounds"]["M"] = *v;
  }

  const json& t = section(raw, "two_loop", empty);
  if (!twoLoop && find(raw, "two_loop"))
    throw ConfigError("two_loop", "only valid with method.name = two-loop");
  if (twoLoop) {
    check_keys(t, "two_loop", {"lambda", "gamma", "T", "projection", "warm_start", "y0"});
    json tl;
    tl["lambda"] = get_real(t, "two_loop", "lambda", 0.5);
    if (!(tl["lambda"].get<double>() > 0.0)) throw ConfigError("two_loop.lambda", "must be > 0");
    tl["gamma"] = get_real(t, "two_loop", "gamma", 0.0);
    if (tl["gamma"].get<double>() < 0.0) throw ConfigError("two_loop.gamma", "must be >= 0");
    tl["T"] = get_int(t, "two_loop", "T", std::nullopt, 1);
    tl["projection"] = get_choice(t, "two_loop", "projection", std::string("federated"),
                                  {"federated", "exact"});
    tl["warm_start"] = get_bool(t, "two_loop", "warm_start", true);
    if (find(t, "y0")) tl["y0"] = get_reals(t, "two_loop", "y0");
    out["two_loop"] = tl;
  }

  const json& o = section(raw, "output", empty);
  check_keys(o, "output", {"dir", "name"});
  const std::string runName = get_choice(o, "output", "name", std::string("run"), {});
  if (runName.empty() || runName.find('/') != std::string::npos)
    throw ConfigError("output.name", "must be a plain, non-empty file stem");
  out["output"] = {{"dir", get_choice(o, "output", "dir", std::string("."), {})},
                   {"name", runName}};

  if (const json* sw = find(raw, "sweep")) {
    check_keys(*sw, "sweep", {"eta"});
    if (twoLoop) throw ConfigError("sweep", "not supported for two-loop");
    const json* etas = find(*sw, "eta");
    if (!etas || !etas->is_array() || etas->empty())
      throw ConfigError("sweep.eta", "expected a non-empty array");
    json list = json::array();
    for (std::size_t i = 0; i < etas->size(); ++i) {
      const json& e = (*etas)[i];
      const std::string p = "sweep.eta[" + std::to_string(i) + "]";
      if (e.is_string() && e.get<std::string>() == "rule") {
        list.push_back("rule");
      } else if (e.is_number() && e.get<double>() > 0.0 && std::isfinite(e.get<double>())) {
        list.push_back(e.get<double>());
      } else {
        throw ConfigError(p, "expected a positive number or \"rule\"");
      }
    }
    out["sweep"] = {{"eta", list}};
  }
  return out;
}

// ---------------------------------------------------------------------------
// Problem construction.

std::vector<double> as_reals(const json& j) { return j.get<std::vector<double>>(); }

ModelVector as_vector(const json& j) {
  const auto v = as_reals(j);
  return Eigen::Map<const ModelVector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::optional<LocalObjective> outer_objective(const json& outer, Eigen::Index n) {
  const std::string kind = outer["kind"];
  if (kind == "instance") return std::nullopt;
  if (kind == "min-norm") return LocalObjective::squared_distance(ModelVector::Zero(n));
  if (kind == "shifted") {
    const ModelVector c = as_vector(outer["center"]);
    if (c.size() != n) throw ConfigError("problem.outer.center", "length must equal the dimension");
    return LocalObjective::squared_distance(c);
  }
  if (kind == "zero") return LocalObjective::zero();
  if (kind == "moreau-l1") return LocalObjective::moreau_l1(outer["mu"].get<double>());
  return LocalObjective::moreau_lsp(outer["mu"].get<double>(), outer["epsilon"].get<double>());
}

ProblemInstance build_problem(const json& p) {
  const std::string kind = p["kind"];
  const std::uint64_t seed = p["seed"];
  ProblemInstance instance;
  try {
    if (kind == "overparam-ls") {
      OverparamOptions o;
      o.curvatureMin = p["curvature_min"];
      o.curvatureMax = p["curvature_max"];
      o.solutionNorm = p["solution_norm"];
      instance = make_overparam_ls(p["n"].get<long long>(), p["m"].get<long long>(),
                                   p["clients"].get<std::size_t>(), seed, o);
    } else if (kind == "weak-sharp-l2" || kind == "quadratic-ball") {
      WeakSharpOptions o;
      o.rows = p["rows"].get<long long>();
      o.cols = p["cols"].get<long long>();
      o.clients = p["clients"].get<std::size_t>();
      if (p.contains("outer_center")) o.outerCenter = as_vector(p["outer_center"]);
      instance = make_weak_sharp_instance(
          kind == "weak-sharp-l2" ? WeakSharpKind::L2Residual : WeakSharpKind::QuadraticBall,
          seed, o);
    } else if (kind == "heterogeneous-quadratics") {
      instance = make_heterogeneous_quadratics(as_reals(p["curvatures"]), as_reals(p["centers"]),
                                               p["samples"].get<std::vector<std::size_t>>(), seed);
    } else {
      CsvFormat format;
      format.header = p["header"];
      format.delimiter = p["delimiter"].get<std::string>()[0];
      const Dataset data = load_csv_dataset(p["path"].get<std::string>(), format);
      const Partition part =
          dirichlet_partition(labels_from_targets(data.targets), p["clients"].get<std::size_t>(),
                              p["alpha"].get<double>(), p["partition_seed"].get<std::uint64_t>());
      if (p.contains("partition_out"))
        write_partition_csv(p["partition_out"].get<std::string>(), part);
      instance = make_least_squares_instance(data, part);
    }
    if (auto outer = outer_objective(p["outer"], instance.dimension))
      instance = with_outer(std::move(instance), *outer);
    instance.validate();
  } catch (const PreconditionError& e) {
    throw ConfigError("problem", e.what());
  }
  return instance;
}

// ---------------------------------------------------------------------------
// Schedules.

ScheduleParams schedule_params(const json& s, const ProblemInstance& instance, int r) {
  ScheduleParams sp;
  sp.R = r;
  sp.K = s["K"].get<int>();
  sp.S = s.contains("S") ? s["S"].get<std::size_t>() : instance.client_count();
  if (sp.S > instance.client_count())
    throw ConfigError("schedule.S", "exceeds the number of clients (" +
                                        std::to_string(instance.client_count()) + ")");
  sp.p = s["p"];
  if (s.contains("Gamma")) sp.Gamma = s["Gamma"];
  return sp;
}

Schedule resolve_schedule(const json& cfg, const ProblemInstance& instance,
                          std::optional<double> etaOverride) {
  const json& s = cfg["schedule"];
  const std::string ruleName = s["rule"];
  ScheduleOverrides ov;
  if (s.contains("eta")) ov.eta = s["eta"].get<double>();
  if (etaOverride) ov.eta = etaOverride;
  if (s.contains("gamma_local")) ov.gammaLocal = s["gamma_local"].get<double>();
  if (s.contains("gamma_global")) ov.gammaGlobal = s["gamma_global"].get<double>();
  if (s.contains("a")) ov.a = s["a"].get<double>();
  if (s.contains("b")) ov.b = s["b"].get<double>();
  ov.enforceCaps = s["enforce_caps"];
  try {
    return make_schedule(parse_schedule_rule(ruleName), instance,
                         schedule_params(s, instance, s["R"].get<int>()), ov);
  } catch (const ConfigError&) {
    throw;
  } catch (const PreconditionError& e) {
    const std::string what = e.what();
    throw ConfigError(what.find("schedule rule") != std::string::npos ? "schedule.rule" : "schedule",
                      what);
  }
}

// ---------------------------------------------------------------------------
// Output helpers.

std::string cell(const std::optional<double>& v) {
  return v ? format_real(*v) : std::string();
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json schedule_json(const Schedule& s) {
  json j;
  j["rule"] = std::string(to_string(s.rule));
  j["eta"] = s.eta;
  j["gamma_local"] = s.gammaLocal;
  j["gamma_global"] = s.gammaGlobal;
  j["gamma_tilde"] = s.gammaTilde;
  j["K"] = s.K;
  j["R"] = s.R;
  j["S"] = s.S;
  j["N"] = s.N;
  j["a"] = s.a;
  j["b"] = s.b;
  j["p"] = s.p;
  j["Gamma"] = s.Gamma;
  j["theta"] = std::isinf(s.theta) ? json("inf") : json(s.theta);
  j["L_eta"] = s.lEta;
  j["B_sq"] = s.bSq;
  j["complexity_E"] = optional_json(s.complexityE);
  j["warnings"] = s.warnings;
  return j;
}

json clamps_json(const Schedule& s) {
  json caps = json::array();
  for (const auto& c : s.caps) caps.push_back({{"name", c.name}, {"value", c.value}});
  return {{"clamped", s.clamped}, {"caps_exceeded", s.capsExceeded}, {"caps", caps}};
}

json bounds_json(const BoundReport& r) {
  json j;
  j["eta"] = r.eta;
  j["err_eta"] = r.errEta;
  j["h_gap_upper"] = r.hGapUpper;
  j["f_gap_upper"] = r.fGapUpper;
  j["f_gap_lower"] = optional_json(r.fGapLower);
  j["case_iii_applicable"] = r.caseIIIApplicable;
  j["case_iii_eta_threshold"] = optional_json(r.caseIIIEtaThreshold);
  j["case_iii_h_gap_upper"] = optional_json(r.caseIIIHGapUpper);
  j["case_iii_f_gap_lower"] = optional_json(r.caseIIIFGapLower);
  j["case_iii_dist_sq_upper"] = optional_json(r.caseIIIDistSqUpper);
  j["notes"] = r.notes;
  return j;
}

// Oracle pieces computed once per run. Each is absent when no exact or
// convergent oracle applies; absent values are reported as such.
struct Oracles {
  std::optional<BilevelReference> reference;
  std::optional<RegularizedOptimum> optimum;
  std::vector<std::string> notes;
};

Oracles build_oracles(const ProblemInstance& instance, double eta, bool enabled,
                      bool needOptimum) {
  Oracles o;
  if (!enabled) {
    o.notes.push_back("oracle metrics disabled");
    return o;
  }
  try {
    o.reference = bilevel_reference(instance);
  } catch (const Error& e) {
    o.notes.push_back(std::string("no bilevel reference: ") + e.what());
  }
  if (needOptimum) {
    try {
      o.optimum = solve_regularized(RegularizedObjective(instance, eta));
    } catch (const Error& e) {
      o.notes.push_back(std::string("no regularized optimum: ") + e.what());
    }
  }
  return o;
}

// Lower bound on the outer objective for every built-in outer kind (all are
// nonnegative), used for the default M = f* - inf f.
std::optional<double> default_m(const json& cfg, const Oracles& o) {
  if (cfg["bounds"].contains("M")) return cfg["bounds"]["M"].get<double>();
  if (o.reference && o.reference->fStar > 0.0) return o.reference->fStar;
  return std::nullopt;
}

std::string metrics_row(int round, const ProblemInstance& instance, const ModelVector& x,
                        const RegularizedObjective& objective, const Oracles& o,
                        std::optional<double> wallclock) {
  const BilevelReference* ref = o.reference ? &*o.reference : nullptr;
  const Metrics m = metrics(instance, x, ref);
  std::optional<double> err;
  if (o.optimum) err = measure_err_eta(objective, x, *o.optimum);
  std::string line = std::to_string(round);
  for (const auto& v : {std::optional<double>(m.f), std::optional<double>(m.h), m.fGap, m.hGap,
                        m.dist, err, wallclock}) {
    line += ',';
    line += cell(v);
  }
  line += '\n';
  return line;
}

std::string eta_suffix(const json& entry) {
  if (entry.is_string()) return "eta-rule";
  char buf[32];
  std::snprintf(buf, sizeof buf, "eta-%.0e", entry.get<double>());
  return buf;
}

json hashed_part(const json& cfg) {
  json h = cfg;
  h.erase("output");
  h.erase("sweep");
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

RunArtifact run_federated_or_agm(const json& cfg, const ProblemInstance& instance,
                                 const Schedule& schedule, std::size_t workers) {
  const json& method = cfg["method"];
  const std::string name = method["name"];
  const bool oracle = cfg["metrics"]["oracle"];
  const bool wallclock = cfg["metrics"]["wallclock"];
  const RegularizedObjective objective(instance, schedule.eta);
  Oracles o = build_oracles(instance, schedule.eta, oracle, true);

  RunArtifact art;
  std::string csv = metrics_csv_header();
  ModelVector xOut;
  json extra;

  if (name == "agm") {
    const std::string variant = method["agm_variant"];
    const bool strong = variant == "strongly-convex" ||
                        (variant == "auto" && instance.constants.muF > 0.0);
    std::optional<ModelVector> xStar;
    if (o.optimum) xStar = o.optimum->x;
    const ModelVector x0 = ModelVector::Zero(instance.dimension);
    auto start = std::chrono::steady_clock::now();
    auto hook = [&](int k, const ModelVector& x) {
      std::optional<double> ms;
      if (wallclock) {
        const auto now = std::chrono::steady_clock::now();
        ms = std::chrono::duration<double, std::milli>(now - start).count();
        start = now;
      }
      csv += metrics_row(k, instance, x, objective, o, ms);
    };
    AgmResult res;
    try {
      res = strong ? run_agm_strongly_convex(objective, x0, schedule.R, xStar, hook)
                   : run_agm_convex(objective, x0, schedule.R, xStar, hook);
    } catch (const PreconditionError& e) {
      throw ConfigError("method.agm_variant", e.what());
    }
    xOut = res.xHat;
    extra["agm_variant"] = strong ? "strongly-convex" : "convex";
    extra["err_eta_bound"] = optional_json(res.errEtaBound);
  } else {
    TrainingOptions t;
    t.method = name == "scaffold" ? Method::Scaffold : Method::FedAvg;
    t.cvOption = method["control_variate"] == "i" ? ControlVariateOption::I
                                                   : ControlVariateOption::II;
    t.oracle.stochastic = method["stochastic"];
    t.oracle.batch = method["batch"].get<std::size_t>();
    t.oracle.withReplacement = method["with_replacement"];
    t.seed = cfg["seed"];
    t.workers = workers;
    t.divergenceThreshold = method["divergence_threshold"];
    TrainingResult res = run_training(instance, schedule, t, [&](const RoundSnapshot& s) {
      std::optional<double> ms;
      if (wallclock) ms = s.record.wallclockMs;
      csv += metrics_row(s.round, instance, s.server.wavg.mean(), objective, o, ms);
    });
    xOut = res.xBar;
  }

  json manifest;
  manifest["version"] = FEDBILEVEL_VERSION;
  manifest["method"] = name;
  manifest["seed"] = cfg["seed"];
  manifest["workers_independent"] = true;
  manifest["schedule"] = schedule_json(schedule);
  manifest["clamps"] = clamps_json(schedule);
  manifest["rows"] = schedule.R;
  manifest["oracle_notes"] = o.notes;
  for (auto& [k, v] : extra.items()) manifest[k] = v;

  const Metrics fin = metrics(instance, xOut, o.reference ? &*o.reference : nullptr);
  manifest["final"] = {{"f", fin.f}, {"h", fin.h}, {"f_gap", optional_json(fin.fGap)},
                       {"h_gap", optional_json(fin.hGap)}, {"dist", optional_json(fin.dist)}};

  manifest["bounds"] = nullptr;
  if (o.optimum) {
    const double err = measure_err_eta(objective, xOut, *o.optimum);
    const auto m = default_m(cfg, o);
    if (m) {
      TheoremBoundInputs in;
      in.errEta = err;
      in.M = *m;
      in.gradNormAtStar = o.reference ? o.reference->gradNormAtStar : 0.0;
      if (instance.sharpness) {
        in.alpha = instance.sharpness->alpha;
        in.kappa = instance.sharpness->kappa;
      }
      in.muF = instance.constants.muF;
      manifest["bounds"] = bounds_json(theorem1_bounds(in, schedule.eta));
      manifest["bounds"]["M"] = *m;
    } else {
      manifest["oracle_notes"].push_back("bound report skipped: M unknown (set bounds.M)");
    }
  }
  art.csv = std::move(csv);
  art.manifest = manifest.dump(2) + "\n";
  return art;
}

RunArtifact run_two_loop_experiment(const json& cfg, const ProblemInstance& instance,
                                    std::size_t workers) {
  const json& tl = cfg["two_loop"];
  const json& s = cfg["schedule"];
  const json& method = cfg["method"];

  const auto outer = outer_objective(cfg["problem"]["outer"], instance.dimension);
  const LocalObjective fOuter = outer ? *outer : instance.clients.front().outer;

  OuterConfig oc;
  oc.lambda = tl["lambda"];
  oc.gamma = tl["gamma"];
  oc.T = tl["T"];
  oc.projection = tl["projection"] == "exact" ? ProjectionMode::ExactOracle
                                               : ProjectionMode::Federated;
  oc.warmStart = tl["warm_start"];
  if (tl.contains("y0")) {
    oc.y0 = as_vector(tl["y0"]);
    if (oc.y0.size() != instance.dimension)
      throw ConfigError("two_loop.y0", "length must equal the dimension");
  }
  oc.inner.p = s["p"];
  if (s.contains("a")) oc.inner.a = s["a"];
  if (s.contains("b")) oc.inner.b = s["b"];
  oc.inner.K = s["K"];
  oc.inner.S = s.contains("S") ? s["S"].get<std::size_t>() : 0;
  if (oc.inner.S > instance.client_count())
    throw ConfigError("schedule.S", "exceeds the number of clients");
  if (s.contains("gamma_global")) oc.inner.gammaGlobal = s["gamma_global"].get<double>();
  oc.inner.enforceCaps = s["enforce_caps"];
  oc.inner.oracle.stochastic = method["stochastic"];
  oc.inner.oracle.batch = method["batch"].get<std::size_t>();
  oc.inner.oracle.withReplacement = method["with_replacement"];
  oc.inner.workers = workers;

  TwoLoopResult res;
  try {
    res = run_two_loop(instance, fOuter, oc, cfg["seed"].get<std::uint64_t>());
  } catch (const DivergenceError&) {
    throw;
  } catch (const PreconditionError& e) {
    throw ConfigError("two_loop", e.what());
  }

  std::string csv = two_loop_csv_header();
  for (const auto& it : res.iterations) {
    csv += std::to_string(it.t) + ',' + std::to_string(it.rounds) + ',' +
           format_real(it.gradMapNormSq) + ',' + cell(it.distToXh) + ',' + cell(it.F) + ',' +
           cell(it.innerHGap) + '\n';
  }

  json manifest;
  manifest["version"] = FEDBILEVEL_VERSION;
  manifest["method"] = "two-loop";
  manifest["seed"] = cfg["seed"];
  manifest["rows"] = oc.T;
  manifest["lambda"] = oc.lambda;
  manifest["gamma"] = res.gamma;
  manifest["clamps"] = {{"gamma_clamped", res.gammaClamped},
                        {"gamma_cap", max_outer_step(oc.lambda, fOuter.smoothness(instance.dimension))}};
  manifest["t_star"] = res.tStar;
  manifest["grad_map_norm_sq_at_t_star"] = res.gradMapNormSqAtTStar;
  manifest["mean_grad_map_norm_sq"] = res.meanGradMapNormSq;
  manifest["total_inner_rounds"] = res.totalInnerRounds;
  if (oc.projection == ProjectionMode::Federated) {
    const ProblemInstance inner = with_outer(instance, LocalObjective::squared_distance(
                                                           ModelVector::Zero(instance.dimension)));
    ScheduleParams sp;
    sp.R = oc.T;
    sp.K = oc.inner.K;
    sp.S = oc.inner.S == 0 ? inner.client_count() : oc.inner.S;
    sp.p = oc.inner.p;
    ScheduleOverrides ov;
    ov.a = oc.inner.a;
    ov.b = oc.inner.b;
    ov.gammaGlobal = oc.inner.gammaGlobal;
    ov.enforceCaps = oc.inner.enforceCaps;
    const Schedule last = make_schedule(ScheduleRule::FedAvgStronglyConvex, inner, sp, ov);
    manifest["schedule"] = schedule_json(last);
    manifest["schedule"]["note"] = "inner schedule of the last outer iteration";
  } else {
    manifest["schedule"] = nullptr;
  }
  manifest["bounds"] = nullptr;

  RunArtifact art;
  art.csv = std::move(csv);
  art.manifest = manifest.dump(2) + "\n";
  return art;
}

}  // namespace

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string metrics_csv_header() {
  return "round,f_bar,h_bar,f_gap,h_gap,dist,err_eta,wallclock_ms\n";
}

std::string two_loop_csv_header() {
  return "t,R_t,grad_map_norm_sq,dist_to_xh,F,inner_h_gap\n";
}

ExperimentConfig parse_config(const std::string& jsonText) {
  json raw;
  try {
    raw = json::parse(jsonText);
  } catch (const json::parse_error& e) {
    throw ConfigError("<document>", std::string("not valid JSON: ") + e.what());
  }
  return ExperimentConfig{resolve(raw).dump()};
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("<file>", "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::vector<RunArtifact> run_experiment(const ExperimentConfig& config,
                                        const RunOptions& options) {
  const json cfg = json::parse(config.canonical);
  const ProblemInstance instance = build_problem(cfg["problem"]);
  const std::size_t workers =
      options.workers ? *options.workers : cfg["method"]["workers"].get<std::size_t>();
  require(workers >= 1, "run_experiment: workers must be >= 1");
  const std::string base = cfg["output"]["name"];

  std::vector<json> entries;
  if (cfg.contains("sweep")) {
    for (const auto& e : cfg["sweep"]["eta"]) entries.push_back(e);
  } else {
    entries.push_back(nullptr);
  }

  std::vector<RunArtifact> out;
  for (const json& entry : entries) {
    RunArtifact art;
    json hashed = hashed_part(cfg);
    if (!entry.is_null()) hashed["sweep_eta"] = entry;
    if (cfg["method"]["name"] == "two-loop") {
      art = run_two_loop_experiment(cfg, instance, workers);
    } else {
      std::optional<double> eta;
      if (entry.is_number()) eta = entry.get<double>();
      const Schedule schedule = resolve_schedule(cfg, instance, eta);
      art = run_federated_or_agm(cfg, instance, schedule, workers);
    }
    json manifest = json::parse(art.manifest);
    manifest["config_hash"] = hex64(fnv1a(hashed.dump()));
    manifest["config"] = hashed;
    art.name = entry.is_null() ? base : base + "_" + eta_suffix(entry);
    manifest["csv"] = art.name + ".csv";
    art.manifest = manifest.dump(2) + "\n";
    out.push_back(std::move(art));
  }
  return out;
}

std::vector<std::string> write_artifacts(const ExperimentConfig& config,
                                         const std::vector<RunArtifact>& runs) {
  const json cfg = json::parse(config.canonical);
  const std::filesystem::path dir = cfg["output"]["dir"].get<std::string>();
  std::filesystem::create_directories(dir);
  std::vector<std::string> paths;
  auto write = [&](const std::filesystem::path& p, const std::string& text) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw Error("cannot write " + p.string());
    f << text;
    if (!f) throw Error("write failed: " + p.string());
    paths.push_back(p.string());
  };
  for (const auto& r : runs) {
    write(dir / (r.name + ".csv"), r.csv);
    write(dir / (r.name + ".manifest.json"), r.manifest);
  }
  return paths;
}

std::string validate_experiment(const ExperimentConfig& config) {
  const json cfg = json::parse(config.canonical);
  const ProblemInstance instance = build_problem(cfg["problem"]);
  std::ostringstream out;
  out << "problem " << cfg["problem"]["kind"].get<std::string>() << ": n = "
      << instance.dimension << ", N = " << instance.client_count()
      << ", L_h = " << format_real(instance.constants.lH)
      << ", L_f = " << format_real(instance.constants.lF)
      << ", mu_f = " << format_real(instance.constants.muF) << "\n";
  out << "config hash " << hex64(fnv1a(hashed_part(cfg).dump())) << "\n";

  if (cfg["method"]["name"] == "two-loop") {
    const auto outer = outer_objective(cfg["problem"]["outer"], instance.dimension);
    const LocalObjective f = outer ? *outer : instance.clients.front().outer;
    const double lambda = cfg["two_loop"]["lambda"];
    const double cap = max_outer_step(lambda, f.smoothness(instance.dimension));
    const double gamma = cfg["two_loop"]["gamma"];
    out << "two-loop: lambda = " << format_real(lambda) << ", outer step cap = "
        << format_real(cap) << ", gamma = " << format_real(gamma == 0.0 ? cap : std::min(gamma, cap))
        << (gamma > cap ? " (clamped)" : "") << ", T = " << cfg["two_loop"]["T"].get<int>()
        << ", total inner rounds = "
        << cfg["two_loop"]["T"].get<long long>() * (cfg["two_loop"]["T"].get<long long>() + 1) / 2
        << "\n";
    return out.str();
  }

  std::vector<json> entries;
  if (cfg.contains("sweep")) {
    for (const auto& e : cfg["sweep"]["eta"]) entries.push_back(e);
  } else {
    entries.push_back(nullptr);
  }
  const bool oracle = cfg["metrics"]["oracle"];
  std::optional<BilevelReference> ref;
  if (oracle) {
    try {
      ref = bilevel_reference(instance);
    } catch (const Error&) {
    }
  }
  for (const json& entry : entries) {
    std::optional<double> eta;
    if (entry.is_number()) eta = entry.get<double>();
    const Schedule s = resolve_schedule(cfg, instance, eta);
    out << "run " << (entry.is_null() ? std::string("main") : eta_suffix(entry)) << "\n";
    out << "  rule " << to_string(s.rule) << ", eta = " << format_real(s.eta)
        << ", gamma_l = " << format_real(s.gammaLocal)
        << ", gamma_g = " << format_real(s.gammaGlobal)
        << ", theta = " << (std::isinf(s.theta) ? std::string("inf (last iterate)")
                                                 : format_real(s.theta))
        << ", R = " << s.R << ", K = " << s.K << ", S = " << s.S << "\n";
    out << "  clamped: " << (s.clamped ? "yes" : "no")
        << ", caps exceeded: " << (s.capsExceeded ? "yes" : "no") << "\n";
    for (const auto& c : s.caps) out << "  cap " << c.name << " = " << format_real(c.value) << "\n";
    for (const auto& w : s.warnings) out << "  warning: " << w << "\n";

    TheoremBoundInputs in;
    in.gradNormAtStar = ref ? ref->gradNormAtStar : 0.0;
    if (instance.sharpness) {
      in.alpha = instance.sharpness->alpha;
      in.kappa = instance.sharpness->kappa;
    }
    in.muF = instance.constants.muF;
    if (!ref && instance.sharpness && instance.sharpness->alpha) {
      out << "  warning: no bilevel reference; Case iii threshold not evaluated\n";
      in.alpha.reset();
    }
    const BoundReport r = theorem1_bounds(in, s.eta);
    out << "  Case i: applies\n";
    out << "  Case ii: " << (r.fGapLower ? "applies" : "not evaluated") << "\n";
    out << "  Case iii: " << (r.caseIIIApplicable ? "applies" : "inapplicable") << "\n";
    for (const auto& n : r.notes) out << "  warning: " << n << "\n";
  }
  return out.str();
}

}  // namespace fedbilevel
