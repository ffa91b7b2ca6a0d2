#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "fedbilevel/centralized.hpp"
#include "fedbilevel/experiment.hpp"
#include "fedbilevel/fedsim.hpp"
#include "fedbilevel/nonconvex.hpp"
#include "fedbilevel/oracles.hpp"
#include "fedbilevel/problems.hpp"
#include "fedbilevel/prox.hpp"
#include "fedbilevel/urs.hpp"

namespace py = pybind11;
using namespace fedbilevel;

namespace {

py::dict metrics_dict(const Metrics& m) {
  py::dict d;
  d["f"] = m.f;
  d["h"] = m.h;
  d["f_gap"] = m.fGap ? py::cast(*m.fGap) : py::none();
  d["h_gap"] = m.hGap ? py::cast(*m.hGap) : py::none();
  d["dist"] = m.dist ? py::cast(*m.dist) : py::none();
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "fedbilevel core bindings";
  m.attr("__version__") = FEDBILEVEL_VERSION;

  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<PreconditionError>(m, "PreconditionError", PyExc_ValueError);
  py::register_exception<DivergenceError>(m, "DivergenceError", PyExc_ArithmeticError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

  // prox
  m.def("soft_threshold", &prox::soft_threshold, py::arg("x"), py::arg("mu"));
  m.def("huber", &prox::huber, py::arg("t"), py::arg("mu"));
  m.def("lsp_value", &prox::lsp_value, py::arg("x"), py::arg("epsilon"));
  m.def("prox_lsp", &prox::prox_lsp, py::arg("x"), py::arg("mu"), py::arg("epsilon"));
  m.def("moreau_l1", [](const ModelVector& x, double mu) {
    const prox::Envelope e = prox::moreau_l1(x, mu);
    return py::make_tuple(e.value, e.gradient);
  }, py::arg("x"), py::arg("mu"));
  m.def("moreau_lsp", [](const ModelVector& x, double mu, double eps) {
    const prox::Envelope e = prox::moreau_lsp(x, mu, eps);
    return py::make_tuple(e.value, e.gradient);
  }, py::arg("x"), py::arg("mu"), py::arg("epsilon"));

  // problems
  py::class_<LocalObjective>(m, "LocalObjective")
      .def_static("squared_distance", &LocalObjective::squared_distance, py::arg("center"))
      .def_static("zero", &LocalObjective::zero)
      .def_static("moreau_l1", &LocalObjective::moreau_l1, py::arg("mu"))
      .def_static("moreau_lsp", &LocalObjective::moreau_lsp, py::arg("mu"), py::arg("epsilon"))
      .def("value", &LocalObjective::value, py::arg("x"))
      .def("gradient", &LocalObjective::gradient, py::arg("x"));

  py::class_<ProblemInstance>(m, "ProblemInstance")
      .def_readonly("name", &ProblemInstance::name)
      .def_readonly("dimension", &ProblemInstance::dimension)
      .def_property_readonly("client_count", &ProblemInstance::client_count)
      .def_property_readonly("mu_f", [](const ProblemInstance& p) { return p.constants.muF; })
      .def_property_readonly("l_h", [](const ProblemInstance& p) { return p.constants.lH; })
      .def_property_readonly("l_f", [](const ProblemInstance& p) { return p.constants.lF; })
      .def_property_readonly("affine_solution_set", [](const ProblemInstance& p) -> py::object {
        if (!p.groundTruth || !p.groundTruth->affine) return py::none();
        return py::make_tuple(p.groundTruth->affine->a, p.groundTruth->affine->b);
      })
      .def("outer_value", &ProblemInstance::outer_value, py::arg("x"))
      .def("inner_value", &ProblemInstance::inner_value, py::arg("x"))
      .def("outer_gradient", &ProblemInstance::outer_gradient, py::arg("x"))
      .def("inner_gradient", &ProblemInstance::inner_gradient, py::arg("x"));

  m.def("make_overparam_ls",
        [](Eigen::Index n, Eigen::Index mRows, std::size_t clients, std::uint64_t seed,
           double cmin, double cmax, double norm) {
          return make_overparam_ls(n, mRows, clients, seed, OverparamOptions{cmin, cmax, norm});
        },
        py::arg("n"), py::arg("m"), py::arg("clients"), py::arg("seed"),
        py::arg("curvature_min") = OverparamOptions{}.curvatureMin,
        py::arg("curvature_max") = OverparamOptions{}.curvatureMax,
        py::arg("solution_norm") = OverparamOptions{}.solutionNorm);
  m.def("make_affine_ls_instance", &make_affine_ls_instance, py::arg("a"), py::arg("b"),
        py::arg("clients"));
  m.def("make_heterogeneous_quadratics", &make_heterogeneous_quadratics,
        py::arg("curvatures"), py::arg("centers"), py::arg("samples"), py::arg("seed"));
  m.def("make_weak_sharp_l2",
        [](std::uint64_t seed, Eigen::Index rows, Eigen::Index cols, std::size_t clients) {
          WeakSharpOptions o;
          o.rows = rows;
          o.cols = cols;
          o.clients = clients;
          return make_weak_sharp_instance(WeakSharpKind::L2Residual, seed, o);
        },
        py::arg("seed"), py::arg("rows") = 2, py::arg("cols") = 3, py::arg("clients") = 2);
  m.def("with_outer", &with_outer, py::arg("instance"), py::arg("outer"));

  // oracles
  m.def("pseudo_inverse", &pseudo_inverse, py::arg("a"));
  m.def("affine_projection", &affine_projection, py::arg("a"), py::arg("b"), py::arg("y"));
  m.def("min_norm_reference", [](const ProblemInstance& p) {
    const BilevelReference r = bilevel_reference(p, OuterKind::MinNorm);
    return py::make_tuple(r.xStar, r.fStar, r.hStar);
  }, py::arg("instance"));
  m.def("metrics", [](const ProblemInstance& p, const ModelVector& x) {
    std::optional<BilevelReference> ref;
    try {
      ref = bilevel_reference(p);
    } catch (const Error&) {
    }
    return metrics_dict(metrics(p, x, ref ? &*ref : nullptr));
  }, py::arg("instance"), py::arg("x"));

  // schedules
  py::class_<Schedule>(m, "Schedule")
      .def_property_readonly("rule", [](const Schedule& s) { return std::string(to_string(s.rule)); })
      .def_readonly("eta", &Schedule::eta)
      .def_readonly("gamma_local", &Schedule::gammaLocal)
      .def_readonly("gamma_global", &Schedule::gammaGlobal)
      .def_readonly("gamma_tilde", &Schedule::gammaTilde)
      .def_readonly("theta", &Schedule::theta)
      .def_readonly("R", &Schedule::R)
      .def_readonly("K", &Schedule::K)
      .def_readonly("S", &Schedule::S)
      .def_readonly("clamped", &Schedule::clamped)
      .def_readonly("caps_exceeded", &Schedule::capsExceeded)
      .def_readonly("warnings", &Schedule::warnings);

  m.def("make_schedule",
        [](const std::string& rule, const ProblemInstance& p, int R, int K, std::size_t S,
           double pp, std::optional<double> eta, std::optional<double> gammaLocal,
           std::optional<double> gammaGlobal, bool enforceCaps) {
          ScheduleParams sp;
          sp.R = R;
          sp.K = K;
          sp.S = S == 0 ? p.client_count() : S;
          sp.p = pp;
          ScheduleOverrides ov;
          ov.eta = eta;
          ov.gammaLocal = gammaLocal;
          ov.gammaGlobal = gammaGlobal;
          ov.enforceCaps = enforceCaps;
          return make_schedule(parse_schedule_rule(rule), p, sp, ov);
        },
        py::arg("rule"), py::arg("instance"), py::arg("R"), py::arg("K") = 1,
        py::arg("S") = 0, py::arg("p") = 2.0, py::arg("eta") = py::none(),
        py::arg("gamma_local") = py::none(), py::arg("gamma_global") = py::none(),
        py::arg("enforce_caps") = true);

  // federated and centralized runs
  m.def("run_training",
        [](const ProblemInstance& p, const Schedule& s, const std::string& method,
           std::uint64_t seed, bool stochastic, std::size_t batch, std::size_t workers) {
          TrainingOptions t;
          t.method = method == "scaffold" ? Method::Scaffold : Method::FedAvg;
          require(method == "scaffold" || method == "fedavg",
                  "method must be 'fedavg' or 'scaffold'");
          t.seed = seed;
          t.oracle.stochastic = stochastic;
          t.oracle.batch = batch;
          t.workers = workers;
          py::gil_scoped_release release;
          const TrainingResult r = run_training(p, s, t);
          return std::make_pair(r.xBar, r.xFinal);
        },
        py::arg("instance"), py::arg("schedule"), py::arg("method") = "fedavg",
        py::arg("seed") = 0, py::arg("stochastic") = false, py::arg("batch") = 1,
        py::arg("workers") = 1,
        "Returns (x_bar, x_final).");
  m.def("gradient_descent",
        [](const ProblemInstance& p, double eta, const ModelVector& x0, double step,
           int iterations) {
          return gradient_descent(RegularizedObjective(p, eta), x0, step, iterations);
        },
        py::arg("instance"), py::arg("eta"), py::arg("x0"), py::arg("step"),
        py::arg("iterations"));
  m.def("solve_regularized", [](const ProblemInstance& p, double eta) {
    const RegularizedOptimum o = solve_regularized(RegularizedObjective(p, eta));
    return py::make_tuple(o.x, o.value);
  }, py::arg("instance"), py::arg("eta"));
  m.def("measure_err_eta", [](const ProblemInstance& p, double eta, const ModelVector& x) {
    return measure_err_eta(RegularizedObjective(p, eta), x);
  }, py::arg("instance"), py::arg("eta"), py::arg("x"));
  m.def("run_agm",
        [](const ProblemInstance& p, double eta, int iterations, bool strong) {
          const RegularizedObjective obj(p, eta);
          const ModelVector x0 = ModelVector::Zero(p.dimension);
          const AgmResult r = strong ? run_agm_strongly_convex(obj, x0, iterations)
                                     : run_agm_convex(obj, x0, iterations);
          return r.xHat;
        },
        py::arg("instance"), py::arg("eta"), py::arg("iterations"), py::arg("strongly_convex") = false);

  m.def("run_two_loop",
        [](const ProblemInstance& p, const LocalObjective& f, double lambda, int T, int K,
           std::uint64_t seed, bool stochastic) {
          OuterConfig c;
          c.lambda = lambda;
          c.T = T;
          c.inner.K = K;
          c.inner.oracle.stochastic = stochastic;
          const TwoLoopResult r = run_two_loop(p, f, c, seed);
          py::dict d;
          d["mean_grad_map_norm_sq"] = r.meanGradMapNormSq;
          d["t_star"] = r.tStar;
          d["total_inner_rounds"] = r.totalInnerRounds;
          d["gamma"] = r.gamma;
          std::vector<double> dist;
          for (const auto& it : r.iterations)
            dist.push_back(it.distToXh ? *it.distToXh : std::numeric_limits<double>::quiet_NaN());
          d["dist_to_xh"] = dist;
          d["y"] = r.trajectory.back();
          return d;
        },
        py::arg("instance"), py::arg("f_outer"), py::arg("lambda_") = 0.5, py::arg("T") = 10,
        py::arg("K") = 1, py::arg("seed") = 0, py::arg("stochastic") = false);

  // experiment runner
  m.def("run_config", [](const std::string& jsonText, std::optional<std::size_t> workers) {
    RunOptions o;
    o.workers = workers;
    std::vector<py::dict> out;
    for (const auto& r : run_experiment(parse_config(jsonText), o)) {
      py::dict d;
      d["name"] = r.name;
      d["csv"] = r.csv;
      d["manifest"] = r.manifest;
      out.push_back(d);
    }
    return out;
  }, py::arg("config_json"), py::arg("workers") = py::none(),
     "Runs a JSON experiment config in memory; returns one dict per run.");
  m.def("validate_config", [](const std::string& jsonText) {
    return validate_experiment(parse_config(jsonText));
  }, py::arg("config_json"));
}
