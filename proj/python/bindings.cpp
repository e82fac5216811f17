#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <memory>
#include <sstream>

#include "ergodic_limits/config.hpp"
#include "ergodic_limits/decomposition.hpp"
#include "ergodic_limits/errors.hpp"
#include "ergodic_limits/homogenization.hpp"
#include "ergodic_limits/limit_law_harness.hpp"
#include "ergodic_limits/transfer_operator.hpp"

namespace py = pybind11;
using namespace ergodic_limits;

namespace {

McConfig make_mc(std::int64_t n_orbit, std::int64_t n_samples, std::int64_t burn_in, std::uint64_t seed,
                 int threads) {
    McConfig c;
    c.n_orbit = n_orbit;
    c.n_samples = n_samples;
    c.burn_in = burn_in;
    c.seed = seed;
    c.threads = threads;
    return c;
}

CovarianceMethod method_from(const std::string& s) {
    if (s == "direct") return CovarianceMethod::Direct;
    if (s == "green-kubo") return CovarianceMethod::GreenKubo;
    if (s == "martingale") return CovarianceMethod::Martingale;
    throw InvalidArgument("unknown covariance method '" + s + "'");
}

/// Decomposition bundle that keeps the operator alive for tower queries.
struct DecompositionResult {
    std::shared_ptr<InducedSystem> sys;
    std::shared_ptr<TransferApproximation> op;
    std::shared_ptr<Decomposition> dec;
    std::shared_ptr<TowerFunction> tower;
};

DecompositionResult decompose(const MapDescriptor& map, const Observable& obs, int n, double tol, int tau_max) {
    DecompositionResult r;
    r.sys = std::make_shared<InducedSystem>(build_induced(map, tau_max));
    r.op = std::make_shared<TransferApproximation>(build_ulam(*r.sys, n));
    r.dec = std::make_shared<Decomposition>(primary_decomposition(*r.op, induced_field(*r.sys, map, obs, *r.op), tol));
    r.tower = std::make_shared<TowerFunction>(lift_to_tower(*r.dec, *r.sys, map, obs));
    return r;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Limit laws for nonuniformly expanding interval maps";

    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
    py::register_exception<InvalidArgument>(m, "InvalidArgument", PyExc_ValueError);
    py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
    py::register_exception<TruncationError>(m, "TruncationError", PyExc_RuntimeError);
    py::register_exception<ConvergenceError>(m, "ConvergenceError", PyExc_RuntimeError);
    py::register_exception<InsufficientData>(m, "InsufficientData", PyExc_RuntimeError);
    py::register_exception<DegenerateVariance>(m, "DegenerateVariance", PyExc_RuntimeError);
    py::register_exception<BlowupError>(m, "BlowupError", PyExc_RuntimeError);

    py::class_<MapDescriptor>(m, "Map")
        .def_static("doubling", &MapDescriptor::doubling, py::arg("lam") = 2)
        .def_static("lsv", &MapDescriptor::lsv, py::arg("gamma"))
        .def_static("quadratic", &MapDescriptor::quadratic, py::arg("a"))
        .def_property_readonly("name", &MapDescriptor::name)
        .def_property_readonly("parameter", &MapDescriptor::parameter)
        .def_property_readonly("domain", [](const MapDescriptor& d) { return py::make_tuple(d.domain().lo, d.domain().hi); })
        .def("__call__", [](const MapDescriptor& d, double x) { return evaluate(d, x); })
        .def("orbit", [](const MapDescriptor& d, double x0, std::int64_t n) { return orbit(d, x0, n); })
        .def("__repr__", &MapDescriptor::name);

    py::class_<Observable>(m, "Observable")
        .def_static("cos2pi", &Observable::cos2pi, py::arg("k") = 1.0)
        .def_static(
            "terms",
            [](const std::vector<std::vector<std::tuple<std::string, double, double>>>& comps) {
                std::vector<std::vector<Term>> out;
                for (const auto& c : comps) {
                    auto& row = out.emplace_back();
                    for (const auto& [fn, k, coef] : c) {
                        BasisFunction f = BasisFunction::Cos;
                        if (fn == "sin") f = BasisFunction::Sin;
                        else if (fn == "power") f = BasisFunction::Power;
                        else if (fn != "cos") throw InvalidArgument("unknown basis function '" + fn + "'");
                        row.push_back(Term{f, k, coef});
                    }
                }
                return Observable::closed_form(std::move(out));
            },
            py::arg("components"), "Components as lists of (fn, k, coef) with fn in cos, sin, power.")
        .def_static("bump_on_y", &Observable::bump_on_y, py::arg("center"), py::arg("width"), py::arg("eta"),
                    py::arg("offset") = 0.0)
        .def_property_readonly("dimension", &Observable::dimension)
        .def_property_readonly("centering_offset", &Observable::centering_offset)
        .def("__call__", [](const Observable& o, double x) {
            std::vector<double> out(static_cast<std::size_t>(o.dimension()));
            o.evaluate(x, out.data());
            return out;
        });

    m.def(
        "center",
        [](const Observable& obs, const MapDescriptor& map, std::int64_t n_center, std::uint64_t seed) {
            CenteringOptions o;
            o.n_center = n_center;
            o.seed = seed;
            py::gil_scoped_release release;
            return center_observable(obs, map, o);
        },
        py::arg("obs"), py::arg("map"), py::arg("n_center") = 10'000'000, py::arg("seed") = 0x5eed);

    py::class_<DecompositionResult>(m, "Decomposition")
        .def_property_readonly("grid", [](const DecompositionResult& r) { return r.op->grid.midpoints(); })
        .def_property_readonly("density", [](const DecompositionResult& r) { return r.op->invariant_density; })
        .def_property_readonly("phi", [](const DecompositionResult& r) { return r.dec->phi_prime; })
        .def_property_readonly("chi", [](const DecompositionResult& r) { return r.dec->chi_prime; })
        .def_property_readonly("m", [](const DecompositionResult& r) { return r.dec->m_prime; })
        .def_property_readonly("K", [](const DecompositionResult& r) { return r.dec->K; })
        .def_property_readonly("kernel_residual", [](const DecompositionResult& r) { return r.dec->kernel_residual; })
        .def_property_readonly("tail_bound", [](const DecompositionResult& r) { return r.dec->tail_bound; })
        .def_property_readonly("tau_mean", [](const DecompositionResult& r) { return r.dec->tau_mean; })
        .def("sigma", [](const DecompositionResult& r) { return martingale_covariance(*r.op, *r.dec); })
        .def("identity_error", [](const DecompositionResult& r, int points, std::uint64_t seed) {
            return tower_identity_error(*r.tower, points, seed);
        }, py::arg("points") = 10'000, py::arg("seed") = 1);

    m.def("decompose", &decompose, py::arg("map"), py::arg("obs"), py::arg("N") = 4096, py::arg("tol") = 1e-10,
          py::arg("tau_max") = 500, py::call_guard<py::gil_scoped_release>());

    m.def(
        "birkhoff_samples",
        [](const MapDescriptor& map, const Observable& obs, std::int64_t n_orbit, std::int64_t n_samples,
           std::int64_t burn_in, std::uint64_t seed, int threads) {
            const McConfig c = make_mc(n_orbit, n_samples, burn_in, seed, threads);
            py::gil_scoped_release release;
            return birkhoff_samples(map, obs, c);
        },
        py::arg("map"), py::arg("obs"), py::arg("n_orbit") = 10'000, py::arg("n_samples") = 10'000,
        py::arg("burn_in") = 1000, py::arg("seed") = 1, py::arg("threads") = 0);

    m.def(
        "covariance",
        [](const MapDescriptor& map, const Observable& obs, const std::string& method, std::int64_t n_orbit,
           std::int64_t n_samples, std::uint64_t seed, std::int64_t gk_length, int N, int threads) {
            const McConfig c = make_mc(n_orbit, n_samples, 1000, seed, threads);
            CovarianceOptions o;
            o.gk_length = gk_length;
            o.grid_cells = N;
            const CovarianceMethod meth = method_from(method);
            py::gil_scoped_release release;
            const CovarianceEstimate e = covariance(map, obs, c, meth, o);
            py::gil_scoped_acquire acquire;
            py::dict d;
            d["sigma"] = e.sigma;
            d["std_err"] = e.std_err;
            d["method"] = method;
            d["n_used"] = e.n_used;
            d["gk_lags"] = e.gk_lags;
            return d;
        },
        py::arg("map"), py::arg("obs"), py::arg("method") = "martingale", py::arg("n_orbit") = 10'000,
        py::arg("n_samples") = 10'000, py::arg("seed") = 1, py::arg("gk_length") = 10'000'000, py::arg("N") = 4096,
        py::arg("threads") = 0);

    m.def(
        "moment_scaling",
        [](const MapDescriptor& map, const Observable& obs, double p, const std::vector<std::int64_t>& ladder,
           std::int64_t n_samples, std::uint64_t seed) {
            const McConfig c = make_mc(1, n_samples, 1000, seed, 0);
            py::gil_scoped_release release;
            const MomentReport r = moment_scaling(map, obs, c, p, ladder);
            py::gil_scoped_acquire acquire;
            py::dict d;
            d["slope"] = r.slope;
            d["n"] = r.n;
            d["value"] = r.value;
            return d;
        },
        py::arg("map"), py::arg("obs"), py::arg("p") = 2.0,
        py::arg("ladder") = std::vector<std::int64_t>{100, 316, 1000, 3162, 10'000}, py::arg("n_samples") = 2000,
        py::arg("seed") = 1);

    m.def(
        "wip_test",
        [](const MapDescriptor& map, const Observable& obs, const Eigen::MatrixXd& sigma,
           const std::vector<double>& times, std::int64_t n, std::int64_t n_samples, std::uint64_t seed) {
            const McConfig c = make_mc(n, n_samples, 1000, seed, 0);
            CovarianceEstimate s;
            s.sigma = sigma;
            s.std_err = Eigen::MatrixXd::Zero(sigma.rows(), sigma.cols());
            py::gil_scoped_release release;
            const WipReport r = wip_test(map, obs, c, s, times);
            py::gil_scoped_acquire acquire;
            py::list per;
            for (const auto& t : r.per_time) {
                py::dict e;
                e["t"] = t.time;
                e["functional"] = t.functional;
                e["ks_stat"] = t.ks_statistic;
                e["pvalue"] = t.pvalue;
                e["variance"] = t.variance;
                per.append(e);
            }
            py::dict d;
            d["ks_statistic"] = r.ks_statistic;
            d["ks_pvalue"] = r.ks_pvalue;
            d["per_time"] = per;
            d["variance_slope"] = r.variance_slope;
            d["sigma2"] = r.sigma2;
            d["kurtosis"] = r.kurtosis;
            d["increments_independent_pvalue"] = r.increments_independent_pvalue;
            return d;
        },
        py::arg("map"), py::arg("obs"), py::arg("sigma"), py::arg("times") = std::vector<double>{0.25, 0.5, 1.0},
        py::arg("n") = 10'000, py::arg("n_samples") = 10'000, py::arg("seed") = 1);

    m.def(
        "simulate_fast_slow",
        [](const Eigen::MatrixXd& A, const Eigen::VectorXd& c, const Eigen::VectorXd& xi, const MapDescriptor& fast,
           const Observable& v, const std::string& h, double eps, double T, std::int64_t n_samples,
           std::uint64_t seed, const std::vector<double>& record_times) {
            FastSlowSpec s;
            s.d = static_cast<int>(xi.size());
            s.a = SlowDrift::linear(A, c);
            s.h = h == "cubic" ? Diffeo::cubic(s.d) : Diffeo::identity(s.d);
            if (h != "cubic" && h != "identity") throw InvalidArgument("h must be 'identity' or 'cubic'");
            s.v = v;
            s.xi = xi;
            s.fast_map = fast;
            const McConfig cfg = make_mc(1, n_samples, 1000, seed, 0);
            py::gil_scoped_release release;
            const PathEnsemble p = simulate_fast_slow(s, eps, T, cfg, record_times);
            py::gil_scoped_acquire acquire;
            return py::make_tuple(p.times, p.paths);
        },
        py::arg("A"), py::arg("c"), py::arg("xi"), py::arg("fast_map"), py::arg("v"), py::arg("h") = "identity",
        py::arg("eps") = 0.05, py::arg("T") = 1.0, py::arg("n_samples") = 1000, py::arg("seed") = 1,
        py::arg("record_times") = std::vector<double>{},
        "Paths of x <- x + eps^2 (A x + c) + eps b(x) v(y); returns (times, paths) with paths[s, k*d + c].");

    m.def("parse_config", [](const std::string& text) { return serialize_config(parse_config(text)); },
          py::arg("text"), "Validates a config and returns it with defaults filled in.");

    m.def(
        "run_config",
        [](const std::string& text, bool quiet) {
            const ExperimentConfig cfg = parse_config(text);
            RunOptions o;
            o.quiet = quiet;
            o.source_text = text;
            std::ostringstream log;
            int code = 0;
            {
                py::gil_scoped_release release;
                code = run_experiment(cfg, o, log);
            }
            return py::make_tuple(code, log.str());
        },
        py::arg("text"), py::arg("quiet") = true, "Runs an experiment config; returns (exit_code, log).");
}
