#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <string>
#include <vector>

#include "tlvi/errors.hpp"
#include "tlvi/estimators.hpp"
#include "tlvi/sim.hpp"
#include "tlvi/verify.hpp"

namespace py = pybind11;
using namespace tlvi;

namespace {

using DoubleArray = py::array_t<double, py::array::c_style | py::array::forcecast>;

// same tokens the command line accepts
LearnerKind parse_learner(const std::string& s) {
    if (s == "ridge") return LearnerKind::Ridge;
    if (s == "knn") return LearnerKind::Knn;
    throw ConfigError("learner must be 'ridge' or 'knn', got '" + s + "'");
}

DensityKind parse_density(const std::string& s) {
    if (s == "gaussian-linear") return DensityKind::GaussianLinear;
    if (s == "partition") return DensityKind::Partition;
    throw ConfigError("density must be 'gaussian-linear' or 'partition', got '" + s + "'");
}

TolKind parse_tol(const std::string& s) {
    if (s == "tmle-standard") return TolKind::TmleStandard;
    if (s == "strict") return TolKind::Strict;
    throw ConfigError("tol must be 'tmle-standard' or 'strict', got '" + s + "'");
}

Dataset dataset_from_arrays(const DoubleArray& y, const DoubleArray& x,
                            const DoubleArray& z) {
    if (y.ndim() != 1 || x.ndim() != 1)
        throw ConfigError("y and x must be one-dimensional");
    if (z.ndim() != 2)
        throw ConfigError("z must be two-dimensional (rows by remaining covariates)");
    Dataset d;
    d.y.assign(y.data(), y.data() + y.shape(0));
    d.x.assign(x.data(), x.data() + x.shape(0));
    d.z.assign(z.data(), z.data() + z.shape(0) * z.shape(1));
    d.dz = static_cast<std::size_t>(z.shape(1));
    d.validate();
    return d;
}

py::dict report_to_dict(const EstimateReport& r) {
    py::dict out;
    out["target"] = target_name(r.target);
    out["estimator"] = estimator_name(r.estimator);
    out["point"] = r.point;
    out["se"] = r.se;
    out["ci_lo"] = r.ci_lo;
    out["ci_hi"] = r.ci_hi;
    out["alpha"] = r.alpha;
    out["n_inf"] = r.n_inf;
    out["k_n"] = r.k_n;
    out["converged"] = r.converged;
    out["degenerate"] = r.degenerate;
    out["seed"] = r.seed;
    out["scheme"] = r.scheme;
    if (!r.fold_reports.empty()) {
        py::list folds;
        for (const auto& f : r.fold_reports) folds.append(report_to_dict(f));
        out["fold_reports"] = folds;
    }
    return out;
}

EstimateOptions options_from_args(const std::string& target, const std::string& estimator,
                                  const std::string& learner, double penalty,
                                  std::size_t knn_k, const std::string& density,
                                  std::size_t min_leaf, double alpha, std::uint64_t seed,
                                  std::size_t support_draws, std::size_t max_iter,
                                  bool third_part_se, const std::string& tol,
                                  bool fresh_draws, std::size_t folds) {
    EstimateOptions opt;
    opt.target = parse_target(target);
    opt.estimator = parse_estimator(estimator);
    opt.learner.kind = parse_learner(learner);
    opt.learner.penalty = penalty;
    opt.learner.knn_k = knn_k;
    opt.density.kind = parse_density(density);
    opt.density.min_leaf = min_leaf;
    opt.alpha = alpha;
    opt.seed = seed;
    opt.support_draws = support_draws;
    opt.max_iter = max_iter;
    opt.use_I3 = third_part_se;
    opt.tol = parse_tol(tol);
    opt.fresh_draws = fresh_draws;
    opt.folds = folds;
    return opt;
}

py::dict row_to_dict(const RepRow& r) {
    py::dict out;
    out["rho"] = r.rho;
    out["estimator"] = estimator_name(r.estimator);
    out["rep"] = r.rep;
    out["data_seed"] = r.data_seed;
    out["truth"] = r.truth;
    out["point"] = r.point;
    out["se"] = r.se;
    out["ci_lo"] = r.ci_lo;
    out["ci_hi"] = r.ci_hi;
    out["bias"] = r.bias;
    out["covered"] = r.covered;
    out["k_n"] = r.k_n;
    out["converged"] = r.converged;
    out["failed"] = r.failed;
    out["error"] = r.error;
    return out;
}

py::dict aggregate_to_dict(const CellAggregate& a) {
    py::dict out;
    out["rho"] = a.rho;
    out["estimator"] = estimator_name(a.estimator);
    out["reps"] = a.reps;
    out["converged"] = a.converged;
    out["failed"] = a.failed;
    out["coverage"] = a.coverage;
    out["mean_bias"] = a.mean_bias;
    out["mean_ci_width"] = a.mean_width;
    out["mean_k_n"] = a.mean_k;
    return out;
}

} // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Targeted inference for the predictive importance of one covariate "
              "under a fixed fitted model";

    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const NumericError& e) {
            PyErr_SetString(PyExc_ArithmeticError, e.what());
        } catch (const Error& e) {
            PyErr_SetString(PyExc_ValueError, e.what());
        }
    });

    m.def(
        "estimate",
        [](const DoubleArray& y, const DoubleArray& x, const DoubleArray& z,
           const std::string& target, const std::string& estimator,
           const std::string& learner, double penalty, std::size_t knn_k,
           const std::string& density, std::size_t min_leaf, double alpha,
           std::uint64_t seed, std::size_t support_draws, std::size_t max_iter,
           bool third_part_se, const std::string& tol, bool fresh_draws,
           std::size_t folds) {
            Dataset d = dataset_from_arrays(y, x, z);
            EstimateOptions opt = options_from_args(
                target, estimator, learner, penalty, knn_k, density, min_leaf,
                alpha, seed, support_draws, max_iter, third_part_se, tol,
                fresh_draws, folds);
            EstimateReport rep;
            {
                py::gil_scoped_release release;
                rep = estimate(d, opt);
            }
            return report_to_dict(rep);
        },
        py::arg("y"), py::arg("x"), py::arg("z"), py::kw_only(),
        py::arg("target") = "condperm-importance", py::arg("estimator") = "tmle",
        py::arg("learner") = "ridge", py::arg("penalty") = 1e-6,
        py::arg("knn_k") = std::size_t{0}, py::arg("density") = "gaussian-linear",
        py::arg("min_leaf") = std::size_t{20}, py::arg("alpha") = 0.05,
        py::arg("seed") = std::uint64_t{1}, py::arg("support_draws") = std::size_t{256},
        py::arg("max_iter") = std::size_t{100}, py::arg("third_part_se") = true,
        py::arg("tol") = "tmle-standard", py::arg("fresh_draws") = false,
        py::arg("folds") = std::size_t{0},
        "Estimate a loss or importance target for the covariate in x, with y the "
        "response and z the remaining covariates (rows by columns). Returns the "
        "report as a dict; fold_reports appears when folds >= 2.");

    m.def(
        "generate",
        [](std::size_t n, std::size_t d, double rho, double beta, double noise_sd,
           std::uint64_t seed) {
            DgpSpec spec{n, d, rho, beta, noise_sd, seed};
            Dataset data = generate(spec);
            const std::vector<py::ssize_t> rows{static_cast<py::ssize_t>(data.n())};
            const std::vector<py::ssize_t> grid{static_cast<py::ssize_t>(data.n()),
                                                static_cast<py::ssize_t>(data.dz)};
            // the shape-plus-pointer constructor copies into a fresh array
            py::array_t<double> y(rows, data.y.data());
            py::array_t<double> x(rows, data.x.data());
            py::array_t<double> z(grid, data.z.data());
            py::dict out;
            out["y"] = y;
            out["x"] = x;
            out["z"] = z;
            return out;
        },
        py::kw_only(), py::arg("n") = std::size_t{500}, py::arg("d") = std::size_t{2},
        py::arg("rho") = 0.5, py::arg("beta") = 5.0, py::arg("noise_sd") = 1.0,
        py::arg("seed") = std::uint64_t{1},
        "Draw the equicorrelated linear-gaussian design: d covariates with common "
        "correlation rho, y = beta * x + noise. Returns {'y', 'x', 'z'} arrays.");

    m.def(
        "true_importance",
        [](const std::string& target, double rho, double beta, double noise_sd,
           std::size_t d) {
            DgpSpec spec;
            spec.d = d;
            spec.rho = rho;
            spec.beta = beta;
            spec.noise_sd = noise_sd;
            return true_importance(spec, parse_target(target));
        },
        py::arg("target"), py::kw_only(), py::arg("rho") = 0.5, py::arg("beta") = 5.0,
        py::arg("noise_sd") = 1.0, py::arg("d") = std::size_t{2},
        "Closed-form importance value under the two-covariate design.");

    m.def(
        "simulate",
        [](const std::vector<double>& grid, std::size_t reps, std::size_t n,
           std::size_t d, double beta, double noise_sd, const std::string& target,
           const std::vector<std::string>& estimators, std::uint64_t seed,
           std::size_t threads, const std::string& learner, double penalty,
           const std::string& density, std::size_t support_draws, double alpha,
           std::size_t max_iter, const std::string& tol, bool fresh_draws) {
            ExperimentConfig cfg;
            cfg.grid = grid;
            cfg.reps = reps;
            cfg.n = n;
            cfg.d = d;
            cfg.beta = beta;
            cfg.noise_sd = noise_sd;
            cfg.target = parse_target(target);
            cfg.estimators.clear();
            for (const auto& e : estimators)
                cfg.estimators.push_back(parse_estimator(e));
            cfg.seed = seed;
            cfg.threads = threads;
            cfg.base.learner.kind = parse_learner(learner);
            cfg.base.learner.penalty = penalty;
            cfg.base.density.kind = parse_density(density);
            cfg.base.support_draws = support_draws;
            cfg.base.alpha = alpha;
            cfg.base.max_iter = max_iter;
            cfg.base.tol = parse_tol(tol);
            cfg.base.fresh_draws = fresh_draws;
            ExperimentResult res;
            {
                py::gil_scoped_release release;
                res = run_experiment(cfg);
            }
            py::list rows, aggregates;
            for (const auto& r : res.rows) rows.append(row_to_dict(r));
            for (const auto& a : res.aggregates) aggregates.append(aggregate_to_dict(a));
            py::dict out;
            out["rows"] = rows;
            out["aggregates"] = aggregates;
            return out;
        },
        py::kw_only(), py::arg("grid") = std::vector<double>{0.1, 0.5, 0.9},
        py::arg("reps") = std::size_t{40}, py::arg("n") = std::size_t{500},
        py::arg("d") = std::size_t{2}, py::arg("beta") = 5.0,
        py::arg("noise_sd") = 1.0, py::arg("target") = "condperm-importance",
        py::arg("estimators") = std::vector<std::string>{"onestep", "tmle"},
        py::arg("seed") = std::uint64_t{1}, py::arg("threads") = std::size_t{1},
        py::arg("learner") = "ridge", py::arg("penalty") = 1e-6,
        py::arg("density") = "gaussian-linear",
        py::arg("support_draws") = std::size_t{256}, py::arg("alpha") = 0.05,
        py::arg("max_iter") = std::size_t{100}, py::arg("tol") = "tmle-standard",
        py::arg("fresh_draws") = false,
        "Run the replication study over a correlation grid. Returns per-rep rows "
        "and per-cell aggregates as lists of dicts; results are byte-identical "
        "for any thread count.");

    m.def(
        "check_eif",
        [](std::size_t trials, std::uint64_t seed) {
            std::vector<EifCheckRow> rows;
            {
                py::gil_scoped_release release;
                rows = run_eif_check(trials, seed);
            }
            py::list out;
            for (const auto& r : rows) {
                py::dict d;
                d["kind"] = estimand_name(r.kind);
                d["trials"] = r.trials;
                d["max_rel_err"] = r.max_rel_err;
                d["max_mean_abs"] = r.max_mean_abs;
                d["tol"] = r.tol;
                d["pass"] = r.pass;
                out.append(d);
            }
            return out;
        },
        py::kw_only(), py::arg("trials") = std::size_t{100},
        py::arg("seed") = std::uint64_t{1},
        "Certify each influence kernel against finite-difference perturbations of "
        "random discrete joints. Returns one dict per estimand kind.");
}
