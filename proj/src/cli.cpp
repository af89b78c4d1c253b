#include "tlvi/cli.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tlvi/data.hpp"
#include "tlvi/errors.hpp"
#include "tlvi/estimators.hpp"
#include "tlvi/sim.hpp"
#include "tlvi/verify.hpp"

namespace tlvi {

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitWarning = 2;

LearnerKind parse_learner(const std::string& s) {
    if (s == "ridge") return LearnerKind::Ridge;
    if (s == "knn") return LearnerKind::Knn;
    throw ConfigError("cli: unknown learner '" + s + "' (ridge | knn)");
}

DensityKind parse_density(const std::string& s) {
    if (s == "gaussian-linear") return DensityKind::GaussianLinear;
    if (s == "partition") return DensityKind::Partition;
    throw ConfigError("cli: unknown density '" + s + "' (gaussian-linear | partition)");
}

TolKind parse_tol(const std::string& s) {
    if (s == "tmle-standard") return TolKind::TmleStandard;
    if (s == "strict") return TolKind::Strict;
    throw ConfigError("cli: unknown tolerance '" + s + "' (tmle-standard | strict)");
}

Estimand parse_check_kind(const std::string& s) {
    if (s == "refloss" || s == "ref-loss") return Estimand::RefLoss;
    if (s == "condperm" || s == "condperm-loss") return Estimand::CondPermLoss;
    if (s == "loco" || s == "loco-loss") return Estimand::LocoLoss;
    if (s == "margperm" || s == "margperm-loss") return Estimand::MargPermLoss;
    throw ConfigError("cli: unknown kind '" + s +
                      "' (refloss | condperm | loco | margperm)");
}

void write_text(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cli: cannot write '" + path + "'");
    out << content;
    if (!out) throw DataError("cli: short write to '" + path + "'");
}

std::string commented(const std::vector<std::string>& lines) {
    std::string out;
    for (const std::string& l : lines) {
        out += "# ";
        out += l;
        out += '\n';
    }
    return out;
}

// shared learner/density/estimation knobs
struct ModelFlags {
    std::string learner = "ridge";
    double penalty = 1e-6;
    std::size_t knn_k = 10;
    std::string density = "gaussian-linear";
    std::size_t min_leaf = 20;
    std::size_t support_draws = 256;
    std::size_t max_iter = 100;
    std::string tol = "tmle-standard";
    double alpha = 0.05;

    void attach(CLI::App& cmd) {
        cmd.add_option("--learner", learner, "regression learner: ridge | knn")
            ->envname("TLVI_LEARNER")
            ->capture_default_str();
        cmd.add_option("--ridge-penalty", penalty, "ridge l2 penalty")
            ->capture_default_str();
        cmd.add_option("--knn-k", knn_k, "neighbor count for the knn learner")
            ->capture_default_str();
        cmd.add_option("--density", density,
                       "conditional density model: gaussian-linear | partition")
            ->envname("TLVI_DENSITY")
            ->capture_default_str();
        cmd.add_option("--min-leaf", min_leaf, "partition density minimum leaf size")
            ->capture_default_str();
        cmd.add_option("--support-draws", support_draws,
                       "synthetic draws per observation in the update support")
            ->capture_default_str();
        cmd.add_option("--max-iter", max_iter, "iteration cap for the update loop")
            ->capture_default_str();
        cmd.add_option("--tol", tol, "stopping rule: tmle-standard | strict")
            ->capture_default_str();
        cmd.add_option("--alpha", alpha, "two-sided confidence level is 1 - alpha")
            ->capture_default_str();
    }

    void fill(EstimateOptions& opt) const {
        opt.learner.kind = parse_learner(learner);
        opt.learner.penalty = penalty;
        opt.learner.knn_k = knn_k;
        opt.density.kind = parse_density(density);
        opt.density.min_leaf = min_leaf;
        opt.support_draws = support_draws;
        opt.max_iter = max_iter;
        opt.tol = parse_tol(tol);
        opt.alpha = alpha;
    }

    std::vector<std::string> echo() const {
        std::vector<std::string> out;
        std::string l = "learner=" + learner;
        if (learner == "ridge") l += " ridge_penalty=" + format_double(penalty);
        if (learner == "knn") l += " knn_k=" + std::to_string(knn_k);
        std::string d = "density=" + density;
        if (density == "partition") d += " min_leaf=" + std::to_string(min_leaf);
        out.push_back(l + " " + d);
        out.push_back("support_draws=" + std::to_string(support_draws) +
                      " max_iter=" + std::to_string(max_iter) + " tol=" + tol +
                      " alpha=" + format_double(alpha));
        return out;
    }
};

int cmd_estimate(const std::string& data_path, const std::string& response_col,
                 const std::string& interest_col, const std::string& target,
                 const std::string& estimator, const ModelFlags& model,
                 std::uint64_t seed, std::size_t folds, bool fresh, bool no_third,
                 const std::string& out_path) {
    EstimateOptions opt;
    opt.target = parse_target(target);
    opt.estimator = parse_estimator(estimator);
    model.fill(opt);
    opt.seed = seed;
    opt.folds = folds;
    opt.fresh_draws = fresh;
    opt.use_I3 = !no_third;

    const Dataset data = load_csv(data_path, response_col, interest_col);
    const EstimateReport report = estimate(data, opt);

    std::cout << report.key_value();

    if (!out_path.empty()) {
        std::vector<std::string> lines;
        lines.push_back("command=estimate");
        lines.push_back("data=" + data_path + " response_col=" + response_col +
                        " interest_col=" + interest_col);
        lines.push_back("estimand=" + target + " estimator=" + estimator);
        for (const std::string& l : model.echo()) lines.push_back(l);
        lines.push_back("folds=" + std::to_string(folds) +
                        " fresh_draws=" + std::to_string(fresh ? 1 : 0) +
                        " third_part=" + std::to_string(no_third ? 0 : 1));
        lines.push_back("seed=" + std::to_string(seed));
        write_text(out_path, commented(lines) + EstimateReport::csv_header() + "\n" +
                                 report.csv_row() + "\n");
    }

    if (!report.converged || report.degenerate) return kExitWarning;
    return kExitOk;
}

int cmd_simulate(const ExperimentConfig& cfg, const std::string& prefix, bool plot) {
    const ExperimentResult res = run_experiment(cfg);

    std::vector<std::string> lines;
    lines.push_back("command=simulate");
    for (const std::string& l : config_echo_lines(cfg)) lines.push_back(l);

    const std::string rows_path = prefix + "_rows.csv";
    const std::string agg_path = prefix + "_aggregates.csv";
    write_text(rows_path, rows_csv(res, lines));
    write_text(agg_path, aggregates_csv(res, lines));
    if (plot) {
        write_text(prefix + "_plot.svg",
                   "<!--\n" + commented(lines) + "-->\n" + coverage_bias_svg(res));
    }

    std::printf("%6s %-8s %9s %10s %10s %9s %7s\n", "rho", "estimator", "coverage",
                "mean_bias", "ci_width", "mean_k_n", "usable");
    bool starved = false;
    for (const CellAggregate& a : res.aggregates) {
        std::printf("%6.2f %-8s %9.3f %+10.3f %10.3f %9.2f %4zu/%zu\n", a.rho,
                    estimator_name(a.estimator), a.coverage, a.mean_bias, a.mean_width,
                    a.mean_k, a.converged, a.reps);
        if (a.converged == 0) starved = true;
    }
    std::printf("rows: %s\naggregates: %s\n", rows_path.c_str(), agg_path.c_str());
    if (plot) std::printf("plot: %s\n", (prefix + "_plot.svg").c_str());

    bool any_failed = false;
    for (const RepRow& r : res.rows) any_failed = any_failed || r.failed;
    if (any_failed || starved) {
        std::fprintf(stderr, "warning: %s\n",
                     starved ? "a cell finished with no converged replication"
                             : "some replications failed (see the failed column)");
        return kExitWarning;
    }
    return kExitOk;
}

int cmd_check_eif(std::size_t trials, std::uint64_t seed,
                  const std::vector<std::string>& kind_filter,
                  const std::string& out_path) {
    std::vector<Estimand> wanted;
    for (const std::string& k : kind_filter) wanted.push_back(parse_check_kind(k));

    std::vector<EifCheckRow> rows = run_eif_check(trials, seed);
    if (!wanted.empty()) {
        std::vector<EifCheckRow> kept;
        for (const EifCheckRow& r : rows) {
            if (std::find(wanted.begin(), wanted.end(), r.kind) != wanted.end())
                kept.push_back(r);
        }
        rows = std::move(kept);
    }

    std::ostringstream table;
    table << "kind,trials,max_rel_err,tol,max_mean_abs,pass\n";
    bool all_pass = true;
    std::printf("%-14s %7s %13s %9s %13s %s\n", "kind", "trials", "max_rel_err", "tol",
                "max_mean_abs", "pass");
    for (const EifCheckRow& r : rows) {
        std::printf("%-14s %7zu %13.3e %9.0e %13.3e %s\n", estimand_name(r.kind),
                    r.trials, r.max_rel_err, r.tol, r.max_mean_abs,
                    r.pass ? "yes" : "NO");
        table << estimand_name(r.kind) << ',' << r.trials << ','
              << format_double(r.max_rel_err) << ',' << format_double(r.tol) << ','
              << format_double(r.max_mean_abs) << ',' << (r.pass ? 1 : 0) << '\n';
        all_pass = all_pass && r.pass;
    }
    std::printf("%s\n", all_pass ? "all influence kernels verified"
                                 : "influence kernel verification FAILED");

    if (!out_path.empty()) {
        std::vector<std::string> lines;
        lines.push_back("command=check-eif");
        std::string kinds = "kinds=";
        if (kind_filter.empty()) {
            kinds += "all";
        } else {
            for (std::size_t i = 0; i < kind_filter.size(); ++i) {
                if (i) kinds += ' ';
                kinds += kind_filter[i];
            }
        }
        lines.push_back("trials=" + std::to_string(trials) + " " + kinds);
        lines.push_back("seed=" + std::to_string(seed));
        write_text(out_path, commented(lines) + table.str());
    }
    return all_pass ? kExitOk : kExitWarning;
}

} // namespace

int run_cli(int argc, const char* const* argv) {
    CLI::App app{"variable-importance inference: targeted and one-step estimators"};
    app.require_subcommand(1);

    // ---- estimate ----
    CLI::App* est = app.add_subcommand(
        "estimate", "run one estimator on a CSV and report point, se, and CI");
    std::string data_path, response_col = "y", interest_col;
    std::string target = "condperm-importance", estimator = "tmle";
    std::uint64_t est_seed = 1;
    std::size_t folds = 0;
    bool fresh = false, no_third = false;
    std::string est_out;
    ModelFlags est_model;
    est->add_option("--data", data_path, "input CSV with a header row")
        ->required()
        ->envname("TLVI_DATA");
    est->add_option("--response-col", response_col, "response column name")
        ->capture_default_str();
    est->add_option("--interest-col", interest_col,
                    "column whose importance is assessed (required)")
        ->required();
    est->add_option("--estimand", target,
                    "ref-loss | condperm-loss | loco-loss | margperm-loss | "
                    "condperm-importance | loco-importance | margperm-importance")
        ->capture_default_str();
    est->add_option("--estimator", estimator, "plugin | onestep | tmle")
        ->capture_default_str();
    est_model.attach(*est);
    est->add_option("--seed", est_seed, "seed for splits and synthetic draws")
        ->envname("TLVI_SEED")
        ->capture_default_str();
    est->add_option("--folds", folds, "fold-rotation count K (0 = one split)")
        ->capture_default_str();
    est->add_flag("--fresh-draws", fresh, "redraw the synthetic support each iteration");
    est->add_flag("--no-third-part", no_third,
                  "infer on the update part instead of a held-out third part");
    est->add_option("--out", est_out, "also write the report as CSV here")
        ->envname("TLVI_OUT");

    // ---- simulate ----
    CLI::App* sim = app.add_subcommand(
        "simulate", "coverage/bias study on the linear-gaussian design");
    std::vector<double> rho_grid{0.1, 0.5, 0.9};
    std::size_t reps = 40, sim_n = 500, sim_d = 2;
    double beta = 5.0, noise_sd = 1.0;
    std::vector<std::string> est_names{"onestep", "tmle"};
    std::string sim_target = "condperm-importance";
    std::uint64_t sim_seed = 1;
    std::size_t threads = 0;
    bool full_scale = false, plot = false;
    std::string prefix = "simulate";
    ModelFlags sim_model;
    CLI::Option* o_rho =
        sim->add_option("--rho", rho_grid, "correlation grid")->capture_default_str();
    CLI::Option* o_reps =
        sim->add_option("--reps", reps, "replications per cell")
            ->envname("TLVI_REPS")
            ->capture_default_str();
    CLI::Option* o_n = sim->add_option("--n", sim_n, "observations per replication")
                           ->envname("TLVI_N")
                           ->capture_default_str();
    sim->add_option("--d", sim_d, "covariate dimension (first one is of interest)")
        ->capture_default_str();
    sim->add_option("--beta", beta, "signal coefficient")->capture_default_str();
    sim->add_option("--noise-sd", noise_sd, "response noise level")
        ->capture_default_str();
    sim->add_option("--estimators", est_names, "subset of: plugin onestep tmle")
        ->capture_default_str();
    sim->add_option("--target", sim_target, "importance kind with a closed-form truth")
        ->capture_default_str();
    sim_model.attach(*sim);
    sim->add_option("--seed", sim_seed, "master seed; replication seeds derive from it")
        ->envname("TLVI_SEED")
        ->capture_default_str();
    sim->add_option("--threads", threads, "worker threads (0 = all cores); the "
                                          "results do not depend on this")
        ->envname("TLVI_THREADS")
        ->capture_default_str();
    sim->add_flag("--full-scale", full_scale,
                  "headline protocol: 80 reps of n=1500 on the five-point grid");
    sim->add_option("--out-prefix", prefix, "outputs PREFIX_rows.csv etc.")
        ->envname("TLVI_OUT_PREFIX")
        ->capture_default_str();
    sim->add_flag("--plot", plot, "also write a coverage/bias SVG panel");

    // ---- check-eif ----
    CLI::App* chk = app.add_subcommand(
        "check-eif", "certify influence kernels against finite differences");
    std::size_t trials = 100;
    std::uint64_t chk_seed = 1;
    std::vector<std::string> kind_filter;
    std::string chk_out;
    chk->add_option("--trials", trials, "random discrete distributions per kind")
        ->envname("TLVI_TRIALS")
        ->capture_default_str();
    chk->add_option("--seed", chk_seed, "seed for the random instances")
        ->envname("TLVI_SEED")
        ->capture_default_str();
    chk->add_option("--kinds", kind_filter,
                    "subset of: refloss condperm loco margperm (default all)");
    chk->add_option("--out", chk_out, "also write the table as CSV here")
        ->envname("TLVI_OUT");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (est->parsed()) {
            return cmd_estimate(data_path, response_col, interest_col, target,
                                estimator, est_model, est_seed, folds, fresh, no_third,
                                est_out);
        }
        if (sim->parsed()) {
            ExperimentConfig cfg;
            // desk-scale defaults; --full-scale swaps in the headline protocol;
            // explicit flags beat both
            if (full_scale) {
                cfg.grid = {0.1, 0.3, 0.5, 0.7, 0.9};
                cfg.reps = 80;
                cfg.n = 1500;
            } else {
                cfg.grid = rho_grid;
                cfg.reps = reps;
                cfg.n = sim_n;
            }
            if (o_rho->count()) cfg.grid = rho_grid;
            if (o_reps->count()) cfg.reps = reps;
            if (o_n->count()) cfg.n = sim_n;
            cfg.d = sim_d;
            cfg.beta = beta;
            cfg.noise_sd = noise_sd;
            cfg.target = parse_target(sim_target);
            cfg.estimators.clear();
            for (const std::string& e : est_names)
                cfg.estimators.push_back(parse_estimator(e));
            sim_model.fill(cfg.base);
            cfg.seed = sim_seed;
            cfg.threads = threads;
            return cmd_simulate(cfg, prefix, plot);
        }
        return cmd_check_eif(trials, chk_seed, kind_filter, chk_out);
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitUsage;
    }
}

} // namespace tlvi
