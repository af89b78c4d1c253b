#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "tlvi/data.hpp"
#include "tlvi/estimators.hpp"

namespace tlvi {

// Linear-gaussian design: d covariates jointly normal with unit variances
// and a common correlation rho; the first coordinate is the variable of
// interest X, the rest are Z, and Y = beta*X + noise.
struct DgpSpec {
    std::size_t n = 500;
    std::size_t d = 2;
    double rho = 0.5;
    double beta = 5.0;
    double noise_sd = 1.0;
    std::uint64_t seed = 1;

    void validate() const; // n >= 10, d >= 2, rho in [0,1), noise_sd >= 0
};

Dataset generate(const DgpSpec& spec);

// Closed-form importance under the two-covariate design (any beta, any
// noise level -- the noise cancels in the loss differences):
//   condperm-importance  2 beta^2 (1 - rho^2)
//   loco-importance        beta^2 (1 - rho^2)
//   margperm-importance  2 beta^2
// Loss targets and d > 2 have no closed form here and are rejected.
double true_importance(const DgpSpec& spec, Target kind);

// One estimator applied to one replication's dataset.
struct RepRow {
    double rho = 0.0;
    EstimatorKind estimator = EstimatorKind::OneStep;
    std::size_t rep = 0;
    std::uint64_t data_seed = 0;
    double truth = 0.0;
    double point = 0.0;
    double se = 0.0;
    double ci_lo = 0.0;
    double ci_hi = 0.0;
    double bias = 0.0;
    bool covered = false;
    std::size_t k_n = 0;
    bool converged = false;
    bool failed = false;
    std::string error; // first failure message, commas stripped
};

// Per (rho, estimator) cell; rates are over converged, non-failed reps.
struct CellAggregate {
    double rho = 0.0;
    EstimatorKind estimator = EstimatorKind::OneStep;
    std::size_t reps = 0;
    std::size_t converged = 0;
    std::size_t failed = 0;
    double coverage = 0.0;
    double mean_bias = 0.0;
    double mean_width = 0.0;
    double mean_k = 0.0;
};

struct ExperimentConfig {
    std::vector<double> grid{0.1, 0.3, 0.5, 0.7, 0.9};
    std::size_t reps = 80;
    std::size_t n = 1500;
    std::size_t d = 2;
    double beta = 5.0;
    double noise_sd = 1.0;
    Target target = Target::CondPermImportance;
    std::vector<EstimatorKind> estimators{EstimatorKind::OneStep,
                                          EstimatorKind::Tmle};
    EstimateOptions base; // learner/density/alpha/tolerance template;
                          // estimator and seed are overwritten per run
    std::uint64_t seed = 1;
    std::size_t threads = 1; // 0 = hardware concurrency

    void validate() const;
};

struct ExperimentResult {
    ExperimentConfig config;
    std::vector<RepRow> rows;              // (rho, estimator, rep) order
    std::vector<CellAggregate> aggregates; // (rho, estimator) order
    void validate() const; // ordering, counts, aggregates match the rows
};

// Runs every (rho, rep) replication: one generated dataset shared by all
// estimators, per-rep seeds derived from the master seed by a fixed counter
// scheme. Every estimator in a rep runs on the same equal-thirds split plan
// (and so the same trained models), isolating the correction step as the
// compared quantity. Replications execute on `threads` workers writing to
// preassigned row slots, so the result is byte-identical for any thread
// count.
ExperimentResult run_experiment(const ExperimentConfig& cfg);

// CSV/SVG serialization. header_lines are prepended as "# " comments; pass
// the resolved-config echo so every output names its provenance.
std::string rows_csv(const ExperimentResult& r,
                     const std::vector<std::string>& header_lines);
std::string aggregates_csv(const ExperimentResult& r,
                           const std::vector<std::string>& header_lines);
std::string config_echo_lines_joined(const ExperimentConfig& cfg); // newline-separated
std::vector<std::string> config_echo_lines(const ExperimentConfig& cfg);

// Two-panel static plot: coverage vs rho (with the nominal level marked)
// and mean bias vs rho (with zero marked), one series per estimator.
std::string coverage_bias_svg(const ExperimentResult& r);

} // namespace tlvi
