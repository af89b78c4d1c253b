#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tlvi/conddens.hpp"
#include "tlvi/data.hpp"
#include "tlvi/eif.hpp"
#include "tlvi/learners.hpp"
#include "tlvi/targeting.hpp"

namespace tlvi {

// What gets estimated: one of the loss functionals directly, or an
// importance, the excess of a perturbed loss over the reference loss.
enum class Target {
    RefLoss,
    CondPermLoss,
    LocoLoss,
    MargPermLoss,
    CondPermImportance,
    LocoImportance,
    MargPermImportance,
};

const char* target_name(Target t);
Target parse_target(std::string_view name);

bool is_importance(Target t);

// the perturbed-loss component (RefLoss maps to itself)
Estimand loss_of(Target t);

enum class EstimatorKind { Plugin, OneStep, Tmle };

const char* estimator_name(EstimatorKind k);
EstimatorKind parse_estimator(std::string_view name);

// Standard normal quantile at p in (0,1), accurate to ~1e-14.
double norm_quantile(double p);

// point -/+ z_{alpha/2} * se
std::pair<double, double> wald_ci(double point, double se, double alpha);

struct LearnerConfig {
    LearnerKind kind = LearnerKind::Ridge;
    double penalty = 1e-6;
    std::size_t knn_k = 0; // 0 = default neighbourhood size
};

struct DensityConfig {
    DensityKind kind = DensityKind::GaussianLinear;
    std::size_t min_leaf = 20;
};

struct EstimateOptions {
    Target target = Target::CondPermImportance;
    EstimatorKind estimator = EstimatorKind::Tmle;
    LearnerConfig learner;
    DensityConfig density;
    double alpha = 0.05;
    std::uint64_t seed = 1;

    // support points per conditioning value (quadrature and synthetic draws)
    std::size_t support_draws = 256;

    // iterative-update controls
    std::size_t max_iter = 100;
    bool use_I3 = true; // report the se from a third, untouched part
    TolKind tol = TolKind::TmleStandard;
    bool fresh_draws = false;

    std::size_t folds = 0; // 0 = single split, >= 2 = fold rotation
};

struct EstimateReport {
    Target target = Target::CondPermImportance;
    EstimatorKind estimator = EstimatorKind::Tmle;
    double point = 0.0;
    double se = 0.0;
    double ci_lo = 0.0;
    double ci_hi = 0.0;
    double alpha = 0.05;
    std::size_t n_inf = 0; // inference rows behind the se
    std::size_t k_n = 0;   // applied update steps (0 for plugin/onestep)
    bool converged = true;
    bool degenerate = false; // zero-variance influence; se forced to 0
    std::uint64_t seed = 0;
    std::string scheme; // "split2", "split3", "kfold4", ...
    std::vector<EstimateReport> fold_reports;

    // ci brackets the point, width is 2 z se, fields finite
    void validate() const;

    // flat key: value block, one field per line
    std::string key_value() const;

    static std::string csv_header();
    std::string csv_row() const;
};

// Single-split estimators. Plan parts are used in order: part 0 trains the
// learner and conditionals, part 1 is evaluated/targeted, part 2 (when the
// plan has one and use_I3 is set) supplies the influence values behind the
// reported se.
//
// The iterative update fluctuates the perturbed-loss factor only. For an
// importance the benchmark term is the empirical loss of the frozen learner
// on the update part (a sample mean already solves its own score equation),
// the point is the difference, and the se follows the perturbed component's
// influence at the converged weights (conservative near a null importance).
EstimateReport estimate_plugin(const Dataset& data, const SplitPlan& plan,
                               const EstimateOptions& opt);
EstimateReport estimate_onestep(const Dataset& data, const SplitPlan& plan,
                                const EstimateOptions& opt);
EstimateReport estimate_tmle(const Dataset& data, const SplitPlan& plan,
                             const EstimateOptions& opt);

// Rotates fold roles (inference fold r, update fold r+1 when needed, the
// rest train), averages the fold points, pools the per-fold-centered
// influence values for the se. Sub-reports are retained.
EstimateReport estimate_kfold(const Dataset& data, const SplitPlan& folds,
                              const EstimateOptions& opt);
EstimateReport estimate_kfold(const Dataset& data, std::size_t K,
                              const EstimateOptions& opt);

// Dispatch on opt.estimator and opt.folds; single-split flows draw their
// plan from make_split with as many parts as the estimator needs.
EstimateReport estimate(const Dataset& data, const EstimateOptions& opt);

} // namespace tlvi
