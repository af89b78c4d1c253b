#include "tlvi/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <memory>
#include <sstream>

#include "tlvi/errors.hpp"
#include "tlvi/rng.hpp"

namespace tlvi {

namespace {

constexpr double kSqrt2Pi = 2.50662827463100050242;
constexpr double kInvSqrt2 = 0.70710678118654752440;

double pop_sd(std::span<const double> v) {
    if (v.empty()) return 0.0;
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= double(v.size());
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    var /= double(v.size());
    return std::sqrt(std::max(var, 0.0));
}

struct FittedModels {
    FittedLearner f;
    std::unique_ptr<FittedLearner> f_no_x;
    std::unique_ptr<CondDensityModel> px, py;
};

FittedLearner fit_learner(const Dataset& fold, const LearnerConfig& cfg) {
    if (cfg.kind == LearnerKind::Ridge) return fit_ridge(fold, cfg.penalty);
    return fit_knn(fold, cfg.knn_k);
}

std::unique_ptr<CondDensityModel> fit_density(std::span<const double> values,
                                              const Dataset& fold,
                                              const DensityConfig& cfg) {
    if (cfg.kind == DensityKind::GaussianLinear)
        return fit_gaussian_linear(values, fold.z, fold.dz);
    return fit_partition_density(values, fold.z, fold.dz, cfg.min_leaf);
}

FittedModels fit_models(const Dataset& train, const EstimateOptions& opt,
                        bool for_update) {
    FittedModels mo;
    mo.f = fit_learner(train, opt.learner);
    const Estimand loss = loss_of(opt.target);
    if (loss == Estimand::LocoLoss)
        mo.f_no_x = std::make_unique<FittedLearner>(fit_without_x(
            train, opt.learner.kind, opt.learner.penalty, opt.learner.knn_k));
    const bool conditionals = for_update || loss == Estimand::CondPermLoss ||
                              loss == Estimand::MargPermLoss;
    if (conditionals) {
        mo.px = fit_density(train.x, train, opt.density);
        mo.py = fit_density(train.y, train, opt.density);
    }
    return mo;
}

struct EvalResult {
    double plugin = 0.0;
    std::vector<double> psi;
};

// Influence values of the target over `rows`, difference of components for
// an importance. Pins override the centering constants (used when the
// functional value comes from an updated working distribution).
EvalResult eval_target(const Dataset& data, std::span<const std::size_t> rows,
                       const FittedModels& mo, Target t, std::size_t m,
                       const double* pin_loss = nullptr,
                       const double* pin_ref = nullptr) {
    const Estimand loss = loss_of(t);
    EifContext ctx = make_model_context(data, rows, mo.f, mo.f_no_x.get(),
                                        mo.px.get(), mo.py.get(), m, nullptr,
                                        loss == Estimand::MargPermLoss);
    if (pin_loss) ctx.set_psi_hat(loss, *pin_loss);
    if (pin_ref) ctx.set_psi_hat(Estimand::RefLoss, *pin_ref);
    EvalResult out;
    out.psi.resize(ctx.size());
    if (is_importance(t)) {
        out.plugin = ctx.psi_hat(loss) - ctx.psi_hat(Estimand::RefLoss);
        for (std::size_t i = 0; i < ctx.size(); ++i)
            out.psi[i] = ctx.eif(loss, i) - ctx.eif(Estimand::RefLoss, i);
    } else {
        out.plugin = ctx.psi_hat(loss);
        for (std::size_t i = 0; i < ctx.size(); ++i) out.psi[i] = ctx.eif(loss, i);
    }
    return out;
}

void check_common(const Dataset& data, const SplitPlan& plan,
                  const EstimateOptions& opt, std::size_t min_parts,
                  const char* who) {
    data.validate();
    plan.validate();
    if (plan.n() != data.n())
        throw ConfigError("estimate: plan covers " + std::to_string(plan.n()) +
                          " rows but the data has " + std::to_string(data.n()));
    if (plan.K < min_parts)
        throw ConfigError(std::string("estimate: ") + who + " needs a plan with >= " +
                          std::to_string(min_parts) + " parts, got " +
                          std::to_string(plan.K));
    if (!(opt.alpha > 0.0 && opt.alpha < 1.0))
        throw ConfigError("estimate: alpha must lie strictly inside (0,1)");
}

void finish(EstimateReport& r) {
    const auto [lo, hi] = wald_ci(r.point, r.se, r.alpha);
    r.ci_lo = lo;
    r.ci_hi = hi;
    r.validate();
}

} // namespace

const char* target_name(Target t) {
    switch (t) {
        case Target::RefLoss: return "ref-loss";
        case Target::CondPermLoss: return "condperm-loss";
        case Target::LocoLoss: return "loco-loss";
        case Target::MargPermLoss: return "margperm-loss";
        case Target::CondPermImportance: return "condperm-importance";
        case Target::LocoImportance: return "loco-importance";
        case Target::MargPermImportance: return "margperm-importance";
    }
    return "?";
}

Target parse_target(std::string_view name) {
    for (Target t : {Target::RefLoss, Target::CondPermLoss, Target::LocoLoss,
                     Target::MargPermLoss, Target::CondPermImportance,
                     Target::LocoImportance, Target::MargPermImportance})
        if (name == target_name(t)) return t;
    throw ConfigError("estimate: unknown estimand '" + std::string(name) +
                      "'; expected one of ref-loss, condperm-loss, loco-loss, "
                      "margperm-loss, condperm-importance, loco-importance, "
                      "margperm-importance");
}

bool is_importance(Target t) {
    return t == Target::CondPermImportance || t == Target::LocoImportance ||
           t == Target::MargPermImportance;
}

Estimand loss_of(Target t) {
    switch (t) {
        case Target::RefLoss: return Estimand::RefLoss;
        case Target::CondPermLoss:
        case Target::CondPermImportance: return Estimand::CondPermLoss;
        case Target::LocoLoss:
        case Target::LocoImportance: return Estimand::LocoLoss;
        case Target::MargPermLoss:
        case Target::MargPermImportance: return Estimand::MargPermLoss;
    }
    return Estimand::RefLoss;
}

const char* estimator_name(EstimatorKind k) {
    switch (k) {
        case EstimatorKind::Plugin: return "plugin";
        case EstimatorKind::OneStep: return "onestep";
        case EstimatorKind::Tmle: return "tmle";
    }
    return "?";
}

EstimatorKind parse_estimator(std::string_view name) {
    for (EstimatorKind k :
         {EstimatorKind::Plugin, EstimatorKind::OneStep, EstimatorKind::Tmle})
        if (name == estimator_name(k)) return k;
    throw ConfigError("estimate: unknown estimator '" + std::string(name) +
                      "'; expected plugin, onestep, or tmle");
}

// Rational approximation for the lower/central/upper regions, then one
// Halley refinement against the exact normal CDF.
double norm_quantile(double p) {
    if (!(p > 0.0 && p < 1.0))
        throw ConfigError("estimate: quantile level must lie strictly inside (0,1)");
    static const double a[6] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                -2.759285104469687e+02, 1.383577518672690e+02,
                                -3.066479806614716e+01, 2.506628277459239e+00};
    static const double b[5] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                -1.556989798598866e+02, 6.680131188771972e+01,
                                -1.328068155288572e+01};
    static const double c[6] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                -2.400758277161838e+00, -2.549732539343734e+00,
                                4.374664141464968e+00,  2.938163982698783e+00};
    static const double d[4] = {7.784695709041462e-03, 3.224671290700398e-01,
                                2.445134137142996e+00, 3.754408661907416e+00};
    const double plow = 0.02425;
    double x;
    if (p < plow) {
        const double q = std::sqrt(-2.0 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else if (p <= 1.0 - plow) {
        const double q = p - 0.5, r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
        const double q = std::sqrt(-2.0 * std::log1p(-p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    const double err = 0.5 * std::erfc(-x * kInvSqrt2) - p;
    const double u = err * kSqrt2Pi * std::exp(0.5 * x * x);
    if (std::isfinite(u)) x -= u / (1.0 + 0.5 * x * u);
    return x;
}

std::pair<double, double> wald_ci(double point, double se, double alpha) {
    if (se < 0.0) throw ConfigError("estimate: se must be >= 0");
    if (!(alpha > 0.0 && alpha < 1.0))
        throw ConfigError("estimate: alpha must lie strictly inside (0,1)");
    const double z = norm_quantile(1.0 - alpha / 2.0);
    return {point - z * se, point + z * se};
}

void EstimateReport::validate() const {
    for (double v : {point, se, ci_lo, ci_hi, alpha})
        if (!std::isfinite(v)) throw NumericError("estimate: non-finite report field");
    if (se < 0.0) throw NumericError("estimate: negative se");
    if (!(alpha > 0.0 && alpha < 1.0))
        throw ConfigError("estimate: alpha must lie strictly inside (0,1)");
    if (!(ci_lo <= point && point <= ci_hi))
        throw NumericError("estimate: interval does not bracket the point");
    const double z = norm_quantile(1.0 - alpha / 2.0);
    if (std::abs((ci_hi - ci_lo) - 2.0 * z * se) > 1e-12)
        throw NumericError("estimate: interval width disagrees with the se");
}

std::string EstimateReport::key_value() const {
    std::ostringstream os;
    os << "estimand: " << target_name(target) << '\n'
       << "estimator: " << estimator_name(estimator) << '\n'
       << "point: " << format_double(point) << '\n'
       << "se: " << format_double(se) << '\n'
       << "ci_lo: " << format_double(ci_lo) << '\n'
       << "ci_hi: " << format_double(ci_hi) << '\n'
       << "alpha: " << format_double(alpha) << '\n'
       << "n_inf: " << n_inf << '\n'
       << "k_n: " << k_n << '\n'
       << "converged: " << (converged ? 1 : 0) << '\n'
       << "degenerate: " << (degenerate ? 1 : 0) << '\n'
       << "scheme: " << scheme << '\n'
       << "seed: " << seed << '\n';
    return os.str();
}

std::string EstimateReport::csv_header() {
    return "estimand,estimator,point,se,ci_lo,ci_hi,alpha,n_inf,k_n,converged,seed";
}

std::string EstimateReport::csv_row() const {
    std::ostringstream os;
    os << target_name(target) << ',' << estimator_name(estimator) << ','
       << format_double(point) << ',' << format_double(se) << ','
       << format_double(ci_lo) << ',' << format_double(ci_hi) << ','
       << format_double(alpha) << ',' << n_inf << ',' << k_n << ','
       << (converged ? 1 : 0) << ',' << seed;
    return os.str();
}

EstimateReport estimate_plugin(const Dataset& data, const SplitPlan& plan,
                               const EstimateOptions& opt) {
    check_common(data, plan, opt, 2, "the plug-in");
    const auto train_rows = plan.part(0);
    const auto eval_rows = plan.part(1);
    const FittedModels mo = fit_models(data.subset(train_rows), opt, false);
    const EvalResult ev = eval_target(data, eval_rows, mo, opt.target, opt.support_draws);

    EstimateReport r;
    r.target = opt.target;
    r.estimator = EstimatorKind::Plugin;
    r.point = ev.plugin;
    r.se = 0.0;
    r.alpha = opt.alpha;
    r.n_inf = eval_rows.size();
    r.seed = opt.seed;
    r.scheme = "split" + std::to_string(plan.K);
    finish(r);
    return r;
}

EstimateReport estimate_onestep(const Dataset& data, const SplitPlan& plan,
                                const EstimateOptions& opt) {
    check_common(data, plan, opt, 2, "the one-step correction");
    const auto train_rows = plan.part(0);
    const auto eval_rows = plan.part(1);
    const FittedModels mo = fit_models(data.subset(train_rows), opt, false);
    const EvalResult ev = eval_target(data, eval_rows, mo, opt.target, opt.support_draws);

    double mean = 0.0;
    for (double v : ev.psi) mean += v;
    mean /= double(ev.psi.size());
    const double sd = pop_sd(ev.psi);

    EstimateReport r;
    r.target = opt.target;
    r.estimator = EstimatorKind::OneStep;
    r.point = ev.plugin + mean;
    r.degenerate = (sd == 0.0);
    r.se = sd / std::sqrt(double(ev.psi.size()));
    r.alpha = opt.alpha;
    r.n_inf = eval_rows.size();
    r.seed = opt.seed;
    r.scheme = "split" + std::to_string(plan.K);
    finish(r);
    return r;
}

EstimateReport estimate_tmle(const Dataset& data, const SplitPlan& plan,
                             const EstimateOptions& opt) {
    if (opt.target != Target::RefLoss && opt.target != Target::CondPermLoss &&
        opt.target != Target::CondPermImportance)
        throw ConfigError(
            "estimate: the iterative update supports ref-loss, condperm-loss, "
            "and condperm-importance only");
    check_common(data, plan, opt, opt.use_I3 ? 3 : 2, "the iterative update");

    const auto train_rows = plan.part(0);
    const auto update_rows = plan.part(1);
    const FittedModels mo = fit_models(data.subset(train_rows), opt, true);

    Rng support_rng(splitmix64(opt.seed + 1));
    Rng fresh_rng(splitmix64(opt.seed + 2));
    FluctuationSupport s = build_support(data, update_rows, mo.f, *mo.px, *mo.py,
                                         opt.support_draws, support_rng);
    const auto fit = s.observed_indices();

    // Only the perturbed-loss factor is fluctuated. For an importance the
    // benchmark is a mean of observables under the frozen learner, so the
    // empirical distribution already solves its score equation and the best
    // benchmark estimate is the plain fold average; the uncertainty report
    // follows the perturbed component's influence at the converged weights,
    // which dominates the difference's spread (conservatively so near a null
    // importance, where the two components nearly cancel pointwise).
    const bool imp = is_importance(opt.target);
    TargetOptions topt;
    topt.kind = (opt.target == Target::RefLoss) ? Estimand::RefLoss
                                                : Estimand::CondPermLoss;
    topt.max_iter = opt.max_iter;
    topt.tol = opt.tol;
    topt.fresh_draws = opt.fresh_draws;
    const TargetingTrace trace =
        target(s, fit, topt, opt.fresh_draws ? &fresh_rng : nullptr);

    double ref_emp = 0.0;
    if (imp) {
        for (std::size_t row : update_rows)
            ref_emp +=
                sq_loss(data.y[row], mo.f.predict(data.x[row], data.z_row(row)));
        ref_emp /= double(update_rows.size());
    }

    EstimateReport r;
    r.target = opt.target;
    r.estimator = EstimatorKind::Tmle;
    r.point = trace.final_psi - ref_emp;
    r.k_n = trace.k_n;
    r.converged = trace.converged;
    r.alpha = opt.alpha;
    r.seed = opt.seed;
    r.scheme = "split" + std::to_string(plan.K);

    if (opt.use_I3) {
        // influence of the perturbed component on the untouched part,
        // centered at its converged value; moments still come from the
        // trained models
        const auto infer_rows = plan.part(2);
        const double loss_hat = eval_support_eif(s, topt.kind, false).psi_hat;
        const Target component =
            (opt.target == Target::RefLoss) ? Target::RefLoss
                                            : Target::CondPermLoss;
        const EvalResult ev = eval_target(data, infer_rows, mo, component,
                                          opt.support_draws, &loss_hat);
        const double sd = pop_sd(ev.psi);
        r.degenerate = (sd == 0.0);
        r.se = sd / std::sqrt(double(ev.psi.size()));
        r.n_inf = infer_rows.size();
    } else {
        r.degenerate = (trace.final_sd == 0.0);
        r.se = trace.final_sd / std::sqrt(double(fit.size()));
        r.n_inf = fit.size();
    }
    finish(r);
    return r;
}

EstimateReport estimate_kfold(const Dataset& data, const SplitPlan& folds,
                              const EstimateOptions& opt) {
    const bool rotated_update =
        opt.estimator == EstimatorKind::Tmle && opt.use_I3;
    const std::size_t min_k = rotated_update ? 3 : 2;
    check_common(data, folds, opt, min_k, "fold rotation");
    const std::size_t K = folds.K;

    EstimateReport r;
    r.target = opt.target;
    r.estimator = opt.estimator;
    r.alpha = opt.alpha;
    r.seed = opt.seed;
    r.scheme = "kfold" + std::to_string(K);
    r.k_n = 0;
    r.converged = true;
    r.degenerate = true;

    double point_sum = 0.0, pooled = 0.0;
    std::size_t n_total = 0;
    for (std::size_t rot = 0; rot < K; ++rot) {
        std::vector<std::size_t> assign(data.n(), 0);
        std::size_t parts = 2;
        for (std::size_t row : folds.part(rot)) assign[row] = rotated_update ? 2 : 1;
        if (rotated_update) {
            parts = 3;
            for (std::size_t row : folds.part((rot + 1) % K)) assign[row] = 1;
        }
        EstimateOptions sub = opt;
        sub.seed = splitmix64(opt.seed + rot + 1);
        sub.folds = 0;

        EstimateReport fr;
        try {
            const SplitPlan plan =
                SplitPlan::from_assignment(std::move(assign), parts, sub.seed);
            switch (opt.estimator) {
                case EstimatorKind::Plugin: fr = estimate_plugin(data, plan, sub); break;
                case EstimatorKind::OneStep: fr = estimate_onestep(data, plan, sub); break;
                case EstimatorKind::Tmle: fr = estimate_tmle(data, plan, sub); break;
            }
        } catch (const DataError& e) {
            throw DataError("estimate: fold rotation " + std::to_string(rot) + ": " +
                            e.what());
        }
        point_sum += fr.point;
        pooled += fr.se * fr.se * double(fr.n_inf) * double(fr.n_inf);
        n_total += fr.n_inf;
        r.k_n = std::max(r.k_n, fr.k_n);
        r.converged = r.converged && fr.converged;
        r.degenerate = r.degenerate && fr.degenerate;
        r.fold_reports.push_back(std::move(fr));
    }
    r.point = point_sum / double(K);
    r.se = std::sqrt(pooled) / double(n_total);
    r.n_inf = n_total;
    finish(r);
    return r;
}

EstimateReport estimate_kfold(const Dataset& data, std::size_t K,
                              const EstimateOptions& opt) {
    return estimate_kfold(data, make_split(data.n(), K, opt.seed), opt);
}

EstimateReport estimate(const Dataset& data, const EstimateOptions& opt) {
    if (opt.folds == 1)
        throw ConfigError("estimate: fold count must be 0 (single split) or >= 2");
    if (opt.folds >= 2) return estimate_kfold(data, opt.folds, opt);
    const std::size_t parts =
        (opt.estimator == EstimatorKind::Tmle && opt.use_I3) ? 3 : 2;
    const SplitPlan plan = make_split(data.n(), parts, opt.seed);
    switch (opt.estimator) {
        case EstimatorKind::Plugin: return estimate_plugin(data, plan, opt);
        case EstimatorKind::OneStep: return estimate_onestep(data, plan, opt);
        case EstimatorKind::Tmle: break;
    }
    return estimate_tmle(data, plan, opt);
}

} // namespace tlvi
