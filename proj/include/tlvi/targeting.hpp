#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "tlvi/conddens.hpp"
#include "tlvi/data.hpp"
#include "tlvi/eif.hpp"
#include "tlvi/learners.hpp"
#include "tlvi/rng.hpp"

namespace tlvi {

// Finite weighted support carrying the working distribution during the
// iterative update: per observed row one z-block holding the observation
// itself (weight 0, used for the likelihood) plus m synthetic (x, y) pairs
// drawn from the fitted conditionals (carrying the block's 1/n mass).
// Only weights ever change; z values are never moved between blocks.
struct FluctuationSupport {
    // flat per-atom arrays
    std::vector<double> x, y, fh, w; // fh = learner prediction at (x, z_block)
    std::vector<std::uint32_t> block;
    std::vector<std::uint8_t> observed; // origin tag: 1 observed, 0 synthetic

    std::vector<double> zrows; // n_blocks * dz, the pinned z per block
    std::size_t dz = 0;
    std::size_t n_blocks = 0;

    // non-owning references for fresh redraws of the synthetic atoms
    const FittedLearner* learner = nullptr;
    const CondDensityModel* px = nullptr;
    const CondDensityModel* py = nullptr;

    std::size_t n_atoms() const { return w.size(); }
    std::span<const double> z_of_block(std::size_t b) const {
        return {zrows.data() + b * dz, dz};
    }
    std::vector<std::size_t> observed_indices() const;
    void validate() const; // weights >= 0 summing to 1, >= 2 atoms
};

FluctuationSupport build_support(const Dataset& data, std::span<const std::size_t> rows,
                                 const FittedLearner& f, const CondDensityModel& px,
                                 const CondDensityModel& py, std::size_t m, Rng& rng);

// Influence values of the targeted functional over the support atoms at the
// current weights. psi is centered by the current plug-in; psi_tilde is
// additionally centered within each z-block and is the direction actually
// fluctuated (the z-marginal score equation is already solved by the
// empirical block masses, so only the conditional factor needs to move).
struct SupportScores {
    std::vector<double> psi;
    std::vector<double> psi_tilde;
    double psi_hat = 0.0;
};

SupportScores eval_support_eif(const FluctuationSupport& s, Estimand kind,
                               bool subtract_ref);

// One-dimensional likelihood maximization for the fluctuation size.
// Maximizes sum_{i in fit} log(1 + eps*psi_i) - |fit|*log c(eps) with
// c(eps) = sum_j w_j (1 + eps*psi_j), over the open interval keeping every
// 1 + eps*psi_j positive (endpoints shrunk by 0.999), by derivative
// bisection to |d/deps| <= 1e-10. All-zero psi returns (0, 1) exactly.
std::pair<double, double> epsilon_mle(const FluctuationSupport& s,
                                      const std::vector<double>& psi,
                                      std::span<const std::size_t> fit);

// w_j <- w_j (1 + eps*psi_j) / c, renormalized; eps = 0 returns the input
// unchanged. Throws when some updated weight would go negative.
FluctuationSupport apply_fluctuation(FluctuationSupport s,
                                     const std::vector<double>& psi, double eps,
                                     double c);

enum class TolKind { TmleStandard, Strict };

struct TraceRow {
    std::size_t iter = 0;  // 1-based applied-step index
    double epsilon = 0.0;
    double mean_eif = 0.0; // over fit, before the step
    double loglik = 0.0;   // cumulative observed-atom log tilt, after the step
    double psi_hat = 0.0;  // plug-in after the step
};

struct TargetingTrace {
    std::vector<TraceRow> rows;
    bool converged = false;
    std::size_t k_n = 0;      // applied fluctuation steps
    double final_psi = 0.0;   // plug-in at the final weights
    double final_mean = 0.0;  // mean eif over fit at the final weights
    double final_sd = 0.0;    // sd of eif over fit at the final weights
    double threshold = 0.0;   // stopping threshold actually used
};

struct TargetOptions {
    Estimand kind = Estimand::CondPermLoss;
    bool subtract_ref = false; // target the loss difference vs the reference
    std::size_t max_iter = 100;
    TolKind tol = TolKind::TmleStandard;
    bool fresh_draws = false; // redraw synthetic atoms each iteration and
                              // re-apply the accumulated tilt; monotone
                              // likelihood is no longer guaranteed and the
                              // scored mean carries Monte Carlo noise, so the
                              // run returns the scored state with the smallest
                              // |mean| and stops after 5 redraws without
                              // improving on it
};

// Iterate {score -> epsilon_mle -> apply_fluctuation} on the support until
// the stopping rule fires. "tmle-standard" stops at
// |mean_fit psi| <= sd_fit(psi) / (sqrt(n_fit) * log(n_fit)) or |eps| <= 1e-7
// or max_iter; "strict" stops only at |mean_fit psi| <= 1e-9 (or max_iter).
// With fresh_draws the loop additionally stops once 5 consecutive redraws
// fail to improve the best |mean|, and a non-converged exit hands back that
// best scored state (k_n then counts the steps baked into it, which can be
// fewer than the trace rows).
TargetingTrace target(FluctuationSupport& s, std::span<const std::size_t> fit,
                      const TargetOptions& opt, Rng* rng = nullptr);

} // namespace tlvi
