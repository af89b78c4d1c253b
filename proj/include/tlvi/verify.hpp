#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "tlvi/eif.hpp"
#include "tlvi/learners.hpp"
#include "tlvi/rng.hpp"

namespace tlvi {

// Small exact joint distribution over (x, y, z) used to certify the
// influence-function kernels against brute-force computation.
struct DiscretePoint {
    double x = 0.0;
    double y = 0.0;
    std::vector<double> z;
};

struct DiscreteJoint {
    std::vector<DiscretePoint> support; // at most 50 points, all distinct
    std::vector<double> probs;          // positive, sum to 1 within 1e-12
    std::size_t dz = 0;

    std::size_t size() const { return support.size(); }
    void validate() const;
};

// Exact estimand value by exhaustive summation over the finite support,
// conditionals obtained by direct Bayes within each z stratum. The learner
// is held fixed; for LocoLoss the x-free learner must be supplied.
double exact_estimand(const DiscreteJoint& dist, Estimand kind, const FittedLearner& f,
                      const FittedLearner* f_no_x = nullptr);

// Central finite difference of the estimand along the contamination path
// toward a point mass at support index j:
//   [Psi((1-t)P + t d_j) - Psi((1+t)P - t d_j)] / (2t)
// t must satisfy t < min_k p_k / (1 - p_j) so all masses stay positive.
double gateaux_fd(const DiscreteJoint& dist, Estimand kind, const FittedLearner& f,
                  std::size_t j, double t, const FittedLearner* f_no_x = nullptr);

// EifContext with exact conditional moments from the discrete joint; the
// bound weights are the joint's own masses.
EifContext make_exact_context(const DiscreteJoint& dist, const FittedLearner& f,
                              const FittedLearner* f_no_x = nullptr,
                              const FittedLearner* cond_mean = nullptr);

// Random instance generator for the certification trials: z vectors drawn
// once per stratum so strata have exactly-equal keys, masses proportional
// to U(0.5, 1.5) draws.
DiscreteJoint random_discrete_joint(Rng& rng, std::size_t n_points,
                                    std::size_t n_strata, std::size_t dz);

struct EifCheckRow {
    Estimand kind = Estimand::RefLoss;
    std::size_t trials = 0;
    double max_rel_err = 0.0;
    double max_mean_abs = 0.0; // worst |weighted mean of eif| at the plug-in
    double tol = 0.0;
    bool pass = false;
};

// Certify every influence kernel against the finite-difference oracle over
// `trials` random discrete joints and random linear learners. Relative
// error |eif - fd| / (1 + |eif|) at t = 1e-5; tolerance 1e-4 per kind
// (1e-3 for the marginal-permutation kind, whose double sums carry more
// cancellation).
std::vector<EifCheckRow> run_eif_check(std::size_t trials, std::uint64_t seed);

} // namespace tlvi
