#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "tlvi/conddens.hpp"
#include "tlvi/data.hpp"
#include "tlvi/learners.hpp"

namespace tlvi {

// Loss functionals of a frozen regression map, squared error throughout.
//   RefLoss       E L(Y, f(X,Z))         -- loss as observed
//   CondPermLoss  E L(Y, f(X',Z)),  X' ~ X|Z drawn independently of (X,Y)
//   LocoLoss      E L(Y, g(Z)),     g fitted without access to X
//   MargPermLoss  E L(Y, f(X',Z)),  X' ~ marginal of X, independent of all
enum class Estimand { RefLoss, CondPermLoss, LocoLoss, MargPermLoss };

const char* estimand_name(Estimand k);

inline double sq_loss(double y, double yhat) {
    const double d = y - yhat;
    return d * d;
}

// derivative of the loss in its second argument
inline double sq_loss_dyhat(double y, double yhat) { return -2.0 * (y - yhat); }

// Everything the influence functions need at one evaluation point, reduced
// to conditional moments so evaluation is O(1) per point afterwards.
struct PointMoments {
    double fhat = 0.0;  // f(x_i, z_i)
    double fz = 0.0;    // x-free fit g(z_i); only meaningful when present
    double mu = 0.0;    // separate conditional-mean model at (x_i, z_i), else fhat
    double ey = 0.0;    // E[y | z_i]            under the y-conditional
    double ey2 = 0.0;   // E[y^2 | z_i]
    double ef = 0.0;    // E[f(x, z_i) | z_i]    under the x-conditional
    double ef2 = 0.0;   // E[f(x, z_i)^2 | z_i]
    double t2_marg = 0.0; // E_{x~marginal} L(y_i, f(x, z_i))
    double t3_marg = 0.0; // E_{(y,z)~joint} L(y, f(x_i, z))
};

// Influence-function evaluation context over a fixed weighted set of points.
// Built either from fitted conditional-density models (estimation) or from
// exact finite-support conditionals (verification); the formulas are shared.
class EifContext {
  public:
    std::size_t size() const { return y_.size(); }
    double weight(std::size_t i) const { return w_[i]; }
    const PointMoments& moments(std::size_t i) const { return m_[i]; }

    bool has_y_conditional() const { return has_y_; }
    bool has_x_conditional() const { return has_x_; }
    bool has_loco() const { return has_loco_; }
    bool has_margperm() const { return has_marg_; }

    double psi_hat(Estimand k) const { return psi_[static_cast<int>(k)]; }
    void set_psi_hat(Estimand k, double v);

    // influence function of `k` at bound point i, centered by psi_hat(k)
    double eif(Estimand k, std::size_t i) const;

    // plug-in value of `k` under the bound weighted points
    double plugin(Estimand k) const;

    static EifContext from_moments(std::vector<double> y, std::vector<double> weights,
                                   std::vector<PointMoments> moments, bool has_y,
                                   bool has_x, bool has_loco, bool has_marg);

  private:
    std::vector<double> y_;
    std::vector<double> w_;
    std::vector<PointMoments> m_;
    double psi_[4] = {0.0, 0.0, 0.0, 0.0};
    bool has_y_ = false, has_x_ = false, has_loco_ = false, has_marg_ = false;
};

// Build a context from fitted models over `rows` of `data`, equal weights.
//   px, py      conditionals fitted on the training fold (py may be null when
//               only RefLoss/LocoLoss are wanted, px likewise)
//   m           support points per conditioning value, >= 2
//   f_no_x      x-free learner (LocoLoss), optional
//   cond_mean   separate conditional-mean model for the reference-loss score
//               term, optional; defaults to the learner itself
//   with_margperm  also prepare the marginal-permutation pieces (requires a
//               gaussian-linear x-conditional; the partition kind is refused
//               because the implied density ratio is unstable)
EifContext make_model_context(const Dataset& data, std::span<const std::size_t> rows,
                              const FittedLearner& f, const FittedLearner* f_no_x,
                              const CondDensityModel* px, const CondDensityModel* py,
                              std::size_t m, const FittedLearner* cond_mean = nullptr,
                              bool with_margperm = false);

// Spec-shaped free functions over a built context.
double eif_ref(const EifContext& ctx, std::size_t i);
double eif_condperm(const EifContext& ctx, std::size_t i);
double eif_loco(const EifContext& ctx, std::size_t i);
double eif_margperm(const EifContext& ctx, std::size_t i);
double plugin_value(const EifContext& ctx, Estimand k);

} // namespace tlvi
