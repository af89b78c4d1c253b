#include "tlvi/eif.hpp"

#include <cmath>
#include <stdexcept>

#include "tlvi/errors.hpp"

namespace tlvi {

namespace {

void check_finite(double v, const char* term, Estimand k) {
    if (!std::isfinite(v)) {
        throw NumericError(std::string("eif: non-finite ") + term + " for " +
                           estimand_name(k));
    }
}

} // namespace

const char* estimand_name(Estimand k) {
    switch (k) {
    case Estimand::RefLoss: return "ref-loss";
    case Estimand::CondPermLoss: return "condperm-loss";
    case Estimand::LocoLoss: return "loco-loss";
    case Estimand::MargPermLoss: return "margperm-loss";
    }
    return "?";
}

void EifContext::set_psi_hat(Estimand k, double v) {
    if (!std::isfinite(v)) {
        throw NumericError(std::string("eif: non-finite plug-in value for ") +
                           estimand_name(k));
    }
    psi_[static_cast<int>(k)] = v;
}

double EifContext::eif(Estimand k, std::size_t i) const {
    const PointMoments& pm = m_[i];
    const double y = y_[i];
    const double psi = psi_[static_cast<int>(k)];
    double out = 0.0;
    switch (k) {
    case Estimand::RefLoss: {
        // score term through the conditional mean, plus the centered loss;
        // with the plug-in conditional mean (mu == fhat) the score vanishes
        const double score = -sq_loss_dyhat(y, pm.fhat) * (pm.mu - pm.fhat);
        out = score + sq_loss(y, pm.fhat) - psi;
        break;
    }
    case Estimand::CondPermLoss: {
        if (!has_y_ || !has_x_) {
            throw ConfigError("eif: condperm-loss needs both conditional models");
        }
        // E_y L(y, f(x_i,z_i)) - E_x E_y L(y, f(x,z_i)) + E_x L(y_i, f(x,z_i)) - psi
        const double t2 = pm.ey2 - 2.0 * pm.ey * pm.fhat + pm.fhat * pm.fhat;
        const double t3 = -(pm.ey2 - 2.0 * pm.ey * pm.ef + pm.ef2);
        const double t4 = y * y - 2.0 * y * pm.ef + pm.ef2;
        check_finite(t2, "term t2", k);
        check_finite(t3, "term t3", k);
        check_finite(t4, "term t4", k);
        out = t2 + t3 + t4 - psi;
        break;
    }
    case Estimand::LocoLoss: {
        if (!has_loco_) {
            throw ConfigError("eif: loco-loss needs the x-free learner");
        }
        // the learner is frozen, so only the centered loss survives
        out = sq_loss(y, pm.fz) - psi;
        break;
    }
    case Estimand::MargPermLoss: {
        if (!has_marg_) {
            throw ConfigError("eif: margperm-loss pieces were not prepared");
        }
        out = pm.t2_marg + pm.t3_marg - 2.0 * psi;
        break;
    }
    }
    check_finite(out, "influence value", k);
    return out;
}

double EifContext::plugin(Estimand k) const {
    if (y_.empty()) {
        throw DataError("eif: empty evaluation set");
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < y_.size(); ++i) {
        const PointMoments& pm = m_[i];
        double v = 0.0;
        switch (k) {
        case Estimand::RefLoss:
            v = sq_loss(y_[i], pm.fhat);
            break;
        case Estimand::CondPermLoss:
            if (!has_y_ || !has_x_) {
                throw ConfigError("eif: condperm-loss needs both conditional models");
            }
            v = y_[i] * y_[i] - 2.0 * y_[i] * pm.ef + pm.ef2;
            break;
        case Estimand::LocoLoss:
            if (!has_loco_) {
                throw ConfigError("eif: loco-loss needs the x-free learner");
            }
            v = sq_loss(y_[i], pm.fz);
            break;
        case Estimand::MargPermLoss:
            if (!has_marg_) {
                throw ConfigError("eif: margperm-loss pieces were not prepared");
            }
            v = pm.t2_marg;
            break;
        }
        acc += w_[i] * v;
    }
    check_finite(acc, "plug-in value", k);
    return acc;
}

EifContext EifContext::from_moments(std::vector<double> y, std::vector<double> weights,
                                    std::vector<PointMoments> moments, bool has_y,
                                    bool has_x, bool has_loco, bool has_marg) {
    if (y.empty()) {
        throw DataError("eif: empty evaluation set");
    }
    if (y.size() != weights.size() || y.size() != moments.size()) {
        throw ConfigError("eif: mismatched evaluation arrays");
    }
    EifContext ctx;
    ctx.y_ = std::move(y);
    ctx.w_ = std::move(weights);
    ctx.m_ = std::move(moments);
    ctx.has_y_ = has_y;
    ctx.has_x_ = has_x;
    ctx.has_loco_ = has_loco;
    ctx.has_marg_ = has_marg;
    // center every available influence function at the context's own
    // plug-in; set_psi_hat can re-pin afterwards
    ctx.psi_[static_cast<int>(Estimand::RefLoss)] = ctx.plugin(Estimand::RefLoss);
    if (has_y && has_x)
        ctx.psi_[static_cast<int>(Estimand::CondPermLoss)] =
            ctx.plugin(Estimand::CondPermLoss);
    if (has_loco)
        ctx.psi_[static_cast<int>(Estimand::LocoLoss)] = ctx.plugin(Estimand::LocoLoss);
    if (has_marg)
        ctx.psi_[static_cast<int>(Estimand::MargPermLoss)] =
            ctx.plugin(Estimand::MargPermLoss);
    return ctx;
}

EifContext make_model_context(const Dataset& data, std::span<const std::size_t> rows,
                              const FittedLearner& f, const FittedLearner* f_no_x,
                              const CondDensityModel* px, const CondDensityModel* py,
                              std::size_t m, const FittedLearner* cond_mean,
                              bool with_margperm) {
    if (rows.empty()) {
        throw DataError("eif: empty evaluation set");
    }
    if (m < 2) {
        throw ConfigError("eif: need at least 2 support points per conditional");
    }
    if (with_margperm) {
        if (px == nullptr || py == nullptr) {
            throw ConfigError("eif: margperm-loss needs both conditional models");
        }
        if (px->kind() == DensityKind::Partition) {
            throw ConfigError(
                "eif: margperm-loss requires the gaussian-linear x-conditional; "
                "the partition kind implies an unstable density ratio");
        }
    }

    const std::size_t n = rows.size();
    std::vector<double> yv(n), wv(n, 1.0 / static_cast<double>(n));
    std::vector<PointMoments> mv(n);

    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t r = rows[i];
        const double x = data.x[r];
        const std::span<const double> z = data.z_row(r);
        yv[i] = data.y[r];

        PointMoments& pm = mv[i];
        pm.fhat = f.predict(x, z);
        pm.mu = cond_mean != nullptr ? cond_mean->predict(x, z) : pm.fhat;
        if (f_no_x != nullptr) pm.fz = f_no_x->predict(x, z);

        if (py != nullptr) {
            const WeightedValues sy = py->support_points(z, m);
            double ey = 0.0, ey2 = 0.0;
            for (std::size_t k = 0; k < sy.size(); ++k) {
                ey += sy.weight[k] * sy.value[k];
                ey2 += sy.weight[k] * sy.value[k] * sy.value[k];
            }
            pm.ey = ey;
            pm.ey2 = ey2;
        }
        if (px != nullptr) {
            const WeightedValues sx = px->support_points(z, m);
            double ef = 0.0, ef2 = 0.0;
            for (std::size_t k = 0; k < sx.size(); ++k) {
                const double fv = f.predict(sx.value[k], z);
                ef += sx.weight[k] * fv;
                ef2 += sx.weight[k] * fv * fv;
            }
            pm.ef = ef;
            pm.ef2 = ef2;
        }
        check_finite(pm.fhat, "prediction", Estimand::RefLoss);
    }

    if (with_margperm) {
        // x-marginal as the weight-pooled union of the per-point conditionals
        std::vector<double> xm_val, xm_w;
        xm_val.reserve(n * m);
        xm_w.reserve(n * m);
        for (std::size_t i = 0; i < n; ++i) {
            const WeightedValues sx = px->support_points(data.z_row(rows[i]), m);
            for (std::size_t k = 0; k < sx.size(); ++k) {
                xm_val.push_back(sx.value[k]);
                xm_w.push_back(wv[i] * sx.weight[k]);
            }
        }
        for (std::size_t i = 0; i < n; ++i) {
            const std::span<const double> z = data.z_row(rows[i]);
            double t2 = 0.0;
            for (std::size_t k = 0; k < xm_val.size(); ++k) {
                t2 += xm_w[k] * sq_loss(yv[i], f.predict(xm_val[k], z));
            }
            mv[i].t2_marg = t2;
            check_finite(t2, "term t2", Estimand::MargPermLoss);
        }
        // E over (y,z) of L(y, f(x_i, z)): mixture of the bound points' y|z laws
        for (std::size_t i = 0; i < n; ++i) {
            const double xi = data.x[rows[i]];
            double t3 = 0.0;
            for (std::size_t l = 0; l < n; ++l) {
                const double fv = f.predict(xi, data.z_row(rows[l]));
                t3 += wv[l] * (mv[l].ey2 - 2.0 * mv[l].ey * fv + fv * fv);
            }
            mv[i].t3_marg = t3;
            check_finite(t3, "term t3", Estimand::MargPermLoss);
        }
    }

    return EifContext::from_moments(std::move(yv), std::move(wv), std::move(mv),
                                    py != nullptr, px != nullptr, f_no_x != nullptr,
                                    with_margperm);
}

double eif_ref(const EifContext& ctx, std::size_t i) {
    return ctx.eif(Estimand::RefLoss, i);
}
double eif_condperm(const EifContext& ctx, std::size_t i) {
    return ctx.eif(Estimand::CondPermLoss, i);
}
double eif_loco(const EifContext& ctx, std::size_t i) {
    return ctx.eif(Estimand::LocoLoss, i);
}
double eif_margperm(const EifContext& ctx, std::size_t i) {
    return ctx.eif(Estimand::MargPermLoss, i);
}
double plugin_value(const EifContext& ctx, Estimand k) { return ctx.plugin(k); }

} // namespace tlvi
