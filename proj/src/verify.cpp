#include "tlvi/verify.hpp"

#include <cmath>
#include <cstdlib>
#include <string>

#include "tlvi/data.hpp"
#include "tlvi/errors.hpp"

namespace tlvi {

namespace {

bool same_z(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i] != b[i]) return false;
    }
    return true;
}

// stratum id per support point under exact z equality
std::vector<std::size_t> strata_of(const DiscreteJoint& dist) {
    std::vector<std::size_t> id(dist.size());
    std::vector<const std::vector<double>*> keys;
    for (std::size_t i = 0; i < dist.size(); ++i) {
        std::size_t s = keys.size();
        for (std::size_t k = 0; k < keys.size(); ++k) {
            if (same_z(*keys[k], dist.support[i].z)) {
                s = k;
                break;
            }
        }
        if (s == keys.size()) keys.push_back(&dist.support[i].z);
        id[i] = s;
    }
    return id;
}

// estimand under explicit masses, written as plain nested sums on purpose:
// this is the oracle the factorized kernels are judged against
double estimand_with_probs(const DiscreteJoint& dist, const std::vector<double>& p,
                           Estimand kind, const FittedLearner& f,
                           const FittedLearner* f_no_x) {
    const std::size_t n = dist.size();
    switch (kind) {
    case Estimand::RefLoss: {
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const DiscretePoint& a = dist.support[i];
            acc += p[i] * sq_loss(a.y, f.predict(a.x, a.z));
        }
        return acc;
    }
    case Estimand::LocoLoss: {
        if (f_no_x == nullptr) {
            throw ConfigError("verify: loco-loss needs the x-free learner");
        }
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const DiscretePoint& a = dist.support[i];
            acc += p[i] * sq_loss(a.y, f_no_x->predict(a.x, a.z));
        }
        return acc;
    }
    case Estimand::CondPermLoss: {
        // sum over z strata of (1/pz) * sum_{i,j in stratum} p_i p_j L(y_i, f(x_j, z))
        const std::vector<std::size_t> sid = strata_of(dist);
        std::size_t n_strata = 0;
        for (std::size_t s : sid) n_strata = std::max(n_strata, s + 1);
        double acc = 0.0;
        for (std::size_t s = 0; s < n_strata; ++s) {
            double pz = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (sid[i] == s) pz += p[i];
            }
            if (pz <= 0.0) continue;
            double cell = 0.0;
            for (std::size_t i = 0; i < n; ++i) {
                if (sid[i] != s) continue;
                for (std::size_t j = 0; j < n; ++j) {
                    if (sid[j] != s) continue;
                    cell += p[i] * p[j] *
                            sq_loss(dist.support[i].y,
                                    f.predict(dist.support[j].x, dist.support[i].z));
                }
            }
            acc += cell / pz;
        }
        return acc;
    }
    case Estimand::MargPermLoss: {
        // x' from the x marginal, (y, z) from the joint, all independent
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < n; ++j) {
                acc += p[i] * p[j] *
                       sq_loss(dist.support[i].y,
                               f.predict(dist.support[j].x, dist.support[i].z));
            }
        }
        return acc;
    }
    }
    return 0.0;
}

} // namespace

void DiscreteJoint::validate() const {
    if (support.empty()) {
        throw DataError("verify: empty discrete support");
    }
    if (support.size() > 50) {
        throw ConfigError("verify: discrete support capped at 50 points, got " +
                          std::to_string(support.size()));
    }
    if (probs.size() != support.size()) {
        throw ConfigError("verify: probs/support size mismatch");
    }
    double sum = 0.0;
    for (double v : probs) {
        if (!(v > 0.0)) {
            throw DataError("verify: all masses must be positive");
        }
        sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-12) {
        throw DataError("verify: masses sum to " + format_double(sum) + ", expected 1");
    }
    for (const DiscretePoint& a : support) {
        if (a.z.size() != dz) {
            throw DataError("verify: inconsistent z dimension in support");
        }
    }
    for (std::size_t i = 0; i < support.size(); ++i) {
        for (std::size_t j = i + 1; j < support.size(); ++j) {
            const DiscretePoint& a = support[i];
            const DiscretePoint& b = support[j];
            if (a.x == b.x && a.y == b.y && same_z(a.z, b.z)) {
                throw DataError("verify: duplicate support point at indices " +
                                std::to_string(i) + " and " + std::to_string(j));
            }
        }
    }
}

double exact_estimand(const DiscreteJoint& dist, Estimand kind, const FittedLearner& f,
                      const FittedLearner* f_no_x) {
    dist.validate();
    return estimand_with_probs(dist, dist.probs, kind, f, f_no_x);
}

double gateaux_fd(const DiscreteJoint& dist, Estimand kind, const FittedLearner& f,
                  std::size_t j, double t, const FittedLearner* f_no_x) {
    dist.validate();
    if (j >= dist.size()) {
        throw ConfigError("verify: support index out of range");
    }
    if (!(t > 0.0)) {
        throw ConfigError("verify: step must be positive");
    }
    double pmin = dist.probs[0];
    for (double v : dist.probs) pmin = std::min(pmin, v);
    const double denom = 1.0 - dist.probs[j];
    if (denom > 0.0) {
        const double bound = pmin / denom;
        if (t >= bound) {
            throw NumericError("verify: step " + format_double(t) +
                               " breaks mass positivity; need t < " +
                               format_double(bound));
        }
    }
    const std::size_t n = dist.size();
    std::vector<double> up(n), dn(n);
    for (std::size_t k = 0; k < n; ++k) {
        up[k] = (1.0 - t) * dist.probs[k];
        dn[k] = (1.0 + t) * dist.probs[k];
    }
    up[j] += t;
    dn[j] -= t;
    const double hi = estimand_with_probs(dist, up, kind, f, f_no_x);
    const double lo = estimand_with_probs(dist, dn, kind, f, f_no_x);
    return (hi - lo) / (2.0 * t);
}

EifContext make_exact_context(const DiscreteJoint& dist, const FittedLearner& f,
                              const FittedLearner* f_no_x,
                              const FittedLearner* cond_mean) {
    dist.validate();
    const std::size_t n = dist.size();
    const std::vector<std::size_t> sid = strata_of(dist);

    std::vector<double> yv(n);
    std::vector<PointMoments> mv(n);
    for (std::size_t i = 0; i < n; ++i) {
        const DiscretePoint& a = dist.support[i];
        yv[i] = a.y;
        PointMoments& pm = mv[i];
        pm.fhat = f.predict(a.x, a.z);
        pm.mu = cond_mean != nullptr ? cond_mean->predict(a.x, a.z) : pm.fhat;
        if (f_no_x != nullptr) pm.fz = f_no_x->predict(a.x, a.z);

        double pz = 0.0, ey = 0.0, ey2 = 0.0, ef = 0.0, ef2 = 0.0;
        for (std::size_t l = 0; l < n; ++l) {
            if (sid[l] != sid[i]) continue;
            const double pl = dist.probs[l];
            pz += pl;
            ey += pl * dist.support[l].y;
            ey2 += pl * dist.support[l].y * dist.support[l].y;
            const double fv = f.predict(dist.support[l].x, a.z);
            ef += pl * fv;
            ef2 += pl * fv * fv;
        }
        pm.ey = ey / pz;
        pm.ey2 = ey2 / pz;
        pm.ef = ef / pz;
        pm.ef2 = ef2 / pz;

        double t2m = 0.0, t3m = 0.0;
        for (std::size_t l = 0; l < n; ++l) {
            const double pl = dist.probs[l];
            t2m += pl * sq_loss(a.y, f.predict(dist.support[l].x, a.z));
            t3m += pl * sq_loss(dist.support[l].y, f.predict(a.x, dist.support[l].z));
        }
        pm.t2_marg = t2m;
        pm.t3_marg = t3m;
    }
    return EifContext::from_moments(std::move(yv), dist.probs, std::move(mv),
                                    /*has_y=*/true, /*has_x=*/true,
                                    /*has_loco=*/f_no_x != nullptr,
                                    /*has_marg=*/true);
}

DiscreteJoint random_discrete_joint(Rng& rng, std::size_t n_points,
                                    std::size_t n_strata, std::size_t dz) {
    if (n_points == 0 || n_points > 50) {
        throw ConfigError("verify: support size must be in [1, 50]");
    }
    if (n_strata == 0 || dz == 0) {
        throw ConfigError("verify: need at least one stratum and dz >= 1");
    }
    DiscreteJoint dist;
    dist.dz = dz;
    std::vector<std::vector<double>> keys(n_strata);
    for (std::size_t s = 0; s < n_strata; ++s) {
        keys[s].resize(dz);
        for (std::size_t d = 0; d < dz; ++d) keys[s][d] = rng.normal();
    }
    dist.support.resize(n_points);
    dist.probs.resize(n_points);
    double sum = 0.0;
    for (std::size_t i = 0; i < n_points; ++i) {
        DiscretePoint& a = dist.support[i];
        a.x = rng.normal();
        a.y = rng.normal();
        // round-robin base assignment keeps every stratum populated
        const std::size_t s = i < n_strata ? i : rng.below(n_strata);
        a.z = keys[s];
        dist.probs[i] = 0.5 + rng.uniform();
        sum += dist.probs[i];
    }
    for (double& v : dist.probs) v /= sum;
    // continuous draws collide with probability zero, but stay defensive
    dist.validate();
    return dist;
}

std::vector<EifCheckRow> run_eif_check(std::size_t trials, std::uint64_t seed) {
    if (trials == 0) {
        throw ConfigError("verify: need at least one trial");
    }
    constexpr double kStep = 1e-5;
    const Estimand kinds[4] = {Estimand::RefLoss, Estimand::CondPermLoss,
                               Estimand::LocoLoss, Estimand::MargPermLoss};
    std::vector<EifCheckRow> rows(4);
    for (int k = 0; k < 4; ++k) {
        rows[k].kind = kinds[k];
        rows[k].trials = trials;
        rows[k].tol = kinds[k] == Estimand::MargPermLoss ? 1e-3 : 1e-4;
    }

    Rng rng(seed);
    for (std::size_t trial = 0; trial < trials; ++trial) {
        const std::size_t dz = 1 + trial % 2;
        const std::size_t n_strata = 2 + rng.below(3);
        const std::size_t n_points = 2 * n_strata + rng.below(7);
        const DiscreteJoint dist = random_discrete_joint(rng, n_points, n_strata, dz);

        std::vector<double> cz(dz), gz(dz);
        for (std::size_t d = 0; d < dz; ++d) {
            cz[d] = rng.normal();
            gz[d] = rng.normal();
        }
        const FittedLearner f = FittedLearner::linear(rng.normal(), rng.normal(), cz);
        const FittedLearner g = FittedLearner::linear(rng.normal(), 0.0, gz);

        EifContext ctx = make_exact_context(dist, f, &g);
        for (int k = 0; k < 4; ++k) {
            const Estimand kind = kinds[k];
            ctx.set_psi_hat(kind, ctx.plugin(kind));
            double mean = 0.0;
            for (std::size_t j = 0; j < dist.size(); ++j) {
                const double psi = ctx.eif(kind, j);
                const double fd = gateaux_fd(dist, kind, f, j, kStep, &g);
                const double rel = std::abs(psi - fd) / (1.0 + std::abs(psi));
                rows[k].max_rel_err = std::max(rows[k].max_rel_err, rel);
                mean += dist.probs[j] * psi;
            }
            rows[k].max_mean_abs = std::max(rows[k].max_mean_abs, std::abs(mean));
        }
    }
    for (EifCheckRow& r : rows) {
        r.pass = r.max_rel_err <= r.tol && r.max_mean_abs <= 1e-10;
    }
    return rows;
}

} // namespace tlvi
