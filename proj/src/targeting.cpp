#include "tlvi/targeting.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "tlvi/errors.hpp"

namespace tlvi {

namespace {

struct BlockStats {
    double ey = 0.0, ey2 = 0.0, ef = 0.0, ef2 = 0.0;
    double a_joint = 0.0; // E L(y, fh) under the within-block joint
    double a_prod() const { return ey2 - 2.0 * ey * ef + ef2; }
};

// block-centered fluctuation direction at one atom; free of the plug-in
double tilde_at(Estimand kind, bool subtract_ref, const BlockStats& b, double y,
                double fh) {
    const double cp = (b.ey2 - 2.0 * b.ey * fh + fh * fh) +
                      (y * y - 2.0 * y * b.ef + b.ef2) - 2.0 * b.a_prod();
    if (kind == Estimand::RefLoss) return sq_loss(y, fh) - b.a_joint;
    if (subtract_ref) return cp - (sq_loss(y, fh) - b.a_joint);
    return cp;
}

std::vector<BlockStats> block_stats(const FluctuationSupport& s) {
    std::vector<BlockStats> st(s.n_blocks);
    std::vector<double> mass(s.n_blocks, 0.0);
    for (std::size_t j = 0; j < s.n_atoms(); ++j) mass[s.block[j]] += s.w[j];
    for (std::size_t j = 0; j < s.n_atoms(); ++j) {
        const std::size_t b = s.block[j];
        if (mass[b] <= 0.0) {
            throw NumericError("targeting: z-block " + std::to_string(b) +
                               " lost all its mass");
        }
        const double v = s.w[j] / mass[b];
        BlockStats& o = st[b];
        o.ey += v * s.y[j];
        o.ey2 += v * s.y[j] * s.y[j];
        o.ef += v * s.fh[j];
        o.ef2 += v * s.fh[j] * s.fh[j];
        o.a_joint += v * sq_loss(s.y[j], s.fh[j]);
    }
    return st;
}

void check_target_kind(Estimand kind, bool subtract_ref) {
    if (kind != Estimand::CondPermLoss && kind != Estimand::RefLoss) {
        throw ConfigError(std::string("targeting: functional ") + estimand_name(kind) +
                          " is not targetable");
    }
    if (subtract_ref && kind != Estimand::CondPermLoss) {
        throw ConfigError("targeting: the reference loss is subtracted from the "
                          "condperm loss only");
    }
}

} // namespace

std::vector<std::size_t> FluctuationSupport::observed_indices() const {
    std::vector<std::size_t> out;
    for (std::size_t j = 0; j < n_atoms(); ++j) {
        if (observed[j]) out.push_back(j);
    }
    return out;
}

void FluctuationSupport::validate() const {
    const std::size_t n = w.size();
    if (n < 2) {
        throw DataError("targeting: support needs at least 2 atoms");
    }
    if (x.size() != n || y.size() != n || fh.size() != n || block.size() != n ||
        observed.size() != n) {
        throw DataError("targeting: support arrays disagree in length");
    }
    double sum = 0.0;
    for (double v : w) {
        if (!(v >= 0.0)) {
            throw DataError("targeting: negative or non-finite support weight");
        }
        sum += v;
    }
    // accumulated rounding grows with the atom count
    const double tol =
        std::max(1e-12, 8.0 * static_cast<double>(n) *
                            std::numeric_limits<double>::epsilon());
    if (std::abs(sum - 1.0) > tol) {
        throw DataError("targeting: support weights sum to " + format_double(sum));
    }
    if (zrows.size() != n_blocks * dz) {
        throw DataError("targeting: block z storage size mismatch");
    }
    for (std::uint32_t b : block) {
        if (b >= n_blocks) throw DataError("targeting: atom block id out of range");
    }
}

FluctuationSupport build_support(const Dataset& data, std::span<const std::size_t> rows,
                                 const FittedLearner& f, const CondDensityModel& px,
                                 const CondDensityModel& py, std::size_t m, Rng& rng) {
    if (rows.empty()) {
        throw DataError("targeting: no rows to build the support from");
    }
    if (m < 2) {
        throw ConfigError("targeting: need at least 2 synthetic draws per block");
    }
    FluctuationSupport s;
    s.dz = data.dz;
    s.n_blocks = rows.size();
    s.learner = &f;
    s.px = &px;
    s.py = &py;
    const double n = static_cast<double>(rows.size());
    const std::size_t total = rows.size() * (m + 1);
    s.x.reserve(total);
    s.y.reserve(total);
    s.fh.reserve(total);
    s.w.reserve(total);
    s.block.reserve(total);
    s.observed.reserve(total);
    s.zrows.reserve(rows.size() * data.dz);
    for (std::size_t b = 0; b < rows.size(); ++b) {
        const std::size_t r = rows[b];
        const std::span<const double> z = data.z_row(r);
        s.zrows.insert(s.zrows.end(), z.begin(), z.end());
        // the observation: likelihood anchor, no working-distribution mass
        s.x.push_back(data.x[r]);
        s.y.push_back(data.y[r]);
        s.fh.push_back(f.predict(data.x[r], z));
        s.w.push_back(0.0);
        s.block.push_back(static_cast<std::uint32_t>(b));
        s.observed.push_back(1);
        for (std::size_t k = 0; k < m; ++k) {
            const double xs = px.sample(z, rng);
            const double ys = py.sample(z, rng);
            s.x.push_back(xs);
            s.y.push_back(ys);
            s.fh.push_back(f.predict(xs, z));
            s.w.push_back(1.0 / (n * static_cast<double>(m)));
            s.block.push_back(static_cast<std::uint32_t>(b));
            s.observed.push_back(0);
        }
    }
    s.validate();
    return s;
}

SupportScores eval_support_eif(const FluctuationSupport& s, Estimand kind,
                               bool subtract_ref) {
    check_target_kind(kind, subtract_ref);
    const std::vector<BlockStats> st = block_stats(s);
    std::vector<double> mass(s.n_blocks, 0.0);
    for (std::size_t j = 0; j < s.n_atoms(); ++j) mass[s.block[j]] += s.w[j];

    auto block_value = [&](const BlockStats& b) {
        if (kind == Estimand::RefLoss) return b.a_joint;
        if (subtract_ref) return b.a_prod() - b.a_joint;
        return b.a_prod();
    };
    double psi_hat = 0.0;
    for (std::size_t b = 0; b < s.n_blocks; ++b) psi_hat += mass[b] * block_value(st[b]);
    if (!std::isfinite(psi_hat)) {
        throw NumericError("targeting: non-finite plug-in over the support");
    }

    SupportScores out;
    out.psi_hat = psi_hat;
    out.psi.resize(s.n_atoms());
    out.psi_tilde.resize(s.n_atoms());
    for (std::size_t j = 0; j < s.n_atoms(); ++j) {
        const BlockStats& b = st[s.block[j]];
        const double t = tilde_at(kind, subtract_ref, b, s.y[j], s.fh[j]);
        out.psi_tilde[j] = t;
        out.psi[j] = t + block_value(b) - psi_hat;
    }
    return out;
}

std::pair<double, double> epsilon_mle(const FluctuationSupport& s,
                                      const std::vector<double>& psi,
                                      std::span<const std::size_t> fit) {
    if (psi.size() != s.n_atoms()) {
        throw ConfigError("targeting: influence vector does not match the support");
    }
    if (fit.empty()) {
        throw ConfigError("targeting: empty fit set");
    }
    for (std::size_t i : fit) {
        if (i >= s.n_atoms() || !s.observed[i]) {
            throw ConfigError("targeting: fit indices must point at observed atoms");
        }
    }
    bool all_zero = true;
    for (double v : psi) {
        if (v != 0.0) {
            all_zero = false;
            break;
        }
    }
    if (all_zero) return {0.0, 1.0};

    // open interval keeping 1 + eps*psi_j > 0 for every atom
    double lo = -1e6, hi = 1e6;
    for (double v : psi) {
        if (v > 0.0) lo = std::max(lo, -1.0 / v);
        if (v < 0.0) hi = std::min(hi, -1.0 / v);
    }
    lo *= 0.999;
    hi *= 0.999;

    double cprime = 0.0; // c(eps) = 1 + eps * sum_j w_j psi_j
    for (std::size_t j = 0; j < s.n_atoms(); ++j) cprime += s.w[j] * psi[j];
    const double nfit = static_cast<double>(fit.size());

    auto deriv = [&](double e) {
        double d = 0.0;
        for (std::size_t i : fit) d += psi[i] / (1.0 + e * psi[i]);
        return d - nfit * cprime / (1.0 + e * cprime);
    };
    auto value = [&](double e) {
        double g = 0.0;
        for (std::size_t i : fit) g += std::log1p(e * psi[i]);
        return g - nfit * std::log1p(e * cprime);
    };

    double dlo = deriv(lo), dhi = deriv(hi);
    double eps;
    if (dlo <= 0.0 && dhi <= 0.0) {
        eps = lo; // objective decreasing over the whole interval
    } else if (dlo >= 0.0 && dhi >= 0.0) {
        eps = hi;
    } else if (dlo < 0.0 && dhi > 0.0) {
        // non-concave anomaly: fall back to the better endpoint (never 0-worse)
        eps = value(lo) >= value(hi) ? lo : hi;
        if (value(eps) < 0.0) eps = 0.0;
    } else {
        for (int it = 0; it < 200; ++it) {
            const double mid = 0.5 * (lo + hi);
            const double d = deriv(mid);
            if (std::abs(d) <= 1e-10 || mid == lo || mid == hi) {
                lo = hi = mid;
                break;
            }
            if (d > 0.0) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        eps = 0.5 * (lo + hi);
    }
    return {eps, 1.0 + eps * cprime};
}

FluctuationSupport apply_fluctuation(FluctuationSupport s,
                                     const std::vector<double>& psi, double eps,
                                     double c) {
    if (psi.size() != s.n_atoms()) {
        throw ConfigError("targeting: influence vector does not match the support");
    }
    if (eps == 0.0) return s;
    if (!(c > 0.0)) {
        throw NumericError("targeting: nonpositive normalizer");
    }
    double sum = 0.0;
    for (std::size_t j = 0; j < s.n_atoms(); ++j) {
        const double nw = s.w[j] * (1.0 + eps * psi[j]) / c;
        if (nw < 0.0) {
            throw NumericError("targeting: negative weight after update; the step "
                               "left the admissible interval");
        }
        s.w[j] = nw;
        sum += nw;
    }
    for (double& v : s.w) v /= sum;
    return s;
}

namespace {

// history of one applied step, enough to re-evaluate its fluctuation
// direction at freshly drawn atoms
struct StepRecord {
    double eps = 0.0;
    std::vector<BlockStats> stats;
};

void redraw_synthetic(FluctuationSupport& s, Estimand kind, bool subtract_ref,
                      const std::vector<StepRecord>& history, Rng& rng) {
    if (s.px == nullptr || s.py == nullptr || s.learner == nullptr) {
        throw ConfigError("targeting: support lacks the fitted models needed for "
                          "fresh redraws");
    }
    std::vector<double> mass(s.n_blocks, 0.0);
    for (std::size_t j = 0; j < s.n_atoms(); ++j) mass[s.block[j]] += s.w[j];

    // accumulated tilt of the working conditional, floored at zero where a
    // fresh draw lands outside the fluctuated region
    std::vector<double> raw(s.n_atoms(), 0.0);
    std::vector<double> rawsum(s.n_blocks, 0.0);
    for (std::size_t j = 0; j < s.n_atoms(); ++j) {
        if (s.observed[j]) continue;
        const std::size_t b = s.block[j];
        const std::span<const double> z = s.z_of_block(b);
        s.x[j] = s.px->sample(z, rng);
        s.y[j] = s.py->sample(z, rng);
        s.fh[j] = s.learner->predict(s.x[j], z);
        double t = 1.0;
        for (const StepRecord& rec : history) {
            t *= 1.0 + rec.eps * tilde_at(kind, subtract_ref, rec.stats[b], s.y[j],
                                          s.fh[j]);
            if (t <= 0.0) {
                t = 0.0;
                break;
            }
        }
        raw[j] = t;
        rawsum[b] += t;
    }
    for (std::size_t j = 0; j < s.n_atoms(); ++j) {
        if (s.observed[j]) continue;
        const std::size_t b = s.block[j];
        if (rawsum[b] <= 0.0) {
            throw NumericError("targeting: every fresh draw of z-block " +
                               std::to_string(b) + " fell outside the fluctuated "
                               "support");
        }
        s.w[j] = mass[b] * raw[j] / rawsum[b];
    }
}

} // namespace

TargetingTrace target(FluctuationSupport& s, std::span<const std::size_t> fit,
                      const TargetOptions& opt, Rng* rng) {
    check_target_kind(opt.kind, opt.subtract_ref);
    s.validate();
    if (fit.size() < 2) {
        throw ConfigError("targeting: need at least 2 fit points");
    }
    for (std::size_t i : fit) {
        if (i >= s.n_atoms() || !s.observed[i]) {
            throw ConfigError("targeting: fit indices must point at observed atoms");
        }
    }
    if (opt.fresh_draws && rng == nullptr) {
        throw ConfigError("targeting: fresh redraws need a random stream");
    }

    const double nfit = static_cast<double>(fit.size());
    TargetingTrace trace;
    std::vector<StepRecord> history;
    double loglik = 0.0;

    // Fresh redraws make the scored mean noisy (every redraw re-estimates the
    // block moments), so the last iterate is arbitrary: keep the scored state
    // with the smallest |mean| and stop once several redraws fail to beat it.
    struct BestState {
        std::vector<double> x, y, fh, w;
        double psi = 0.0, mean = 0.0, sd = 0.0;
        std::size_t steps = 0;
        bool set = false;
    } best;
    std::size_t since_best = 0;
    constexpr std::size_t kStallRedraws = 5;

    for (std::size_t iter = 0;; ++iter) {
        if (opt.fresh_draws && iter > 0) {
            redraw_synthetic(s, opt.kind, opt.subtract_ref, history, *rng);
        }
        const std::vector<BlockStats> st = block_stats(s);
        SupportScores scores = eval_support_eif(s, opt.kind, opt.subtract_ref);

        double mean = 0.0;
        for (std::size_t i : fit) mean += scores.psi[i];
        mean /= nfit;
        double var = 0.0;
        for (std::size_t i : fit) {
            var += (scores.psi[i] - mean) * (scores.psi[i] - mean);
        }
        const double sd = std::sqrt(var / nfit);
        const double threshold = opt.tol == TolKind::TmleStandard
                                     ? sd / (std::sqrt(nfit) * std::log(nfit))
                                     : 1e-9;

        trace.final_psi = scores.psi_hat;
        trace.final_mean = mean;
        trace.final_sd = sd;
        trace.threshold = threshold;

        if (opt.fresh_draws) {
            if (!best.set || std::abs(mean) < std::abs(best.mean)) {
                best = {s.x, s.y, s.fh, s.w, scores.psi_hat, mean, sd,
                        trace.rows.size(), true};
                since_best = 0;
            } else {
                ++since_best;
            }
        }

        if (std::abs(mean) <= threshold) {
            trace.converged = true;
            break;
        }
        if (opt.fresh_draws && since_best >= kStallRedraws) {
            trace.converged = false;
            break;
        }
        if (iter >= opt.max_iter) {
            trace.converged = false;
            break;
        }

        const auto [eps, c] = epsilon_mle(s, scores.psi_tilde, fit);
        if (opt.tol == TolKind::TmleStandard && std::abs(eps) <= 1e-7) {
            trace.converged = true; // flat likelihood: nothing left to move
            break;
        }
        if (opt.tol == TolKind::Strict && std::abs(eps) <= 1e-12) {
            trace.converged = false; // stuck short of the strict mean criterion
            break;
        }
        double inc = 0.0;
        for (std::size_t i : fit) inc += std::log1p(eps * scores.psi_tilde[i]);
        inc -= nfit * std::log(c);
        // the exact MLE step cannot lose likelihood; tolerate summation dust
        if (inc < -1e-13 * nfit) {
            trace.converged = false;
            break;
        }
        inc = std::max(inc, 0.0);

        s = apply_fluctuation(std::move(s), scores.psi_tilde, eps, c);
        history.push_back({eps, st});
        loglik += inc;
        TraceRow row;
        row.iter = trace.rows.size() + 1;
        row.epsilon = eps;
        row.mean_eif = mean;
        row.loglik = loglik;
        row.psi_hat = eval_support_eif(s, opt.kind, opt.subtract_ref).psi_hat;
        trace.rows.push_back(row);
    }
    trace.k_n = trace.rows.size();
    if (opt.fresh_draws && !trace.converged && best.set &&
        std::abs(best.mean) < std::abs(trace.final_mean)) {
        s.x = std::move(best.x);
        s.y = std::move(best.y);
        s.fh = std::move(best.fh);
        s.w = std::move(best.w);
        trace.final_psi = best.psi;
        trace.final_mean = best.mean;
        trace.final_sd = best.sd;
        trace.threshold = opt.tol == TolKind::TmleStandard
                              ? best.sd / (std::sqrt(nfit) * std::log(nfit))
                              : 1e-9;
        trace.k_n = best.steps;
    }
    return trace;
}

} // namespace tlvi
