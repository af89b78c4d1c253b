#include "tlvi/sim.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>
#include <thread>

#include <Eigen/Dense>

#include "tlvi/errors.hpp"
#include "tlvi/rng.hpp"

namespace tlvi {

void DgpSpec::validate() const {
    if (n < 10) throw ConfigError("sim: need n >= 10, got " + std::to_string(n));
    if (d < 2) throw ConfigError("sim: need d >= 2 covariates, got " + std::to_string(d));
    if (!(rho >= 0.0 && rho < 1.0))
        throw ConfigError("sim: rho must lie in [0, 1), got " + format_double(rho));
    if (!std::isfinite(beta)) throw ConfigError("sim: beta must be finite");
    if (!(noise_sd >= 0.0) || !std::isfinite(noise_sd))
        throw ConfigError("sim: noise sd must be finite and >= 0");
}

Dataset generate(const DgpSpec& spec) {
    spec.validate();
    const auto d = static_cast<Eigen::Index>(spec.d);
    Eigen::MatrixXd sigma = Eigen::MatrixXd::Constant(d, d, spec.rho);
    sigma.diagonal().setOnes();
    Eigen::LLT<Eigen::MatrixXd> llt(sigma);
    if (llt.info() != Eigen::Success)
        throw ConfigError("sim: equicorrelated covariance is not positive definite");
    const Eigen::MatrixXd chol = llt.matrixL();

    Dataset out;
    out.dz = spec.d - 1;
    out.x.reserve(spec.n);
    out.y.reserve(spec.n);
    out.z.reserve(spec.n * out.dz);
    Rng rng(splitmix64(spec.seed));
    Eigen::VectorXd g(d);
    for (std::size_t i = 0; i < spec.n; ++i) {
        for (Eigen::Index j = 0; j < d; ++j) g[j] = rng.normal();
        const Eigen::VectorXd u = chol * g;
        out.x.push_back(u[0]);
        for (Eigen::Index j = 1; j < d; ++j) out.z.push_back(u[j]);
        out.y.push_back(spec.beta * u[0] + spec.noise_sd * rng.normal());
    }
    out.validate();
    return out;
}

double true_importance(const DgpSpec& spec, Target kind) {
    spec.validate();
    if (spec.d != 2)
        throw ConfigError("sim: closed-form importance needs the two-covariate design");
    const double b2 = spec.beta * spec.beta;
    const double r2 = 1.0 - spec.rho * spec.rho;
    switch (kind) {
        case Target::CondPermImportance: return 2.0 * b2 * r2;
        case Target::LocoImportance: return b2 * r2;
        case Target::MargPermImportance: return 2.0 * b2;
        default:
            throw ConfigError("sim: no closed-form value for target '" +
                              std::string(target_name(kind)) + "'");
    }
}

void ExperimentConfig::validate() const {
    if (grid.empty()) throw ConfigError("sim: empty correlation grid");
    for (double r : grid) {
        if (!(r >= 0.0 && r < 1.0))
            throw ConfigError("sim: grid correlation out of [0, 1): " + format_double(r));
    }
    if (reps < 1) throw ConfigError("sim: need reps >= 1");
    if (estimators.empty()) throw ConfigError("sim: need at least one estimator");
    DgpSpec probe;
    probe.n = n;
    probe.d = d;
    probe.rho = grid.front();
    probe.beta = beta;
    probe.noise_sd = noise_sd;
    probe.validate();
    true_importance(probe, target); // rejects targets without a closed form
}

namespace {

// fixed counter scheme: replication (gi, rep) owns a data seed and an
// estimation seed derived only from the master seed and its indices
std::uint64_t rep_data_seed(std::uint64_t master, std::size_t counter) {
    return splitmix64(master + 0x9E3779B97F4A7C15ULL * (counter + 1));
}
std::uint64_t rep_estimate_seed(std::uint64_t data_seed) {
    return splitmix64(data_seed ^ 0xD1B54A32D192ED03ULL);
}

std::string sanitize_error(const char* what) {
    std::string s(what);
    for (char& c : s) {
        if (c == ',' || c == '\n' || c == '\r') c = ';';
    }
    return s;
}

std::vector<CellAggregate> recompute_aggregates(const ExperimentConfig& cfg,
                                                const std::vector<RepRow>& rows) {
    std::vector<CellAggregate> out;
    const std::size_t E = cfg.estimators.size();
    const std::size_t R = cfg.reps;
    for (std::size_t gi = 0; gi < cfg.grid.size(); ++gi) {
        for (std::size_t ei = 0; ei < E; ++ei) {
            CellAggregate a;
            a.rho = cfg.grid[gi];
            a.estimator = cfg.estimators[ei];
            a.reps = R;
            double cov = 0, bias = 0, width = 0, k = 0;
            std::size_t usable = 0;
            for (std::size_t r = 0; r < R; ++r) {
                const RepRow& row = rows[(gi * E + ei) * R + r];
                if (row.failed) {
                    ++a.failed;
                    continue;
                }
                if (row.converged) ++a.converged;
                else continue; // counted above, kept out of the rates
                ++usable;
                cov += row.covered ? 1.0 : 0.0;
                bias += row.bias;
                width += row.ci_hi - row.ci_lo;
                k += static_cast<double>(row.k_n);
            }
            const double den = usable ? static_cast<double>(usable)
                                      : std::numeric_limits<double>::quiet_NaN();
            a.coverage = cov / den;
            a.mean_bias = bias / den;
            a.mean_width = width / den;
            a.mean_k = k / den;
            out.push_back(a);
        }
    }
    return out;
}

} // namespace

void ExperimentResult::validate() const {
    config.validate();
    const std::size_t E = config.estimators.size();
    const std::size_t R = config.reps;
    if (rows.size() != config.grid.size() * E * R)
        throw NumericError("sim: row count does not match the grid");
    for (std::size_t gi = 0; gi < config.grid.size(); ++gi) {
        for (std::size_t ei = 0; ei < E; ++ei) {
            for (std::size_t r = 0; r < R; ++r) {
                const RepRow& row = rows[(gi * E + ei) * R + r];
                if (row.rho != config.grid[gi] || row.estimator != config.estimators[ei] ||
                    row.rep != r)
                    throw NumericError("sim: rows are out of (rho, estimator, rep) order");
            }
        }
    }
    const std::vector<CellAggregate> again = recompute_aggregates(config, rows);
    if (again.size() != aggregates.size())
        throw NumericError("sim: aggregate count does not match the grid");
    for (std::size_t i = 0; i < again.size(); ++i) {
        const CellAggregate &a = aggregates[i], &b = again[i];
        const bool same_nan = std::isnan(a.coverage) && std::isnan(b.coverage);
        if (a.reps != b.reps || a.converged != b.converged || a.failed != b.failed ||
            (!same_nan && a.coverage != b.coverage) ||
            (!std::isnan(a.mean_bias) && a.mean_bias != b.mean_bias))
            throw NumericError("sim: aggregates do not recompute from the rows");
        if (!std::isnan(a.coverage) && (a.coverage < 0.0 || a.coverage > 1.0))
            throw NumericError("sim: coverage rate out of [0, 1]");
    }
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    const std::size_t G = cfg.grid.size();
    const std::size_t E = cfg.estimators.size();
    const std::size_t R = cfg.reps;

    ExperimentResult res;
    res.config = cfg;
    res.rows.resize(G * E * R);

    // one task per (rho, rep): the dataset is generated once and handed to
    // every estimator, so the comparison is on identical data
    const std::size_t tasks = G * R;
    const auto run_task = [&](std::size_t t) {
        const std::size_t gi = t / R;
        const std::size_t r = t % R;
        DgpSpec spec;
        spec.n = cfg.n;
        spec.d = cfg.d;
        spec.rho = cfg.grid[gi];
        spec.beta = cfg.beta;
        spec.noise_sd = cfg.noise_sd;
        spec.seed = rep_data_seed(cfg.seed, t);
        const double truth = true_importance(spec, cfg.target);

        Dataset data;
        std::string gen_error;
        try {
            data = generate(spec);
        } catch (const Error& e) {
            gen_error = sanitize_error(e.what());
        }

        for (std::size_t ei = 0; ei < E; ++ei) {
            RepRow row;
            row.rho = spec.rho;
            row.estimator = cfg.estimators[ei];
            row.rep = r;
            row.data_seed = spec.seed;
            row.truth = truth;
            if (!gen_error.empty()) {
                row.failed = true;
                row.error = gen_error;
            } else {
                EstimateOptions opt = cfg.base;
                opt.target = cfg.target;
                opt.estimator = cfg.estimators[ei];
                opt.seed = rep_estimate_seed(spec.seed);
                try {
                    // every estimator in a rep gets the same equal-thirds
                    // plan, hence the same trained models: the comparison is
                    // about the correction step, not the fit
                    const SplitPlan plan = make_split(data.n(), 3, opt.seed);
                    const EstimateReport rep =
                        opt.estimator == EstimatorKind::Tmle
                            ? estimate_tmle(data, plan, opt)
                        : opt.estimator == EstimatorKind::OneStep
                            ? estimate_onestep(data, plan, opt)
                            : estimate_plugin(data, plan, opt);
                    row.point = rep.point;
                    row.se = rep.se;
                    row.ci_lo = rep.ci_lo;
                    row.ci_hi = rep.ci_hi;
                    row.bias = rep.point - truth;
                    row.covered = rep.ci_lo <= truth && truth <= rep.ci_hi;
                    row.k_n = rep.k_n;
                    row.converged = rep.converged;
                } catch (const Error& e) {
                    row.failed = true;
                    row.error = sanitize_error(e.what());
                    row.point = row.se = row.ci_lo = row.ci_hi = row.bias =
                        std::numeric_limits<double>::quiet_NaN();
                }
            }
            res.rows[(gi * E + ei) * R + r] = std::move(row);
        }
    };

    std::size_t workers = cfg.threads == 0
                              ? std::max<std::size_t>(1, std::thread::hardware_concurrency())
                              : cfg.threads;
    workers = std::min(workers, tasks);
    if (workers <= 1) {
        for (std::size_t t = 0; t < tasks; ++t) run_task(t);
    } else {
        std::vector<std::thread> pool;
        pool.reserve(workers);
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&, w] {
                for (std::size_t t = w; t < tasks; t += workers) run_task(t);
            });
        }
        for (auto& th : pool) th.join();
    }

    res.aggregates = recompute_aggregates(cfg, res.rows);
    res.validate();
    return res;
}

namespace {

void put_headers(std::ostringstream& os, const std::vector<std::string>& header_lines) {
    for (const std::string& h : header_lines) os << "# " << h << "\n";
}

} // namespace

std::string rows_csv(const ExperimentResult& r,
                     const std::vector<std::string>& header_lines) {
    std::ostringstream os;
    put_headers(os, header_lines);
    os << "rho,estimator,rep,data_seed,truth,point,se,ci_lo,ci_hi,bias,"
          "covered,k_n,converged,failed,error\n";
    for (const RepRow& row : r.rows) {
        os << format_double(row.rho) << ',' << estimator_name(row.estimator) << ','
           << row.rep << ',' << row.data_seed << ',' << format_double(row.truth) << ','
           << format_double(row.point) << ',' << format_double(row.se) << ','
           << format_double(row.ci_lo) << ',' << format_double(row.ci_hi) << ','
           << format_double(row.bias) << ',' << (row.covered ? 1 : 0) << ','
           << row.k_n << ',' << (row.converged ? 1 : 0) << ','
           << (row.failed ? 1 : 0) << ',' << row.error << '\n';
    }
    return os.str();
}

std::string aggregates_csv(const ExperimentResult& r,
                           const std::vector<std::string>& header_lines) {
    std::ostringstream os;
    put_headers(os, header_lines);
    os << "rho,estimator,reps,converged,failed,coverage,mean_bias,mean_ci_width,mean_k_n\n";
    for (const CellAggregate& a : r.aggregates) {
        os << format_double(a.rho) << ',' << estimator_name(a.estimator) << ','
           << a.reps << ',' << a.converged << ',' << a.failed << ','
           << format_double(a.coverage) << ',' << format_double(a.mean_bias) << ','
           << format_double(a.mean_width) << ',' << format_double(a.mean_k) << '\n';
    }
    return os.str();
}

std::vector<std::string> config_echo_lines(const ExperimentConfig& cfg) {
    std::vector<std::string> out;
    std::string grid = "grid=";
    for (std::size_t i = 0; i < cfg.grid.size(); ++i) {
        if (i) grid += ' ';
        grid += format_double(cfg.grid[i]);
    }
    out.push_back(grid);
    out.push_back("reps=" + std::to_string(cfg.reps) + " n=" + std::to_string(cfg.n) +
                  " d=" + std::to_string(cfg.d) + " beta=" + format_double(cfg.beta) +
                  " noise_sd=" + format_double(cfg.noise_sd));
    std::string est = "estimators=";
    for (std::size_t i = 0; i < cfg.estimators.size(); ++i) {
        if (i) est += ' ';
        est += estimator_name(cfg.estimators[i]);
    }
    out.push_back(est);
    out.push_back(std::string("target=") + target_name(cfg.target) +
                  " alpha=" + format_double(cfg.base.alpha) +
                  " learner=" + std::string(cfg.base.learner.kind == LearnerKind::Ridge
                                                ? "ridge"
                                                : "knn") +
                  " density=" + std::string(cfg.base.density.kind == DensityKind::GaussianLinear
                                                ? "gaussian-linear"
                                                : "partition") +
                  " support_draws=" + std::to_string(cfg.base.support_draws) +
                  " split=thirds");
    out.push_back("seed=" + std::to_string(cfg.seed));
    return out;
}

std::string config_echo_lines_joined(const ExperimentConfig& cfg) {
    std::string out;
    for (const std::string& l : config_echo_lines(cfg)) {
        out += l;
        out += '\n';
    }
    return out;
}

namespace {

struct Panel {
    double x0, y0, w, h; // plot area in svg coordinates
    double xmin, xmax, ymin, ymax;
    double sx(double v) const { return x0 + (v - xmin) / (xmax - xmin) * w; }
    double sy(double v) const { return y0 + h - (v - ymin) / (ymax - ymin) * h; }
};

const char* series_color(std::size_t i) {
    static const char* colors[] = {"#4878a8", "#c05050", "#50a060", "#9060b0"};
    return colors[i % 4];
}

std::string fmt2(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

void draw_axes(std::ostringstream& os, const Panel& p, const std::string& ylab,
               const std::vector<double>& yticks) {
    os << "<rect x='" << p.x0 << "' y='" << p.y0 << "' width='" << p.w << "' height='"
       << p.h << "' fill='none' stroke='#606060'/>\n";
    for (double t : yticks) {
        const double y = p.sy(t);
        os << "<line x1='" << p.x0 - 4 << "' y1='" << y << "' x2='" << p.x0 << "' y2='"
           << y << "' stroke='#606060'/>\n";
        os << "<text x='" << p.x0 - 7 << "' y='" << y + 3.5
           << "' text-anchor='end' font-size='10'>" << fmt2(t) << "</text>\n";
    }
    os << "<text x='" << p.x0 + p.w / 2 << "' y='" << p.y0 + p.h + 30
       << "' text-anchor='middle' font-size='11'>correlation</text>\n";
    os << "<text x='" << p.x0 - 42 << "' y='" << p.y0 + p.h / 2
       << "' text-anchor='middle' font-size='11' transform='rotate(-90 " << p.x0 - 42
       << ' ' << p.y0 + p.h / 2 << ")'>" << ylab << "</text>\n";
}

void draw_xticks(std::ostringstream& os, const Panel& p, const std::vector<double>& grid) {
    for (double g : grid) {
        const double x = p.sx(g);
        os << "<line x1='" << x << "' y1='" << p.y0 + p.h << "' x2='" << x << "' y2='"
           << p.y0 + p.h + 4 << "' stroke='#606060'/>\n";
        os << "<text x='" << x << "' y='" << p.y0 + p.h + 16
           << "' text-anchor='middle' font-size='10'>" << fmt2(g) << "</text>\n";
    }
}

// polyline through finite points only, broken at gaps
void draw_series(std::ostringstream& os, const Panel& p, const std::vector<double>& xs,
                 const std::vector<double>& ys, const char* color) {
    std::string seg;
    std::size_t seg_pts = 0;
    auto flush = [&] {
        if (seg_pts >= 2)
            os << "<polyline points='" << seg << "' fill='none' stroke='" << color
               << "' stroke-width='1.6'/>\n";
        seg.clear();
        seg_pts = 0;
    };
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (!std::isfinite(ys[i])) {
            flush();
            continue;
        }
        seg += fmt2(p.sx(xs[i])) + "," + fmt2(p.sy(ys[i])) + " ";
        ++seg_pts;
        os << "<circle cx='" << p.sx(xs[i]) << "' cy='" << p.sy(ys[i])
           << "' r='2.6' fill='" << color << "'/>\n";
    }
    flush();
}

} // namespace

std::string coverage_bias_svg(const ExperimentResult& r) {
    const auto& cfg = r.config;
    const std::size_t E = cfg.estimators.size();
    const double xmin = cfg.grid.front(), xmax = cfg.grid.back();
    const double pad = std::max(0.05, (xmax - xmin) * 0.08);

    double bias_lo = 0.0, bias_hi = 0.0;
    for (const CellAggregate& a : r.aggregates) {
        if (!std::isfinite(a.mean_bias)) continue;
        bias_lo = std::min(bias_lo, a.mean_bias);
        bias_hi = std::max(bias_hi, a.mean_bias);
    }
    const double bias_pad = std::max(0.25, (bias_hi - bias_lo) * 0.15);

    Panel cov{60, 42, 320, 240, xmin - pad, xmax + pad, 0.0, 1.05};
    Panel bias{490, 42, 320, 240, xmin - pad, xmax + pad, bias_lo - bias_pad,
               bias_hi + bias_pad};

    std::ostringstream os;
    os << "<svg xmlns='http://www.w3.org/2000/svg' width='860' height='330' "
          "font-family='sans-serif'>\n";
    os << "<text x='430' y='20' text-anchor='middle' font-size='13'>"
       << target_name(cfg.target) << ": coverage and bias by correlation (n="
       << cfg.n << ", " << cfg.reps << " reps)</text>\n";

    draw_axes(os, cov, "coverage", {0.0, 0.25, 0.5, 0.75, 0.95, 1.0});
    draw_xticks(os, cov, cfg.grid);
    const double nominal = 1.0 - cfg.base.alpha;
    os << "<line x1='" << cov.x0 << "' y1='" << cov.sy(nominal) << "' x2='"
       << cov.x0 + cov.w << "' y2='" << cov.sy(nominal)
       << "' stroke='#909090' stroke-dasharray='5 4'/>\n";

    std::vector<double> bt{bias_lo - bias_pad, 0.0, bias_hi + bias_pad};
    draw_axes(os, bias, "mean bias", bt);
    draw_xticks(os, bias, cfg.grid);
    os << "<line x1='" << bias.x0 << "' y1='" << bias.sy(0.0) << "' x2='"
       << bias.x0 + bias.w << "' y2='" << bias.sy(0.0)
       << "' stroke='#909090' stroke-dasharray='5 4'/>\n";

    for (std::size_t ei = 0; ei < E; ++ei) {
        std::vector<double> xs, cys, bys;
        for (std::size_t gi = 0; gi < cfg.grid.size(); ++gi) {
            const CellAggregate& a = r.aggregates[gi * E + ei];
            xs.push_back(a.rho);
            cys.push_back(a.coverage);
            bys.push_back(a.mean_bias);
        }
        draw_series(os, cov, xs, cys, series_color(ei));
        draw_series(os, bias, xs, bys, series_color(ei));
        const double ly = 56.0 + 16.0 * static_cast<double>(ei);
        os << "<line x1='" << cov.x0 + 10 << "' y1='" << ly << "' x2='" << cov.x0 + 34
           << "' y2='" << ly << "' stroke='" << series_color(ei)
           << "' stroke-width='1.6'/>\n";
        os << "<text x='" << cov.x0 + 40 << "' y='" << ly + 3.5 << "' font-size='11'>"
           << estimator_name(cfg.estimators[ei]) << "</text>\n";
    }
    os << "</svg>\n";
    return os.str();
}

} // namespace tlvi
