#include "tlvi/conddens.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <map>
#include <mutex>
#include <numeric>

#include "tlvi/errors.hpp"

namespace tlvi {

const WeightedValues& gauss_hermite_normal(std::size_t m) {
    if (m < 1)
        throw ConfigError("conddens: need at least one quadrature point");
    static std::mutex mu;
    static std::map<std::size_t, std::unique_ptr<WeightedValues>> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto it = cache.find(m);
    if (it != cache.end()) return *it->second;

    // Golub-Welsch: eigen-decompose the Jacobi matrix of the Hermite
    // recurrence; nodes are eigenvalues, weights squared first components.
    Eigen::VectorXd diag = Eigen::VectorXd::Zero(m);
    Eigen::VectorXd sub(m > 1 ? m - 1 : 1);
    for (std::size_t k = 1; k < m; ++k)
        sub(k - 1) = std::sqrt(static_cast<double>(k) / 2.0);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
    if (m == 1) {
        auto wv = std::make_unique<WeightedValues>();
        wv->value = {0.0};
        wv->weight = {1.0};
        return *cache.emplace(m, std::move(wv)).first->second;
    }
    es.computeFromTridiagonal(diag, sub.head(m - 1), Eigen::ComputeEigenvectors);
    if (es.info() != Eigen::Success)
        throw NumericError("conddens: quadrature eigensolve failed");

    auto wv = std::make_unique<WeightedValues>();
    wv->value.resize(m);
    wv->weight.resize(m);
    const double sqrt2 = std::sqrt(2.0);
    for (std::size_t i = 0; i < m; ++i) {
        wv->value[i] = sqrt2 * es.eigenvalues()(i); // rescale: e^{-t^2} -> N(0,1)
        const double v0 = es.eigenvectors()(0, i);
        wv->weight[i] = v0 * v0;
    }
    // orthogonality makes the weights sum to 1 up to roundoff; tidy anyway
    const double s = std::accumulate(wv->weight.begin(), wv->weight.end(), 0.0);
    for (auto& w : wv->weight) w /= s;
    return *cache.emplace(m, std::move(wv)).first->second;
}

namespace {

void check_inputs(std::span<const double> values, std::span<const double> z, std::size_t dz) {
    const std::size_t n = values.size();
    if (z.size() != n * dz)
        throw DataError("conddens: z size does not match values length");
    for (double v : values)
        if (!std::isfinite(v)) throw DataError("conddens: non-finite value");
    for (double v : z)
        if (!std::isfinite(v)) throw DataError("conddens: non-finite z entry");
}

// ---- gaussian-linear kind -------------------------------------------------

class GaussianLinearDensity final : public CondDensityModel {
  public:
    GaussianLinearDensity(double alpha, std::vector<double> beta, double sigma, bool degen)
        : alpha_(alpha), beta_(std::move(beta)), sigma_(sigma), degenerate_(degen) {}

    DensityKind kind() const override { return DensityKind::GaussianLinear; }

    double cond_mean(std::span<const double> z) const override {
        double mu = alpha_;
        for (std::size_t j = 0; j < beta_.size(); ++j) mu += beta_[j] * z[j];
        return mu;
    }

    double sample(std::span<const double> z, Rng& rng) const override {
        // a degenerate fit keeps the floored sigma for density evaluation
        // only; sampling synthetic noise from the floor would feed
        // machine-scale jitter into everything downstream
        if (degenerate_) return cond_mean(z);
        return cond_mean(z) + sigma_ * rng.normal();
    }

    double density(double v, std::span<const double> z) const override {
        const double d = (v - cond_mean(z)) / sigma_;
        return std::exp(-0.5 * d * d) / (sigma_ * 2.5066282746310005024);
    }

    WeightedValues support_points(std::span<const double> z, std::size_t m) const override {
        const WeightedValues& gh = gauss_hermite_normal(m);
        const double mu = cond_mean(z);
        WeightedValues out;
        out.value.resize(gh.size());
        out.weight = gh.weight;
        const double spread = degenerate_ ? 0.0 : sigma_;
        for (std::size_t i = 0; i < gh.size(); ++i) out.value[i] = mu + spread * gh.value[i];
        return out;
    }

    bool degenerate() const override { return degenerate_; }

  private:
    double alpha_;
    std::vector<double> beta_;
    double sigma_;
    bool degenerate_;
};

// ---- partition kind -------------------------------------------------------

struct TreeNode {
    // internal: feature/threshold, children; leaf: value range in leaf_store
    std::size_t feature = 0;
    double threshold = 0.0;
    int left = -1, right = -1;
    std::size_t leaf_begin = 0, leaf_count = 0;
    bool is_leaf = false;
};

class PartitionDensity final : public CondDensityModel {
  public:
    PartitionDensity(std::span<const double> values, std::span<const double> z, std::size_t dz,
                     std::size_t min_leaf)
        : dz_(dz) {
        const std::size_t n = values.size();
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), 0);
        build(values, z, idx, min_leaf);
    }

    DensityKind kind() const override { return DensityKind::Partition; }

    double cond_mean(std::span<const double> z) const override {
        const TreeNode& leaf = find_leaf(z);
        const double* v = leaf_store_.data() + leaf.leaf_begin;
        double s = 0.0;
        for (std::size_t i = 0; i < leaf.leaf_count; ++i) s += v[i];
        return s / static_cast<double>(leaf.leaf_count);
    }

    double sample(std::span<const double> z, Rng& rng) const override {
        const TreeNode& leaf = find_leaf(z);
        const std::size_t pick = static_cast<std::size_t>(rng.below(leaf.leaf_count));
        return leaf_store_[leaf.leaf_begin + pick];
    }

    double density(double v, std::span<const double> z) const override {
        const TreeNode& leaf = find_leaf(z);
        const double* vals = leaf_store_.data() + leaf.leaf_begin; // sorted
        const std::size_t L = leaf.leaf_count;
        const double lo = vals[0];
        const double hi = vals[L - 1];
        const double h = bin_width(vals, L);
        if (v < lo || v > hi + h) return 0.0;
        const auto bin = static_cast<std::size_t>((v - lo) / h);
        std::size_t count = 0;
        for (std::size_t i = 0; i < L; ++i) {
            const auto b = std::min(static_cast<std::size_t>((vals[i] - lo) / h), bin + 1);
            if (b == bin) ++count;
        }
        return static_cast<double>(count) / (static_cast<double>(L) * h);
    }

    WeightedValues support_points(std::span<const double> z, std::size_t m) const override {
        const TreeNode& leaf = find_leaf(z);
        const double* vals = leaf_store_.data() + leaf.leaf_begin;
        const std::size_t L = leaf.leaf_count;
        WeightedValues out;
        if (L <= m) {
            out.value.assign(vals, vals + L);
            out.weight.assign(L, 1.0 / static_cast<double>(L));
        } else {
            // evenly spaced order statistics
            out.value.resize(m);
            out.weight.assign(m, 1.0 / static_cast<double>(m));
            for (std::size_t i = 0; i < m; ++i) {
                const auto pos = static_cast<std::size_t>(
                    (static_cast<double>(i) + 0.5) * static_cast<double>(L) /
                    static_cast<double>(m));
                out.value[i] = vals[std::min(pos, L - 1)];
            }
        }
        return out;
    }

    std::vector<std::size_t> leaf_sizes() const override {
        std::vector<std::size_t> out;
        for (const auto& nd : nodes_)
            if (nd.is_leaf) out.push_back(nd.leaf_count);
        return out;
    }

  private:
    std::size_t dz_;
    std::vector<TreeNode> nodes_;
    std::vector<double> leaf_store_; // leaf values, sorted within each leaf

    static double bin_width(const double* vals, std::size_t L) {
        // Freedman-Diaconis with fallbacks for collapsed spread
        auto quantile = [&](double p) {
            const double pos = p * static_cast<double>(L - 1);
            const auto i0 = static_cast<std::size_t>(pos);
            const std::size_t i1 = std::min(i0 + 1, L - 1);
            const double f = pos - static_cast<double>(i0);
            return vals[i0] * (1.0 - f) + vals[i1] * f;
        };
        double h = 2.0 * (quantile(0.75) - quantile(0.25)) /
                   std::cbrt(static_cast<double>(L));
        if (h <= 0.0)
            h = (vals[L - 1] - vals[0]) / std::sqrt(static_cast<double>(L));
        if (h <= 0.0) h = 1e-12;
        return h;
    }

    const TreeNode& find_leaf(std::span<const double> z) const {
        std::size_t cur = 0;
        while (!nodes_[cur].is_leaf) {
            const TreeNode& nd = nodes_[cur];
            cur = (z[nd.feature] <= nd.threshold) ? static_cast<std::size_t>(nd.left)
                                                  : static_cast<std::size_t>(nd.right);
        }
        return nodes_[cur];
    }

    void build(std::span<const double> values, std::span<const double> z,
               std::vector<std::size_t>& idx, std::size_t min_leaf) {
        nodes_.emplace_back();
        grow(0, values, z, idx, 0, idx.size(), min_leaf);
    }

    // grows nodes_[node] on idx[b, e); idx may be reordered in place
    void grow(std::size_t node, std::span<const double> values, std::span<const double> z,
              std::vector<std::size_t>& idx, std::size_t b, std::size_t e,
              std::size_t min_leaf) {
        const std::size_t n = e - b;
        double best_gain = 0.0;
        std::size_t best_feat = 0;
        double best_thresh = 0.0;

        if (n >= 2 * min_leaf && dz_ > 0) {
            double total = 0.0, total2 = 0.0;
            for (std::size_t i = b; i < e; ++i) {
                total += values[idx[i]];
                total2 += values[idx[i]] * values[idx[i]];
            }
            std::vector<std::size_t> order(idx.begin() + b, idx.begin() + e);
            for (std::size_t j = 0; j < dz_; ++j) {
                std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t c) {
                    return z[a * dz_ + j] < z[c * dz_ + j];
                });
                double left = 0.0;
                for (std::size_t s = 1; s < n; ++s) {
                    left += values[order[s - 1]];
                    if (s < min_leaf || n - s < min_leaf) continue;
                    const double zl = z[order[s - 1] * dz_ + j];
                    const double zr = z[order[s] * dz_ + j];
                    if (zl == zr) continue; // can't cut between equal z values
                    const double right = total - left;
                    const double gain = left * left / static_cast<double>(s) +
                                        right * right / static_cast<double>(n - s) -
                                        total * total / static_cast<double>(n);
                    if (gain > best_gain + 1e-12 * (1.0 + total2)) {
                        best_gain = gain;
                        best_feat = j;
                        best_thresh = 0.5 * (zl + zr);
                    }
                }
            }
        }

        if (best_gain <= 0.0) {
            // leaf: copy values, sorted
            TreeNode& nd = nodes_[node];
            nd.is_leaf = true;
            nd.leaf_begin = leaf_store_.size();
            nd.leaf_count = n;
            for (std::size_t i = b; i < e; ++i) leaf_store_.push_back(values[idx[i]]);
            std::sort(leaf_store_.begin() + static_cast<std::ptrdiff_t>(nd.leaf_begin),
                      leaf_store_.end());
            return;
        }

        const auto mid = std::partition(idx.begin() + b, idx.begin() + e, [&](std::size_t i) {
            return z[i * dz_ + best_feat] <= best_thresh;
        });
        const std::size_t m = static_cast<std::size_t>(mid - idx.begin());

        const int li = static_cast<int>(nodes_.size());
        nodes_.emplace_back();
        const int ri = static_cast<int>(nodes_.size());
        nodes_.emplace_back();
        nodes_[node].feature = best_feat;
        nodes_[node].threshold = best_thresh;
        nodes_[node].left = li;
        nodes_[node].right = ri;
        grow(static_cast<std::size_t>(li), values, z, idx, b, m, min_leaf);
        grow(static_cast<std::size_t>(ri), values, z, idx, m, e, min_leaf);
    }
};

} // namespace

std::unique_ptr<CondDensityModel> fit_partition_density(std::span<const double> values,
                                                        std::span<const double> z,
                                                        std::size_t dz, std::size_t min_leaf) {
    check_inputs(values, z, dz);
    if (min_leaf < 1)
        throw ConfigError("conddens: min_leaf must be >= 1");
    if (values.size() < 2 * min_leaf)
        throw DataError("conddens: " + std::to_string(values.size()) +
                        " rows is too few for min_leaf " + std::to_string(min_leaf));
    return std::make_unique<PartitionDensity>(values, z, dz, min_leaf);
}

std::unique_ptr<CondDensityModel> fit_gaussian_linear(std::span<const double> values,
                                                      std::span<const double> z,
                                                      std::size_t dz) {
    check_inputs(values, z, dz);
    const std::size_t n = values.size();
    if (n < dz + 2)
        throw DataError("conddens: " + std::to_string(n) +
                        " rows is too few for a linear fit in " + std::to_string(dz) +
                        " regressors");

    Eigen::MatrixXd X(n, dz + 1);
    Eigen::VectorXd v(n);
    for (std::size_t i = 0; i < n; ++i) {
        X(i, 0) = 1.0;
        for (std::size_t j = 0; j < dz; ++j) X(i, j + 1) = z[i * dz + j];
        v(i) = values[i];
    }
    const Eigen::MatrixXd G = X.transpose() * X;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(G);
    const Eigen::VectorXd dvec = ldlt.vectorD();
    const double dmax = dvec.cwiseAbs().maxCoeff();
    const double dmin = dvec.cwiseAbs().minCoeff();
    if (ldlt.info() != Eigen::Success || dmax <= 0.0 || dmin <= dmax * 1e-13)
        throw NumericError("conddens: singular design in gaussian-linear fit");
    const Eigen::VectorXd coef = ldlt.solve(X.transpose() * v);
    const double ssr = (v - X * coef).squaredNorm();
    double sigma = std::sqrt(ssr / static_cast<double>(n));
    bool degen = false;
    if (sigma < 1e-8) {
        sigma = 1e-8;
        degen = true;
    }

    std::vector<double> beta(dz);
    for (std::size_t j = 0; j < dz; ++j) beta[j] = coef(j + 1);
    return std::make_unique<GaussianLinearDensity>(coef(0), std::move(beta), sigma, degen);
}

} // namespace tlvi
