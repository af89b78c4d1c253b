#include "tlvi/learners.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "tlvi/errors.hpp"

namespace tlvi {

double FittedLearner::predict(double x, std::span<const double> z) const {
    if (const auto* r = std::get_if<RidgeModel>(&model_)) {
        double v = r->intercept;
        if (r->use_x) v += r->coef_x * x;
        const std::size_t dz = r->coef_z.size();
        for (std::size_t j = 0; j < dz && j < z.size(); ++j) v += r->coef_z[j] * z[j];
        return v;
    }
    const auto& m = std::get<KnnModel>(model_);
    const std::size_t dim = m.dim;
    const std::size_t n = m.y.size();
    // standardized query
    std::vector<double> q(dim);
    std::size_t f = 0;
    if (m.use_x) q[f++] = (x - m.mean[0]) / m.sd[0];
    for (std::size_t j = 0; f < dim; ++j, ++f)
        q[f] = (z[j] - m.mean[f]) / m.sd[f];

    std::vector<std::pair<double, std::size_t>> d2(n);
    for (std::size_t i = 0; i < n; ++i) {
        double s = 0.0;
        const double* row = m.feat.data() + i * dim;
        for (std::size_t j = 0; j < dim; ++j) {
            const double dd = row[j] - q[j];
            s += dd * dd;
        }
        d2[i] = {s, i}; // index in the pair makes the tie-break deterministic
    }
    std::nth_element(d2.begin(), d2.begin() + (m.k - 1), d2.end());
    double acc = 0.0;
    for (std::size_t i = 0; i < m.k; ++i) acc += m.y[d2[i].second];
    return acc / static_cast<double>(m.k);
}

LearnerKind FittedLearner::kind() const {
    return std::holds_alternative<RidgeModel>(model_) ? LearnerKind::Ridge : LearnerKind::Knn;
}

bool FittedLearner::uses_x() const {
    if (const auto* r = std::get_if<RidgeModel>(&model_)) return r->use_x;
    return std::get<KnnModel>(model_).use_x;
}

FittedLearner FittedLearner::from_ridge(RidgeModel m) {
    FittedLearner f;
    f.model_ = std::move(m);
    return f;
}

FittedLearner FittedLearner::from_knn(KnnModel m) {
    FittedLearner f;
    f.model_ = std::move(m);
    return f;
}

FittedLearner FittedLearner::linear(double intercept, double coef_x,
                                    std::vector<double> coef_z) {
    RidgeModel m;
    m.intercept = intercept;
    m.coef_x = coef_x;
    m.coef_z = std::move(coef_z);
    m.use_x = true;
    return from_ridge(std::move(m));
}

FittedLearner fit_ridge(const Dataset& fold, double penalty, bool use_x) {
    fold.validate();
    if (penalty < 0.0)
        throw ConfigError("learners: ridge penalty must be >= 0");
    const std::size_t n = fold.n();
    const std::size_t dim = (use_x ? 1 : 0) + fold.dz;
    if (n < dim + 1)
        throw DataError("learners: fold of " + std::to_string(n) +
                        " rows is too small for " + std::to_string(dim) + " features");

    if (dim == 0) {
        // intercept-only
        RidgeModel m;
        m.use_x = false;
        double s = 0.0;
        for (double v : fold.y) s += v;
        m.intercept = s / static_cast<double>(n);
        return FittedLearner::from_ridge(std::move(m));
    }

    // centered design so the intercept stays unpenalized
    Eigen::MatrixXd X(n, dim);
    Eigen::VectorXd y(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t f = 0;
        if (use_x) X(i, f++) = fold.x[i];
        for (std::size_t j = 0; j < fold.dz; ++j) X(i, f++) = fold.z[i * fold.dz + j];
        y(i) = fold.y[i];
    }
    const Eigen::RowVectorXd xm = X.colwise().mean();
    const double ym = y.mean();
    X.rowwise() -= xm;
    y.array() -= ym;

    Eigen::MatrixXd G = X.transpose() * X;
    G.diagonal().array() += penalty;
    Eigen::LDLT<Eigen::MatrixXd> ldlt(G);
    const Eigen::VectorXd dvec = ldlt.vectorD();
    const double dmax = dvec.cwiseAbs().maxCoeff();
    const double dmin = dvec.cwiseAbs().minCoeff();
    if (ldlt.info() != Eigen::Success || dmax <= 0.0 || dmin <= dmax * 1e-13)
        throw NumericError("learners: ridge normal equations are singular; use penalty > 0");
    const Eigen::VectorXd beta = ldlt.solve(X.transpose() * y);

    RidgeModel m;
    m.use_x = use_x;
    std::size_t f = 0;
    if (use_x) m.coef_x = beta(f++);
    m.coef_z.resize(fold.dz);
    for (std::size_t j = 0; j < fold.dz; ++j) m.coef_z[j] = beta(f++);
    m.intercept = ym - xm.dot(beta);
    return FittedLearner::from_ridge(std::move(m));
}

FittedLearner fit_knn(const Dataset& fold, std::size_t k, bool use_x) {
    fold.validate();
    const std::size_t n = fold.n();
    if (k == 0)
        k = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(n))));
    if (k < 1 || k > n)
        throw ConfigError("learners: k must be in [1, fold size], got " + std::to_string(k));

    KnnModel m;
    m.use_x = use_x;
    m.k = k;
    m.dim = (use_x ? 1 : 0) + fold.dz;
    if (m.dim == 0)
        throw ConfigError("learners: k-NN needs at least one feature");
    m.y = fold.y;
    m.mean.assign(m.dim, 0.0);
    m.sd.assign(m.dim, 1.0);
    m.feat.resize(n * m.dim);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t f = 0;
        if (use_x) m.feat[i * m.dim + f++] = fold.x[i];
        for (std::size_t j = 0; j < fold.dz; ++j) m.feat[i * m.dim + f++] = fold.z[i * fold.dz + j];
    }
    for (std::size_t j = 0; j < m.dim; ++j) {
        double s = 0.0, s2 = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += m.feat[i * m.dim + j];
        m.mean[j] = s / static_cast<double>(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double d = m.feat[i * m.dim + j] - m.mean[j];
            s2 += d * d;
        }
        const double sd = std::sqrt(s2 / static_cast<double>(n));
        m.sd[j] = sd > 1e-12 ? sd : 1.0; // constant feature contributes nothing
        for (std::size_t i = 0; i < n; ++i)
            m.feat[i * m.dim + j] = (m.feat[i * m.dim + j] - m.mean[j]) / m.sd[j];
    }
    return FittedLearner::from_knn(std::move(m));
}

FittedLearner fit_without_x(const Dataset& fold, LearnerKind kind, double penalty,
                            std::size_t k) {
    if (fold.dz == 0)
        throw ConfigError("learners: cannot fit an x-free model without z columns");
    switch (kind) {
        case LearnerKind::Ridge: return fit_ridge(fold, penalty, /*use_x=*/false);
        case LearnerKind::Knn: return fit_knn(fold, k, /*use_x=*/false);
    }
    throw ConfigError("learners: unknown learner kind");
}

} // namespace tlvi
