#pragma once

#include <cstddef>
#include <span>
#include <variant>
#include <vector>

#include "tlvi/data.hpp"

namespace tlvi {

enum class LearnerKind { Ridge, Knn };

struct RidgeModel {
    double intercept = 0.0;
    double coef_x = 0.0;
    std::vector<double> coef_z;
    bool use_x = true;
};

struct KnnModel {
    // standardized training features, row-major; layout [x?, z...] per row
    std::vector<double> feat;
    std::vector<double> y;
    std::vector<double> mean, sd;
    std::size_t dim = 0;
    std::size_t k = 1;
    bool use_x = true;
};

// A frozen regression map (x, z) -> yhat.  Prediction is pure; fitting only
// ever sees the fold it was handed.
class FittedLearner {
  public:
    double predict(double x, std::span<const double> z) const;

    LearnerKind kind() const;
    bool uses_x() const;

    static FittedLearner from_ridge(RidgeModel m);
    static FittedLearner from_knn(KnnModel m);

    // explicit linear map; handy for exact fixtures
    static FittedLearner linear(double intercept, double coef_x, std::vector<double> coef_z);

  private:
    std::variant<RidgeModel, KnnModel> model_;
};

// Least squares with an unpenalized intercept; penalty applies to the slopes.
FittedLearner fit_ridge(const Dataset& fold, double penalty = 1e-6, bool use_x = true);

// k nearest neighbours in standardized feature space, prediction = mean y of
// the neighbours, ties broken toward the lowest training-row index.
// k = 0 selects the default ceil(sqrt(fold size)).
FittedLearner fit_knn(const Dataset& fold, std::size_t k = 0, bool use_x = true);

// Same learners, blind to the covariate of interest.
FittedLearner fit_without_x(const Dataset& fold, LearnerKind kind, double penalty = 1e-6,
                            std::size_t k = 0);

} // namespace tlvi
