#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <vector>

#include "tlvi/rng.hpp"

namespace tlvi {

// Finite weighted support of a one-dimensional law; weights > 0, sum to 1.
struct WeightedValues {
    std::vector<double> value;
    std::vector<double> weight;

    std::size_t size() const { return value.size(); }
};

enum class DensityKind { Partition, GaussianLinear };

// Conditional law of one scalar given z.  Fits p(x|z) or p(y|z) alike; the
// caller decides which column plays the role of `values`.
class CondDensityModel {
  public:
    virtual ~CondDensityModel() = default;

    virtual DensityKind kind() const = 0;

    virtual double sample(std::span<const double> z, Rng& rng) const = 0;

    virtual double density(double v, std::span<const double> z) const = 0;

    // m representative points with weights summing to 1; deterministic in
    // (z, m).  The partition kind may return fewer points than m when the
    // leaf holds fewer values.
    virtual WeightedValues support_points(std::span<const double> z, std::size_t m) const = 0;

    // conditional mean implied by the model at this z
    virtual double cond_mean(std::span<const double> z) const = 0;

    virtual bool degenerate() const { return false; }

    // partition kind reports its leaf sizes (diagnostics); empty otherwise
    virtual std::vector<std::size_t> leaf_sizes() const { return {}; }
};

// Binary regression-tree partition of z-space; within a leaf the law is the
// empirical distribution of the training values that fell there.
std::unique_ptr<CondDensityModel> fit_partition_density(std::span<const double> values,
                                                        std::span<const double> z,
                                                        std::size_t dz,
                                                        std::size_t min_leaf = 20);

// values = alpha + beta'z + sigma N(0,1) by least squares.
std::unique_ptr<CondDensityModel> fit_gaussian_linear(std::span<const double> values,
                                                      std::span<const double> z,
                                                      std::size_t dz);

// Gauss-Hermite abscissae/weights rescaled for N(0,1): integrates smooth f
// against the standard normal as sum w_i f(t_i).  Cached per m, thread-safe.
const WeightedValues& gauss_hermite_normal(std::size_t m);

} // namespace tlvi
