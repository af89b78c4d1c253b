#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace tlvi {

// One response, one covariate of interest, the rest of the covariates
// row-major in `z`.  Immutable once built; validate() runs at every entry
// point that constructs one.
struct Dataset {
    std::vector<double> y;
    std::vector<double> x;
    std::vector<double> z; // n * dz, row-major
    std::size_t dz = 0;

    std::string y_name = "y";
    std::string x_name = "x";
    std::vector<std::string> z_names;

    std::size_t n() const { return y.size(); }

    std::span<const double> z_row(std::size_t i) const {
        return {z.data() + i * dz, dz};
    }

    Dataset subset(std::span<const std::size_t> rows) const;

    // n >= 3, matching lengths, everything finite
    void validate() const;
};

Dataset load_csv(const std::string& path, const std::string& response_col,
                 const std::string& interest_col);

void write_csv(const Dataset& data, const std::string& path);

// Partition of row indices into K named parts. make_split draws a seeded
// random partition with sizes differing by at most one; explicit assignments
// may be arbitrarily unbalanced (fold rotation maps whole groups to roles).
struct SplitPlan {
    std::vector<std::size_t> fold; // fold id per row, values in {0..K-1}
    std::size_t K = 0;
    std::uint64_t seed = 0;

    std::size_t n() const { return fold.size(); }

    // row indices of one fold, in ascending order
    std::vector<std::size_t> part(std::size_t k) const;

    // explicit assignment (used by tests and by fold rotation); validated
    static SplitPlan from_assignment(std::vector<std::size_t> assignment,
                                     std::size_t K, std::uint64_t seed);

    void validate() const;
};

SplitPlan make_split(std::size_t n, std::size_t K, std::uint64_t seed);

// Shortest round-trip representation, locale-independent. All CSV and report
// serialization funnels through this so output bytes are reproducible.
std::string format_double(double v);

} // namespace tlvi
