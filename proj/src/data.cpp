#include "tlvi/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "tlvi/errors.hpp"
#include "tlvi/rng.hpp"

namespace tlvi {

std::string format_double(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    (void)ec;
    return std::string(buf, ptr);
}

void Dataset::validate() const {
    const std::size_t rows = y.size();
    if (rows < 3)
        throw DataError("data: need at least 3 rows, got " + std::to_string(rows));
    if (x.size() != rows || z.size() != rows * dz)
        throw DataError("data: column lengths disagree");
    if (!z_names.empty() && z_names.size() != dz)
        throw DataError("data: z column names do not match z width");
    auto check = [](double v) { return std::isfinite(v); };
    for (std::size_t i = 0; i < rows; ++i) {
        if (!check(y[i]) || !check(x[i]))
            throw DataError("data: non-finite value at data row " + std::to_string(i + 1));
        for (std::size_t j = 0; j < dz; ++j)
            if (!check(z[i * dz + j]))
                throw DataError("data: non-finite value at data row " + std::to_string(i + 1));
    }
}

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
    Dataset out;
    out.dz = dz;
    out.y_name = y_name;
    out.x_name = x_name;
    out.z_names = z_names;
    out.y.reserve(rows.size());
    out.x.reserve(rows.size());
    out.z.reserve(rows.size() * dz);
    for (std::size_t i : rows) {
        out.y.push_back(y.at(i));
        out.x.push_back(x.at(i));
        for (std::size_t j = 0; j < dz; ++j) out.z.push_back(z[i * dz + j]);
    }
    return out;
}

namespace {

std::vector<std::string> split_fields(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

double parse_cell(const std::string& s, std::size_t data_row, const std::string& col) {
    double v = 0.0;
    const char* b = s.data();
    const char* e = b + s.size();
    auto [ptr, ec] = std::from_chars(b, e, v);
    if (ec != std::errc{} || ptr != e)
        throw DataError("data: non-numeric cell '" + s + "' in column " + col +
                        " at data row " + std::to_string(data_row));
    if (!std::isfinite(v))
        throw DataError("data: non-finite value in column " + col + " at data row " +
                        std::to_string(data_row));
    return v;
}

} // namespace

Dataset load_csv(const std::string& path, const std::string& response_col,
                 const std::string& interest_col) {
    std::ifstream in(path);
    if (!in)
        throw DataError("data: cannot open '" + path + "'");

    std::string line;
    if (!std::getline(in, line))
        throw DataError("data: '" + path + "' is empty");
    const auto header = split_fields(line);

    auto find_col = [&](const std::string& name) {
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) {
            std::ostringstream msg;
            msg << "data: column '" << name << "' not found (file has:";
            for (const auto& h : header) msg << " " << h;
            msg << ")";
            throw DataError(msg.str());
        }
        return static_cast<std::size_t>(it - header.begin());
    };
    const std::size_t yi = find_col(response_col);
    const std::size_t xi = find_col(interest_col);
    if (yi == xi)
        throw DataError("data: response and interest columns must differ");

    Dataset d;
    d.y_name = response_col;
    d.x_name = interest_col;
    std::vector<std::size_t> zcols;
    for (std::size_t j = 0; j < header.size(); ++j) {
        if (j == yi || j == xi) continue;
        zcols.push_back(j);
        d.z_names.push_back(header[j]);
    }
    d.dz = zcols.size();

    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (line.empty() || (line.size() == 1 && line[0] == '\r')) continue;
        ++row;
        const auto cells = split_fields(line);
        if (cells.size() != header.size())
            throw DataError("data: expected " + std::to_string(header.size()) +
                            " fields but found " + std::to_string(cells.size()) +
                            " at data row " + std::to_string(row));
        d.y.push_back(parse_cell(cells[yi], row, header[yi]));
        d.x.push_back(parse_cell(cells[xi], row, header[xi]));
        for (std::size_t j : zcols) d.z.push_back(parse_cell(cells[j], row, header[j]));
    }
    d.validate();
    return d;
}

void write_csv(const Dataset& data, const std::string& path) {
    std::ofstream out(path);
    if (!out)
        throw DataError("data: cannot write '" + path + "'");
    out << data.y_name << "," << data.x_name;
    for (std::size_t j = 0; j < data.dz; ++j) {
        out << ",";
        if (j < data.z_names.size()) {
            out << data.z_names[j];
        } else {
            out << "z" << (j + 1);
        }
    }
    out << "\n";
    for (std::size_t i = 0; i < data.n(); ++i) {
        out << format_double(data.y[i]) << "," << format_double(data.x[i]);
        for (std::size_t j = 0; j < data.dz; ++j)
            out << "," << format_double(data.z[i * data.dz + j]);
        out << "\n";
    }
}

void SplitPlan::validate() const {
    if (K < 2)
        throw ConfigError("data: split needs K >= 2, got " + std::to_string(K));
    std::vector<std::size_t> counts(K, 0);
    for (std::size_t f : fold) {
        if (f >= K)
            throw DataError("data: fold id out of range");
        ++counts[f];
    }
    // balance is a make_split promise, not a requirement on explicit
    // assignments (fold rotation hands whole fold groups to one role)
    for (std::size_t k = 0; k < K; ++k)
        if (counts[k] == 0)
            throw DataError("data: empty fold in split plan");
}

std::vector<std::size_t> SplitPlan::part(std::size_t k) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < fold.size(); ++i)
        if (fold[i] == k) out.push_back(i);
    return out;
}

SplitPlan SplitPlan::from_assignment(std::vector<std::size_t> assignment, std::size_t K,
                                     std::uint64_t seed) {
    SplitPlan p;
    p.fold = std::move(assignment);
    p.K = K;
    p.seed = seed;
    p.validate();
    return p;
}

SplitPlan make_split(std::size_t n, std::size_t K, std::uint64_t seed) {
    if (K < 2)
        throw ConfigError("data: split needs K >= 2, got " + std::to_string(K));
    if (n < K)
        throw DataError("data: cannot split " + std::to_string(n) + " rows into " +
                        std::to_string(K) + " folds");

    // Fisher-Yates with the library rng, then contiguous chunks of the
    // shuffled order; the first n%K folds absorb the remainder.
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed);
    for (std::size_t i = n - 1; i > 0; --i) {
        const std::size_t j = static_cast<std::size_t>(rng.below(i + 1));
        std::swap(order[i], order[j]);
    }

    SplitPlan p;
    p.K = K;
    p.seed = seed;
    p.fold.assign(n, 0);
    const std::size_t base = n / K;
    const std::size_t extra = n % K;
    std::size_t pos = 0;
    for (std::size_t k = 0; k < K; ++k) {
        const std::size_t size = base + (k < extra ? 1 : 0);
        for (std::size_t t = 0; t < size; ++t) p.fold[order[pos++]] = k;
    }
    p.validate();
    return p;
}

} // namespace tlvi
