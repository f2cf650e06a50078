#pragma once
// Plug-in entropy and mutual information (bits) on discrete contingency tables.
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "error.hpp"
#include "numeric.hpp"

namespace mises {

struct ContingencyTable {
    std::size_t rows = 0;  // first variable (e.g. label T)
    std::size_t cols = 0;  // second variable (e.g. category C)
    std::vector<std::uint64_t> counts;  // row-major
    std::uint64_t total = 0;

    ContingencyTable(std::size_t r, std::size_t c) : rows(r), cols(c), counts(r * c, 0) {}

    void add(std::size_t r, std::size_t c) {
        if (r >= rows || c >= cols) throw dimension_error("contingency table: index out of range");
        ++counts[r * cols + c];
        ++total;
    }
    std::uint64_t at(std::size_t r, std::size_t c) const { return counts[r * cols + c]; }

    std::vector<std::uint64_t> row_margins() const {
        std::vector<std::uint64_t> m(rows, 0);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) m[r] += at(r, c);
        return m;
    }
    std::vector<std::uint64_t> col_margins() const {
        std::vector<std::uint64_t> m(cols, 0);
        for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < cols; ++c) m[c] += at(r, c);
        return m;
    }
};

inline double entropy_bits(std::span<const std::uint64_t> counts) {
    std::uint64_t n = 0;
    for (auto c : counts) n += c;
    if (n == 0) return 0.0;
    CompensatedSum h;
    for (auto c : counts) {
        if (c == 0) continue;
        const double p = static_cast<double>(c) / static_cast<double>(n);
        h.add(-p * std::log2(p));
    }
    return h.value();
}

// H(col | row) as a probability-weighted sum of non-negative row entropies.
inline double conditional_entropy_col_given_row(const ContingencyTable& t) {
    if (t.total == 0) return 0.0;
    const auto rm = t.row_margins();
    CompensatedSum h;
    std::vector<std::uint64_t> row(t.cols);
    for (std::size_t r = 0; r < t.rows; ++r) {
        if (rm[r] == 0) continue;
        for (std::size_t c = 0; c < t.cols; ++c) row[c] = t.at(r, c);
        h.add(static_cast<double>(rm[r]) / static_cast<double>(t.total) * entropy_bits(row));
    }
    return h.value();
}

// I(row; col) = H(col) - H(col | row). The subtrahend is non-negative, so the
// floating-point result never exceeds the computed H(col).
inline double mutual_information_bits(const ContingencyTable& t) {
    const auto cm = t.col_margins();
    const double hc = entropy_bits(cm);
    const double i = hc - conditional_entropy_col_given_row(t);
    return i > 0.0 ? i : 0.0;
}

}  // namespace mises
