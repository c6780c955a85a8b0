#pragma once

// Batch statistics: quantiles, edit-distance diversity, feasibility.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "rerd/diffusion.hpp"
#include "rerd/reward.hpp"

namespace rerd {

/// Linear-interpolation quantile at sorted position (n-1) * q.
inline double quantile(std::vector<double> values, double q) {
    if (values.empty()) throw std::invalid_argument("quantile: empty list");
    if (!(q >= 0.0 && q <= 1.0)) throw std::invalid_argument("quantile: q must lie in [0,1]");
    std::sort(values.begin(), values.end());
    const double pos = q * static_cast<double>(values.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    if (lo + 1 >= values.size()) return values.back();
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + frac * (values[lo + 1] - values[lo]);
}

/// Standard edit distance with unit insert / delete / substitute costs.
inline int levenshtein(std::span<const int32_t> a, std::span<const int32_t> b) {
    const std::size_t n = a.size(), m = b.size();
    if (n == 0) return static_cast<int>(m);
    if (m == 0) return static_cast<int>(n);
    std::vector<int> prev(m + 1), curr(m + 1);
    for (std::size_t j = 0; j <= m; ++j) prev[j] = static_cast<int>(j);
    for (std::size_t i = 1; i <= n; ++i) {
        curr[0] = static_cast<int>(i);
        for (std::size_t j = 1; j <= m; ++j) {
            const int sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
            curr[j] = std::min({prev[j] + 1, curr[j - 1] + 1, sub});
        }
        std::swap(prev, curr);
    }
    return prev[m];
}

struct DiversityReport {
    double mean_pairwise_distance = 0.0; // mean normalized Levenshtein, in [0,1]
    double one_minus_distance = 1.0;     // the companion statistic 1 - D
};

/// Mean pairwise Levenshtein distance normalized by the longer sequence,
/// plus the 1 - D statistic. Both are emitted because the two conventions
/// coexist in the wild. Undefined for fewer than two sequences.
inline std::optional<DiversityReport> diversity(const std::vector<SequenceState>& batch) {
    if (batch.size() < 2) return std::nullopt;
    double total = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        for (std::size_t j = i + 1; j < batch.size(); ++j) {
            const auto& a = batch[i].tokens;
            const auto& b = batch[j].tokens;
            const std::size_t longer = std::max(a.size(), b.size());
            if (longer == 0) { ++pairs; continue; }
            total += static_cast<double>(levenshtein(a, b)) / static_cast<double>(longer);
            ++pairs;
        }
    }
    const double mean = total / static_cast<double>(pairs);
    return DiversityReport{mean, 1.0 - mean};
}

/// Fraction of the batch satisfying every constraint term (r2_j < c_j).
inline double feasibility_rate(const std::vector<SequenceState>& batch, const ConstraintSpec& cons) {
    if (batch.empty()) return 0.0;
    std::size_t feasible = 0;
    for (const auto& x : batch)
        if (satisfies(cons, x)) ++feasible;
    return static_cast<double>(feasible) / static_cast<double>(batch.size());
}

} // namespace rerd
