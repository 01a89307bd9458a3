#pragma once

#include <string>
#include <vector>

#include "stockformer/array.h"

namespace stockformer::wavelet {

// Orthogonal analysis filter pair. For the default Haar pair
// g = (1/sqrt2, 1/sqrt2), h = (1/sqrt2, -1/sqrt2).
struct FilterPair {
    std::vector<double> g;  // low-pass
    std::vector<double> h;  // high-pass

    static FilterPair haar();
    // Looks up a named family ("haar"/"db1") or throws ConfigError.
    static FilterPair named(const std::string& name);
};

struct Candidates {
    std::vector<double> low;   // length ceil(T/2)
    std::vector<double> high;  // length ceil(T/2)
};

// Per-stock low/high branches. `low`/`high` are upsampled back to the input
// length; candidate_* keep the half-length downsampled sequences.
struct FrequencyComponents {
    Mat low;   // T x N
    Mat high;  // T x N
    Mat candidate_low;
    Mat candidate_high;
};

// Single-level DWT with periodic boundary extension:
//   low[k] = sum_m g[m] * x[(2k+m) mod T]
// Odd-length inputs are padded by repeating the final value.
Candidates dwt_decompose(const std::vector<double>& series, const FilterPair& filters);

// Transposed-filter upsampling of one candidate branch back to
// `original_len` samples. For orthogonal filters and even input length,
// upsample(low) + upsample(high) reconstructs the input exactly.
std::vector<double> upsample(const std::vector<double>& candidate,
                             const std::vector<double>& filter, std::size_t original_len);

// Column-wise decompose + upsample of a T x N return table.
FrequencyComponents decouple_returns(const Mat& returns, const FilterPair& filters);

}  // namespace stockformer::wavelet
