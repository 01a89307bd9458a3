#include "stockformer/wavelet.h"

#include <cmath>

#include "stockformer/errors.h"

namespace stockformer::wavelet {

FilterPair FilterPair::haar() {
    const double s = 1.0 / std::sqrt(2.0);
    return FilterPair{{s, s}, {s, -s}};
}

FilterPair FilterPair::named(const std::string& name) {
    if (name == "haar" || name == "db1") return haar();
    throw ConfigError("unknown wavelet filter '" + name + "'");
}

namespace {

std::vector<double> padded_even(const std::vector<double>& series) {
    std::vector<double> x = series;
    if (x.size() % 2 != 0) x.push_back(x.back());
    return x;
}

}  // namespace

Candidates dwt_decompose(const std::vector<double>& series, const FilterPair& filters) {
    if (series.size() < 2) throw ArgumentError("dwt_decompose needs at least 2 samples");
    if (filters.g.size() != filters.h.size() || filters.g.empty()) {
        throw ArgumentError("filter pair must be non-empty and equal length");
    }
    const std::vector<double> x = padded_even(series);
    const std::size_t T = x.size();
    const std::size_t half = T / 2;
    Candidates c;
    c.low.assign(half, 0.0);
    c.high.assign(half, 0.0);
    for (std::size_t k = 0; k < half; ++k) {
        double lo = 0, hi = 0;
        for (std::size_t m = 0; m < filters.g.size(); ++m) {
            const double v = x[(2 * k + m) % T];
            lo += filters.g[m] * v;
            hi += filters.h[m] * v;
        }
        c.low[k] = lo;
        c.high[k] = hi;
    }
    return c;
}

std::vector<double> upsample(const std::vector<double>& candidate,
                             const std::vector<double>& filter, std::size_t original_len) {
    if (candidate.empty()) throw ArgumentError("upsample: empty candidate");
    const std::size_t T = original_len + (original_len % 2);  // padded length
    if (candidate.size() != T / 2) {
        throw ArgumentError("upsample: candidate length " + std::to_string(candidate.size()) +
                            " does not match original length " + std::to_string(original_len));
    }
    std::vector<double> y(T, 0.0);
    for (std::size_t k = 0; k < candidate.size(); ++k) {
        for (std::size_t m = 0; m < filter.size(); ++m) {
            y[(2 * k + m) % T] += filter[m] * candidate[k];
        }
    }
    y.resize(original_len);
    return y;
}

FrequencyComponents decouple_returns(const Mat& returns, const FilterPair& filters) {
    const std::size_t T = returns.rows, N = returns.cols;
    const std::size_t half = (T + 1) / 2;
    FrequencyComponents out;
    out.low = Mat(T, N);
    out.high = Mat(T, N);
    out.candidate_low = Mat(half, N);
    out.candidate_high = Mat(half, N);
    std::vector<double> col(T);
    for (std::size_t n = 0; n < N; ++n) {
        for (std::size_t t = 0; t < T; ++t) {
            const double v = returns(t, n);
            if (is_missing(v)) {
                throw ArgumentError("decouple_returns: missing value at (row " +
                                    std::to_string(t) + ", col " + std::to_string(n) + ")");
            }
            col[t] = v;
        }
        const Candidates c = dwt_decompose(col, filters);
        const auto lo = upsample(c.low, filters.g, T);
        const auto hi = upsample(c.high, filters.h, T);
        for (std::size_t t = 0; t < T; ++t) {
            out.low(t, n) = lo[t];
            out.high(t, n) = hi[t];
        }
        for (std::size_t k = 0; k < half; ++k) {
            out.candidate_low(k, n) = c.low[k];
            out.candidate_high(k, n) = c.high[k];
        }
    }
    return out;
}

}  // namespace stockformer::wavelet
