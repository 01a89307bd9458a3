#pragma once

#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

namespace stockformer {

inline double nan_value() { return std::numeric_limits<double>::quiet_NaN(); }
inline bool is_missing(double v) { return std::isnan(v); }

// Dense row-major matrix. Missing cells are NaN.
struct Mat {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> v;

    Mat() = default;
    Mat(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), v(r * c, fill) {}

    double& operator()(std::size_t r, std::size_t c) { return v[r * cols + c]; }
    double operator()(std::size_t r, std::size_t c) const { return v[r * cols + c]; }
    bool empty() const { return v.empty(); }
};

// Dense row-major rank-3 array (d0 slowest).
struct Cube {
    std::size_t d0 = 0, d1 = 0, d2 = 0;
    std::vector<double> v;

    Cube() = default;
    Cube(std::size_t a, std::size_t b, std::size_t c, double fill = 0.0)
        : d0(a), d1(b), d2(c), v(a * b * c, fill) {}

    double& operator()(std::size_t i, std::size_t j, std::size_t k) {
        return v[(i * d1 + j) * d2 + k];
    }
    double operator()(std::size_t i, std::size_t j, std::size_t k) const {
        return v[(i * d1 + j) * d2 + k];
    }
    bool empty() const { return v.empty(); }
};

}  // namespace stockformer
