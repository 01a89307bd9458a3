#pragma once

#include <cstddef>
#include <vector>

namespace stockformer::stats {

// Average ranks (1-based); ties share the mean of their positions.
std::vector<double> average_ranks(const std::vector<double>& x);

// Pearson correlation with population standard deviations. NaN when either
// side is constant or fewer than 2 points remain.
double pearson(const std::vector<double>& x, const std::vector<double>& y);

// Spearman = pearson on average ranks. Pairs with a NaN on either side are
// dropped first; NaN when fewer than `min_pairs` valid pairs remain.
double spearman(const std::vector<double>& x, const std::vector<double>& y,
                std::size_t min_pairs = 3);

double mean(const std::vector<double>& x);
// Sample standard deviation (n-1 denominator); NaN for n < 2.
double sample_std(const std::vector<double>& x);

}  // namespace stockformer::stats
