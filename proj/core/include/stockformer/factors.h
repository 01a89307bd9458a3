#pragma once

#include <optional>
#include <string>
#include <vector>

#include "stockformer/array.h"
#include "stockformer/data.h"

namespace stockformer::factors {

enum class Category { Close, Open, High, Low, Vwap, Volume };

struct FactorDefinition {
    Category category;
    int lag = 0;  // 0..59

    std::string name() const;
};

// The full 6 x 60 = 360 definition list in channel order.
std::vector<FactorDefinition> alpha360_definitions();

struct FactorPanel {
    std::vector<std::string> dates;
    std::vector<std::string> symbols;
    std::vector<std::string> channel_names;
    Cube values;  // T x N x F, NaN missing
    std::vector<std::string> warnings;

    std::size_t channels() const { return channel_names.size(); }
    int channel_index(const std::string& name) const;
};

struct FactorIC {
    std::string name;
    double mean_ic = 0;
    double ic_std = 0;
    double pct_positive = 0;     // % of days with IC > 0
    double pct_abs_gt_002 = 0;   // % of days with |IC| > 0.02
    std::size_t days = 0;
    bool effective = false;      // mean_ic >= threshold
};

struct ICReport {
    double threshold = 0.02;
    std::vector<FactorIC> factors;

    std::vector<std::string> effective_names() const;
    void save_csv(const std::string& path) const;
};

// Lagged price/volume ratio factors. Price categories compute
// Ref(series, lag) / close; Volume computes Ref(volume, lag) / (volume + 1e-12).
// Dates with fewer than 60 prior trading days are left missing.
// `threads` = 0 picks hardware concurrency; channels are mapped in parallel
// with disjoint writes, so results are identical for any thread count.
FactorPanel build_alpha360(const data::PanelDataset& panel, unsigned threads = 1);

// Per channel and date: (1) fill missing from the stock's previous trading
// day, (2) re-fill values beyond 3 population std devs from the date mean,
// (3) z-score with the population std (constant columns become zeros).
// Channels still entirely missing afterwards are dropped with a warning.
FactorPanel preprocess(const FactorPanel& raw, unsigned threads = 1);

struct NeutralizeResult {
    std::vector<double> residuals;               // NaN where input was missing
    std::vector<std::string> dropped_regressors; // collinear columns removed
};

// Least-squares residuals of one date's factor cross-section against an
// intercept, industry dummies (lexicographic), and log market cap.
// Either industries or market caps may be empty, not both.
NeutralizeResult neutralize(const std::vector<double>& factor,
                            const std::vector<std::string>& industry,
                            const std::vector<double>& mktcap);

// Daily cross-sectional RankIC of every channel against next-day returns.
ICReport ic_analysis(const FactorPanel& factors, const data::ReturnMatrix& forward_returns,
                     double threshold = 0.02);

// Keeps only the named channels (used to apply IC screening).
FactorPanel select_channels(const FactorPanel& panel, const std::vector<std::string>& names);

}  // namespace stockformer::factors
