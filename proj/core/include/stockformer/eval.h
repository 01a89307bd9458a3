#pragma once

#include <string>
#include <vector>

#include "stockformer/array.h"

namespace stockformer::eval {

struct EvalReport {
    double ic_mean = 0;
    double icir = 0;
    double rank_ic_mean = 0;
    double rank_icir = 0;
    double directional_accuracy = 0;  // percent
    std::size_t days = 0;

    void save_csv(const std::string& path) const;
    std::string to_json() const;
};

struct ConfidenceReport {
    double high_confidence_proportion = 0;          // in [0, 1]
    std::string selected_output = "regression";     // "classification" iff proportion > threshold
    double threshold = 0.20;

    std::string to_json() const;
};

// Pearson correlation of one day's cross-section (population stds). NaN when
// fewer than 3 pairs or either side is constant.
double ic(const std::vector<double>& pred, const std::vector<double>& actual);

// Pearson on average ranks; invariant under strictly monotone transforms.
double rank_ic(const std::vector<double>& pred, const std::vector<double>& actual);

struct SeriesSummary {
    double mean = 0;
    double ir = 0;  // mean / sample std; NaN when std is 0 or undefined
    std::size_t days = 0;
};
// Aggregates a daily IC series, skipping missing days.
SeriesSummary summarize_daily(const std::vector<double>& daily);

// Classification mode: predicted label = 1 iff probability > 0.5.
double directional_accuracy_from_probs(const std::vector<double>& probs,
                                       const std::vector<double>& labels);
// Regression/baseline mode: predicted label = 1 iff predicted return > 0.
double directional_accuracy_from_returns(const std::vector<double>& pred_returns,
                                         const std::vector<double>& labels);

// Fraction of probabilities > 0.6 or < 0.4; classification output selected
// when that proportion exceeds the threshold.
ConfidenceReport high_confidence_analysis(const std::vector<double>& p_cla,
                                          double threshold = 0.20);

// Full report over per-day cross-sections of predictions vs realized returns
// plus trend hits.
EvalReport evaluate_days(const std::vector<std::vector<double>>& pred_by_day,
                         const std::vector<std::vector<double>>& actual_by_day,
                         const std::vector<double>& probs, const std::vector<double>& labels);

}  // namespace stockformer::eval
