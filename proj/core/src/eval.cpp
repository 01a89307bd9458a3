#include "stockformer/eval.h"

#include <cmath>

#include <json.hpp>

#include "stockformer/csv.h"
#include "stockformer/errors.h"
#include "stockformer/stats.h"

namespace stockformer::eval {

namespace {

// Pairwise-complete copy; NaN on either side drops the pair.
std::pair<std::vector<double>, std::vector<double>> paired(const std::vector<double>& a,
                                                           const std::vector<double>& b) {
    std::vector<double> xa, xb;
    const std::size_t n = std::min(a.size(), b.size());
    for (std::size_t i = 0; i < n; ++i) {
        if (!is_missing(a[i]) && !is_missing(b[i])) {
            xa.push_back(a[i]);
            xb.push_back(b[i]);
        }
    }
    return {std::move(xa), std::move(xb)};
}

}  // namespace

double ic(const std::vector<double>& pred, const std::vector<double>& actual) {
    auto [x, y] = paired(pred, actual);
    if (x.size() < 3) return nan_value();
    return stats::pearson(x, y);
}

double rank_ic(const std::vector<double>& pred, const std::vector<double>& actual) {
    auto [x, y] = paired(pred, actual);
    if (x.size() < 3) return nan_value();
    return stats::pearson(stats::average_ranks(x), stats::average_ranks(y));
}

SeriesSummary summarize_daily(const std::vector<double>& daily) {
    std::vector<double> clean;
    for (double v : daily) {
        if (!is_missing(v)) clean.push_back(v);
    }
    SeriesSummary s;
    s.days = clean.size();
    if (clean.empty()) {
        s.mean = nan_value();
        s.ir = nan_value();
        return s;
    }
    s.mean = stats::mean(clean);
    const double sd = stats::sample_std(clean);
    s.ir = (is_missing(sd) || sd == 0.0) ? nan_value() : s.mean / sd;
    return s;
}

namespace {

double accuracy(const std::vector<double>& predicted_labels, const std::vector<double>& labels) {
    if (predicted_labels.empty()) throw ArgumentError("directional_accuracy: empty input");
    if (predicted_labels.size() != labels.size()) {
        throw ShapeError("directional_accuracy: size mismatch");
    }
    std::size_t correct = 0, total = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (is_missing(labels[i]) || is_missing(predicted_labels[i])) continue;
        ++total;
        if ((predicted_labels[i] > 0.5) == (labels[i] > 0.5)) ++correct;
    }
    if (total == 0) throw ArgumentError("directional_accuracy: no valid pairs");
    return 100.0 * static_cast<double>(correct) / static_cast<double>(total);
}

}  // namespace

double directional_accuracy_from_probs(const std::vector<double>& probs,
                                       const std::vector<double>& labels) {
    std::vector<double> pred(probs.size());
    for (std::size_t i = 0; i < probs.size(); ++i) {
        pred[i] = is_missing(probs[i]) ? nan_value() : (probs[i] > 0.5 ? 1.0 : 0.0);
    }
    return accuracy(pred, labels);
}

double directional_accuracy_from_returns(const std::vector<double>& pred_returns,
                                         const std::vector<double>& labels) {
    std::vector<double> pred(pred_returns.size());
    for (std::size_t i = 0; i < pred_returns.size(); ++i) {
        pred[i] = is_missing(pred_returns[i]) ? nan_value() : (pred_returns[i] > 0.0 ? 1.0 : 0.0);
    }
    return accuracy(pred, labels);
}

ConfidenceReport high_confidence_analysis(const std::vector<double>& p_cla, double threshold) {
    ConfidenceReport r;
    r.threshold = threshold;
    if (p_cla.empty()) {
        r.high_confidence_proportion = 0;
        r.selected_output = "regression";
        return r;
    }
    std::size_t high = 0, total = 0;
    for (double p : p_cla) {
        if (is_missing(p)) continue;
        if (p < 0.0 || p > 1.0) throw ValidationError("high_confidence_analysis: probability out of range");
        ++total;
        if (p > 0.6 || p < 0.4) ++high;
    }
    r.high_confidence_proportion =
        total ? static_cast<double>(high) / static_cast<double>(total) : 0.0;
    r.selected_output = r.high_confidence_proportion > threshold ? "classification" : "regression";
    return r;
}

EvalReport evaluate_days(const std::vector<std::vector<double>>& pred_by_day,
                         const std::vector<std::vector<double>>& actual_by_day,
                         const std::vector<double>& probs, const std::vector<double>& labels) {
    if (pred_by_day.size() != actual_by_day.size()) {
        throw ShapeError("evaluate_days: day count mismatch");
    }
    std::vector<double> daily_ic, daily_rank;
    for (std::size_t d = 0; d < pred_by_day.size(); ++d) {
        daily_ic.push_back(ic(pred_by_day[d], actual_by_day[d]));
        daily_rank.push_back(rank_ic(pred_by_day[d], actual_by_day[d]));
    }
    const auto sic = summarize_daily(daily_ic);
    const auto srank = summarize_daily(daily_rank);
    EvalReport r;
    r.ic_mean = sic.mean;
    r.icir = sic.ir;
    r.rank_ic_mean = srank.mean;
    r.rank_icir = srank.ir;
    r.days = sic.days;
    r.directional_accuracy = directional_accuracy_from_probs(probs, labels);
    return r;
}

void EvalReport::save_csv(const std::string& path) const {
    csv::Table t;
    t.header = {"ic", "rank_ic", "icir", "rank_icir", "directional_accuracy", "days"};
    auto fmt = [](double v) { return is_missing(v) ? std::string() : csv::format_double(v); };
    t.rows.push_back({fmt(ic_mean), fmt(rank_ic_mean), fmt(icir), fmt(rank_icir),
                      fmt(directional_accuracy), std::to_string(days)});
    csv::write_file(path, t);
}

std::string EvalReport::to_json() const {
    nlohmann::json j;
    auto put = [&j](const char* key, double v) {
        if (is_missing(v)) {
            j[key] = nullptr;
        } else {
            j[key] = v;
        }
    };
    put("ic", ic_mean);
    put("rank_ic", rank_ic_mean);
    put("icir", icir);
    put("rank_icir", rank_icir);
    put("directional_accuracy", directional_accuracy);
    j["days"] = days;
    return j.dump(2);
}

std::string ConfidenceReport::to_json() const {
    nlohmann::json j;
    j["high_confidence_proportion"] = high_confidence_proportion;
    j["selected_output"] = selected_output;
    j["threshold"] = threshold;
    return j.dump(2);
}

}  // namespace stockformer::eval
