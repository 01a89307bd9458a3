#include "stockformer/factors.h"

#include <algorithm>
#include <cmath>
#include <functional>
#include <set>
#include <thread>

#include "stockformer/csv.h"
#include "stockformer/errors.h"
#include "stockformer/stats.h"

namespace stockformer::factors {

namespace {

const char* category_label(Category c) {
    switch (c) {
        case Category::Close: return "CLOSE";
        case Category::Open: return "OPEN";
        case Category::High: return "HIGH";
        case Category::Low: return "LOW";
        case Category::Vwap: return "VWAP";
        case Category::Volume: return "VOLUME";
    }
    return "?";
}

constexpr int kLookback = 60;
constexpr double kVolumeEps = 1e-12;

// Runs fn(f) for f in [0, count) across `threads` workers. Each channel is
// written to a disjoint slice, so the merge is deterministic.
void parallel_channels(std::size_t count, unsigned threads, const std::function<void(std::size_t)>& fn) {
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    threads = std::min<unsigned>(threads, static_cast<unsigned>(count ? count : 1));
    if (threads <= 1) {
        for (std::size_t f = 0; f < count; ++f) fn(f);
        return;
    }
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < threads; ++w) {
        pool.emplace_back([&fn, count, threads, w] {
            for (std::size_t f = w; f < count; f += threads) fn(f);
        });
    }
    for (auto& th : pool) th.join();
}

}  // namespace

std::string FactorDefinition::name() const {
    return std::string(category_label(category)) + std::to_string(lag);
}

std::vector<FactorDefinition> alpha360_definitions() {
    std::vector<FactorDefinition> defs;
    defs.reserve(360);
    for (Category c : {Category::Close, Category::Open, Category::High, Category::Low,
                       Category::Vwap, Category::Volume}) {
        for (int lag = 0; lag < kLookback; ++lag) defs.push_back({c, lag});
    }
    return defs;
}

int FactorPanel::channel_index(const std::string& name) const {
    for (std::size_t i = 0; i < channel_names.size(); ++i) {
        if (channel_names[i] == name) return static_cast<int>(i);
    }
    return -1;
}

FactorPanel build_alpha360(const data::PanelDataset& panel, unsigned threads) {
    const auto defs = alpha360_definitions();
    const std::size_t T = panel.dates_count(), N = panel.symbols_count(), F = defs.size();
    FactorPanel out;
    out.dates = panel.calendar;
    out.symbols = panel.symbols;
    out.values = Cube(T, N, F, nan_value());
    out.channel_names.reserve(F);
    for (const auto& d : defs) out.channel_names.push_back(d.name());

    auto series_of = [&panel](Category c) -> const Mat& {
        switch (c) {
            case Category::Close: return panel.close;
            case Category::Open: return panel.open;
            case Category::High: return panel.high;
            case Category::Low: return panel.low;
            case Category::Vwap: return panel.vwap;
            case Category::Volume: return panel.volume;
        }
        return panel.close;
    };

    parallel_channels(F, threads, [&](std::size_t f) {
        const auto& def = defs[f];
        const Mat& src = series_of(def.category);
        const bool is_volume = def.category == Category::Volume;
        for (std::size_t t = kLookback - 1; t < T; ++t) {
            for (std::size_t n = 0; n < N; ++n) {
                const double ref = src(t - def.lag, n);
                const double denom = is_volume ? panel.volume(t, n) : panel.close(t, n);
                if (is_missing(ref) || is_missing(denom)) continue;
                out.values(t, n, f) = is_volume ? ref / (denom + kVolumeEps) : ref / denom;
            }
        }
    });
    return out;
}

FactorPanel preprocess(const FactorPanel& raw, unsigned threads) {
    const std::size_t T = raw.dates.size(), N = raw.symbols.size(), F = raw.channels();
    Cube cleaned(T, N, F, nan_value());
    std::vector<char> empty_channel(F, 0);

    parallel_channels(F, threads, [&](std::size_t f) {
        std::vector<double> prev(N, nan_value());  // last raw-scale value per stock
        std::vector<double> filled(N);
        bool any_value = false;
        for (std::size_t t = 0; t < T; ++t) {
            // step 1: forward fill from the same stock's previous day
            for (std::size_t n = 0; n < N; ++n) {
                const double v = raw.values(t, n, f);
                filled[n] = is_missing(v) ? prev[n] : v;
            }
            // step 2: mark |v - mean| > 3 std as missing, refill per step 1
            double m = 0, ss = 0;
            std::size_t cnt = 0;
            for (std::size_t n = 0; n < N; ++n) {
                if (!is_missing(filled[n])) {
                    m += filled[n];
                    ++cnt;
                }
            }
            if (cnt > 0) {
                m /= static_cast<double>(cnt);
                for (std::size_t n = 0; n < N; ++n) {
                    if (!is_missing(filled[n])) ss += (filled[n] - m) * (filled[n] - m);
                }
                const double sd = std::sqrt(ss / static_cast<double>(cnt));
                if (sd > 0.0) {
                    for (std::size_t n = 0; n < N; ++n) {
                        if (!is_missing(filled[n]) && std::fabs(filled[n] - m) > 3.0 * sd) {
                            filled[n] = prev[n];
                        }
                    }
                }
            }
            for (std::size_t n = 0; n < N; ++n) {
                if (!is_missing(filled[n])) prev[n] = filled[n];
            }
            // step 3: z-score with population std; constant columns -> zeros
            double zm = 0, zss = 0;
            std::size_t zc = 0;
            for (std::size_t n = 0; n < N; ++n) {
                if (!is_missing(filled[n])) {
                    zm += filled[n];
                    ++zc;
                }
            }
            if (zc == 0) continue;
            any_value = true;
            zm /= static_cast<double>(zc);
            for (std::size_t n = 0; n < N; ++n) {
                if (!is_missing(filled[n])) zss += (filled[n] - zm) * (filled[n] - zm);
            }
            const double zsd = std::sqrt(zss / static_cast<double>(zc));
            for (std::size_t n = 0; n < N; ++n) {
                if (is_missing(filled[n])) continue;
                cleaned(t, n, f) = zsd > 0.0 ? (filled[n] - zm) / zsd : 0.0;
            }
        }
        if (!any_value) empty_channel[f] = 1;
    });

    FactorPanel out;
    out.dates = raw.dates;
    out.symbols = raw.symbols;
    out.warnings = raw.warnings;
    std::vector<std::size_t> keep;
    for (std::size_t f = 0; f < F; ++f) {
        if (empty_channel[f]) {
            out.warnings.push_back("dropped empty factor channel " + raw.channel_names[f]);
        } else {
            keep.push_back(f);
        }
    }
    out.values = Cube(T, N, keep.size(), nan_value());
    for (std::size_t i = 0; i < keep.size(); ++i) {
        out.channel_names.push_back(raw.channel_names[keep[i]]);
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t n = 0; n < N; ++n) out.values(t, n, i) = cleaned(t, n, keep[i]);
    }
    return out;
}

namespace {

// Columns of the per-date design matrix, in fixed order.
struct Design {
    std::vector<std::string> names;
    std::vector<std::vector<double>> cols;  // each length n_obs
};

Design build_design(const std::vector<std::string>& industry, const std::vector<double>& mktcap,
                    const std::vector<std::size_t>& obs) {
    Design d;
    d.names.push_back("intercept");
    d.cols.emplace_back(obs.size(), 1.0);
    if (!industry.empty()) {
        std::set<std::string> labels;
        for (std::size_t i : obs) labels.insert(industry[i]);
        for (const auto& lab : labels) {
            std::vector<double> col(obs.size(), 0.0);
            for (std::size_t r = 0; r < obs.size(); ++r) {
                if (industry[obs[r]] == lab) col[r] = 1.0;
            }
            d.names.push_back("industry:" + lab);
            d.cols.push_back(std::move(col));
        }
    }
    if (!mktcap.empty()) {
        std::vector<double> col(obs.size());
        for (std::size_t r = 0; r < obs.size(); ++r) col[r] = std::log(mktcap[obs[r]]);
        d.names.push_back("log_mktcap");
        d.cols.push_back(std::move(col));
    }
    return d;
}

}  // namespace

NeutralizeResult neutralize(const std::vector<double>& factor,
                            const std::vector<std::string>& industry,
                            const std::vector<double>& mktcap) {
    const std::size_t N = factor.size();
    if (!industry.empty() && industry.size() != N) {
        throw ShapeError("neutralize: industry size " + std::to_string(industry.size()) +
                         " vs factor size " + std::to_string(N));
    }
    if (!mktcap.empty() && mktcap.size() != N) {
        throw ShapeError("neutralize: mktcap size " + std::to_string(mktcap.size()) +
                         " vs factor size " + std::to_string(N));
    }
    if (industry.empty() && mktcap.empty()) {
        throw ArgumentError("neutralize: need industry labels or market caps");
    }
    for (double c : mktcap) {
        if (!is_missing(c) && !(c > 0.0)) throw ValidationError("neutralize: market cap must be positive");
    }

    // usable observations: factor present, and every supplied regressor present
    std::vector<std::size_t> obs;
    for (std::size_t i = 0; i < N; ++i) {
        if (is_missing(factor[i])) continue;
        if (!mktcap.empty() && is_missing(mktcap[i])) continue;
        if (!industry.empty() && industry[i].empty()) continue;
        obs.push_back(i);
    }

    NeutralizeResult res;
    res.residuals.assign(N, nan_value());
    Design d = build_design(industry, mktcap, obs);
    if (obs.size() <= d.cols.size()) {
        throw ArgumentError("neutralize: " + std::to_string(obs.size()) +
                            " observations for " + std::to_string(d.cols.size()) + " regressors");
    }

    // Modified Gram-Schmidt, dropping columns that collapse onto the span of
    // earlier ones (keeps the lexicographically earlier dummy of a collinear
    // pair, since industry columns are built in sorted order).
    std::vector<std::vector<double>> basis;  // orthonormal kept columns
    const double tol = 1e-10;
    for (std::size_t j = 0; j < d.cols.size(); ++j) {
        std::vector<double> v = d.cols[j];
        double norm0 = 0;
        for (double x : v) norm0 += x * x;
        norm0 = std::sqrt(norm0);
        for (const auto& q : basis) {
            double dot = 0;
            for (std::size_t r = 0; r < v.size(); ++r) dot += q[r] * v[r];
            for (std::size_t r = 0; r < v.size(); ++r) v[r] -= dot * q[r];
        }
        double norm = 0;
        for (double x : v) norm += x * x;
        norm = std::sqrt(norm);
        if (norm <= tol * std::max(1.0, norm0)) {
            res.dropped_regressors.push_back(d.names[j]);
            continue;
        }
        for (double& x : v) x /= norm;
        basis.push_back(std::move(v));
    }

    std::vector<double> y(obs.size());
    for (std::size_t r = 0; r < obs.size(); ++r) y[r] = factor[obs[r]];
    for (const auto& q : basis) {
        double dot = 0;
        for (std::size_t r = 0; r < y.size(); ++r) dot += q[r] * y[r];
        for (std::size_t r = 0; r < y.size(); ++r) y[r] -= dot * q[r];
    }
    for (std::size_t r = 0; r < obs.size(); ++r) res.residuals[obs[r]] = y[r];
    return res;
}

ICReport ic_analysis(const FactorPanel& factors, const data::ReturnMatrix& forward_returns,
                     double threshold) {
    if (factors.dates != forward_returns.dates || factors.symbols != forward_returns.symbols) {
        throw AlignmentError("ic_analysis: factor panel and return matrix are not aligned");
    }
    const std::size_t T = factors.dates.size(), N = factors.symbols.size(), F = factors.channels();
    ICReport report;
    report.threshold = threshold;
    report.factors.resize(F);
    for (std::size_t f = 0; f < F; ++f) {
        std::vector<double> daily;
        std::vector<double> x(N), y(N);
        for (std::size_t t = 0; t + 1 < T; ++t) {
            for (std::size_t n = 0; n < N; ++n) {
                x[n] = factors.values(t, n, f);
                y[n] = forward_returns.values(t + 1, n);  // return over t -> t+1
            }
            const double ic = stats::spearman(x, y, 3);
            if (!is_missing(ic)) daily.push_back(ic);
        }
        FactorIC& fic = report.factors[f];
        fic.name = factors.channel_names[f];
        fic.days = daily.size();
        if (daily.empty()) {
            fic.mean_ic = nan_value();
            fic.ic_std = nan_value();
            fic.pct_positive = nan_value();
            fic.pct_abs_gt_002 = nan_value();
            fic.effective = false;
            continue;
        }
        fic.mean_ic = stats::mean(daily);
        fic.ic_std = stats::sample_std(daily);
        std::size_t pos = 0, big = 0;
        for (double ic : daily) {
            if (ic > 0.0) ++pos;
            if (std::fabs(ic) > 0.02) ++big;
        }
        fic.pct_positive = 100.0 * static_cast<double>(pos) / static_cast<double>(daily.size());
        fic.pct_abs_gt_002 = 100.0 * static_cast<double>(big) / static_cast<double>(daily.size());
        fic.effective = fic.mean_ic >= threshold;
    }
    return report;
}

std::vector<std::string> ICReport::effective_names() const {
    std::vector<std::string> out;
    for (const auto& f : factors) {
        if (f.effective) out.push_back(f.name);
    }
    return out;
}

void ICReport::save_csv(const std::string& path) const {
    csv::Table t;
    t.header = {"factor", "mean_ic", "ic_std", "pct_ic_positive", "pct_abs_ic_gt_002", "days",
                "effective"};
    auto fmt = [](double v) { return is_missing(v) ? std::string() : csv::format_double(v); };
    for (const auto& f : factors) {
        t.rows.push_back({f.name, fmt(f.mean_ic), fmt(f.ic_std), fmt(f.pct_positive),
                          fmt(f.pct_abs_gt_002), std::to_string(f.days),
                          f.effective ? "1" : "0"});
    }
    csv::write_file(path, t);
}

FactorPanel select_channels(const FactorPanel& panel, const std::vector<std::string>& names) {
    FactorPanel out;
    out.dates = panel.dates;
    out.symbols = panel.symbols;
    out.warnings = panel.warnings;
    std::vector<int> idx;
    for (const auto& name : names) {
        const int f = panel.channel_index(name);
        if (f < 0) throw ArgumentError("select_channels: unknown channel " + name);
        idx.push_back(f);
        out.channel_names.push_back(name);
    }
    const std::size_t T = panel.dates.size(), N = panel.symbols.size();
    out.values = Cube(T, N, idx.size(), nan_value());
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t i = 0; i < idx.size(); ++i)
                out.values(t, n, i) = panel.values(t, n, idx[i]);
    return out;
}

}  // namespace stockformer::factors
