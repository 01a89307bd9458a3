#include "stockformer/synthetic.h"

#include <cmath>
#include <random>

#include "stockformer/csv.h"
#include "stockformer/graphs.h"
#include "stockformer/errors.h"

namespace stockformer::synthetic {

namespace {

bool leap(int y) { return (y % 4 == 0 && y % 100 != 0) || y % 400 == 0; }

int days_in_month(int y, int m) {
    static const int d[] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
    return m == 2 && leap(y) ? 29 : d[m - 1];
}

// Sakamoto's day-of-week; 0 = Sunday.
int day_of_week(int y, int m, int d) {
    static const int t[] = {0, 3, 2, 5, 0, 3, 5, 1, 4, 6, 2, 4};
    if (m < 3) y -= 1;
    return (y + y / 4 - y / 100 + y / 400 + t[m - 1] + d) % 7;
}

struct Ymd {
    int y, m, d;
};

Ymd parse_date(const std::string& iso) {
    if (!data::is_iso_date(iso)) throw ArgumentError("bad ISO date: " + iso);
    return {std::stoi(iso.substr(0, 4)), std::stoi(iso.substr(5, 2)), std::stoi(iso.substr(8, 2))};
}

std::string format_date(const Ymd& d) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02d", d.y, d.m, d.d);
    return buf;
}

void advance_day(Ymd& d) {
    if (++d.d > days_in_month(d.y, d.m)) {
        d.d = 1;
        if (++d.m > 12) {
            d.m = 1;
            ++d.y;
        }
    }
}

}  // namespace

std::vector<std::string> weekday_calendar(const std::string& start, std::size_t days) {
    Ymd cur = parse_date(start);
    std::vector<std::string> out;
    out.reserve(days);
    while (out.size() < days) {
        const int dow = day_of_week(cur.y, cur.m, cur.d);
        if (dow != 0 && dow != 6) out.push_back(format_date(cur));
        advance_day(cur);
    }
    return out;
}

GeneratedData generate(const config::SyntheticConfig& cfg) {
    if (cfg.stocks < 1 || cfg.days < 2) throw ArgumentError("synthetic: need stocks >= 1, days >= 2");
    GeneratedData g;
    const auto calendar = weekday_calendar(cfg.start_date, cfg.days);
    const std::size_t T = cfg.days, N = cfg.stocks;

    g.panel.calendar = calendar;
    for (std::size_t n = 0; n < N; ++n) {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "S%03zu", n);
        g.panel.symbols.push_back(buf);
    }
    for (Mat* m : {&g.panel.open, &g.panel.high, &g.panel.low, &g.panel.close, &g.panel.vwap,
                   &g.panel.volume}) {
        *m = Mat(T, N, nan_value());
    }

    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);

    const double phi = -cfg.signal;  // mean reversion
    for (std::size_t n = 0; n < N; ++n) {
        double close = 20.0 + 60.0 * u01(rng);
        double ret = cfg.noise * gauss(rng);
        for (std::size_t t = 0; t < T; ++t) {
            if (t > 0) {
                ret = phi * ret + cfg.noise * gauss(rng);
                close *= 1.0 + ret;
            }
            const double prev_close = t > 0 ? g.panel.close(t - 1, n) : close;
            double open = prev_close * (1.0 + 0.002 * gauss(rng));
            const double hi_pad = 1.0 + 0.002 * u01(rng);
            const double lo_pad = 1.0 - 0.002 * u01(rng);
            const double high = std::max(open, close) * hi_pad;
            const double low = std::min(open, close) * lo_pad;
            const double vwap = 0.25 * (open + high + low + close);
            g.panel.open(t, n) = open;
            g.panel.high(t, n) = high;
            g.panel.low(t, n) = low;
            g.panel.close(t, n) = close;
            g.panel.vwap(t, n) = vwap;
            g.panel.volume(t, n) = std::floor(std::exp(12.0 + 0.3 * gauss(rng)));
        }
        static const char* kIndustries[] = {"TECH", "FIN", "ENERGY"};
        g.industries.push_back(kIndustries[n % 3]);
        g.mktcaps.push_back(g.panel.close(0, n) * (1e7 + 1e7 * u01(rng)));
    }

    g.benchmark_dates = calendar;
    for (std::size_t t = 0; t < T; ++t) {
        double s = 0;
        for (std::size_t n = 0; n < N; ++n) s += g.panel.close(t, n);
        g.benchmark_values.push_back(s / static_cast<double>(N));
    }
    return g;
}

void save_benchmark_csv(const GeneratedData& g, const std::string& path) {
    csv::Table t;
    t.header = {"date", "value"};
    for (std::size_t i = 0; i < g.benchmark_dates.size(); ++i) {
        t.rows.push_back({g.benchmark_dates[i], csv::format_double(g.benchmark_values[i])});
    }
    csv::write_file(path, t);
}

void save_metadata_csv(const GeneratedData& g, const std::string& path) {
    csv::Table t;
    t.header = {"symbol", "industry", "mktcap_date", "mktcap"};
    for (std::size_t n = 0; n < g.panel.symbols.size(); ++n) {
        t.rows.push_back({g.panel.symbols[n], g.industries[n], g.panel.calendar.front(),
                          csv::format_double(g.mktcaps[n])});
    }
    csv::write_file(path, t);
}

std::vector<model::Window> make_planted_windows(std::size_t count, std::size_t stocks,
                                                std::size_t t1, std::size_t t2,
                                                std::size_t channels, std::uint64_t seed,
                                                double coef, bool sign_by_stock) {
    if (channels < 3) throw ArgumentError("make_planted_windows: need >= 3 channels");
    const std::size_t L = count + t1 + t2;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);

    // driver signal z and returns r with a two-step information lag, so every
    // prediction horizon is a function of the observed window
    Mat z(L, stocks), r(L, stocks);
    for (std::size_t t = 0; t < L; ++t)
        for (std::size_t n = 0; n < stocks; ++n) z(t, n) = u(rng);
    for (std::size_t t = 0; t < L; ++t) {
        for (std::size_t n = 0; n < stocks; ++n) {
            const double c = sign_by_stock && n % 2 == 1 ? -coef : coef;
            r(t, n) = t >= 2 ? c * z(t - 2, n) : c * u(rng);
        }
    }

    Cube noise(L, stocks, channels, 0.0);
    for (auto& v : noise.v) v = 0.1 * gauss(rng);

    const auto haar = wavelet::FilterPair::haar();
    std::vector<model::Window> out;
    out.reserve(count);
    for (std::size_t w = 0; w < count; ++w) {
        model::Window win;
        win.input = Cube(t1, stocks, channels, 0.0);
        for (std::size_t i = 0; i < t1; ++i) {
            const std::size_t t = w + i;
            for (std::size_t n = 0; n < stocks; ++n) {
                win.input(i, n, 0) = r(t, n);
                win.input(i, n, 1) = r(t, n) > 0 ? 1.0 : 0.0;
                win.input(i, n, 2) = z(t, n);
                for (std::size_t c = 3; c < channels; ++c) win.input(i, n, c) = noise(t, n, c);
            }
        }
        win.target_return = Mat(t2, stocks);
        win.label_trend = Mat(t2, stocks);
        Mat joint(t1 + t2, stocks);
        for (std::size_t i = 0; i < t1 + t2; ++i)
            for (std::size_t n = 0; n < stocks; ++n) joint(i, n) = r(w + i, n);
        for (std::size_t i = 0; i < t2; ++i) {
            for (std::size_t n = 0; n < stocks; ++n) {
                win.target_return(i, n) = r(w + t1 + i, n);
                win.label_trend(i, n) = win.target_return(i, n) > 0 ? 1.0 : 0.0;
            }
        }
        win.target_lowfreq = model::low_frequency_targets(joint, t2, haar);
        win.label_lowfreq = Mat(t2, stocks);
        for (std::size_t i = 0; i < t2; ++i)
            for (std::size_t n = 0; n < stocks; ++n)
                win.label_lowfreq(i, n) = win.target_lowfreq(i, n) > 0 ? 1.0 : 0.0;
        // short cycle so every slot row appearing in later windows was
        // already trained on earlier ones
        win.slot_ids.resize(t1);
        for (std::size_t i = 0; i < t1; ++i) win.slot_ids[i] = (w + i) % graphs::kSlotsPerMonth;
        out.push_back(std::move(win));
    }
    return out;
}

std::vector<model::Window> make_component_windows(std::size_t count, std::size_t stocks,
                                                  std::size_t t1, std::size_t t2,
                                                  std::uint64_t seed, double noise) {
    const std::size_t channels = 3;  // return, trend, driver
    const std::size_t L = count + t1 + t2;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);

    Mat z(L, stocks), r(L, stocks);
    for (std::size_t t = 0; t < L; ++t)
        for (std::size_t n = 0; n < stocks; ++n) z(t, n) = u(rng);
    for (std::size_t t = 0; t < L; ++t) {
        for (std::size_t n = 0; n < stocks; ++n) {
            const double driver = t >= 2 ? z(t - 2, n) : u(rng);
            const double bias = n % 2 == 0 ? 0.03 : -0.03;
            const double alternation = (t % 2 == 0 ? 1.0 : -1.0) * 0.02;
            r(t, n) = 0.07 * std::tanh(2.0 * driver) + bias + alternation + noise * gauss(rng);
        }
    }

    const auto haar = wavelet::FilterPair::haar();
    std::vector<model::Window> out;
    out.reserve(count);
    for (std::size_t w = 0; w < count; ++w) {
        model::Window win;
        win.input = Cube(t1, stocks, channels, 0.0);
        for (std::size_t i = 0; i < t1; ++i) {
            const std::size_t t = w + i;
            for (std::size_t n = 0; n < stocks; ++n) {
                win.input(i, n, 0) = r(t, n);
                win.input(i, n, 1) = r(t, n) > 0 ? 1.0 : 0.0;
                win.input(i, n, 2) = z(t, n);
            }
        }
        win.target_return = Mat(t2, stocks);
        win.label_trend = Mat(t2, stocks);
        Mat joint(t1 + t2, stocks);
        for (std::size_t i = 0; i < t1 + t2; ++i)
            for (std::size_t n = 0; n < stocks; ++n) joint(i, n) = r(w + i, n);
        for (std::size_t i = 0; i < t2; ++i) {
            for (std::size_t n = 0; n < stocks; ++n) {
                win.target_return(i, n) = r(w + t1 + i, n);
                win.label_trend(i, n) = win.target_return(i, n) > 0 ? 1.0 : 0.0;
            }
        }
        win.target_lowfreq = model::low_frequency_targets(joint, t2, haar);
        win.label_lowfreq = Mat(t2, stocks);
        for (std::size_t i = 0; i < t2; ++i)
            for (std::size_t n = 0; n < stocks; ++n)
                win.label_lowfreq(i, n) = win.target_lowfreq(i, n) > 0 ? 1.0 : 0.0;
        win.slot_ids.resize(t1);
        for (std::size_t i = 0; i < t1; ++i) win.slot_ids[i] = (w + i) % graphs::kSlotsPerMonth;
        out.push_back(std::move(win));
    }
    return out;
}

}  // namespace stockformer::synthetic
