#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "helpers.h"
#include "stockformer/data.h"
#include "stockformer/errors.h"
#include "stockformer/factors.h"
#include "stockformer/synthetic.h"

using namespace stockformer;

namespace {

// Brute-force Spearman: explicit average ranks, then the covariance formula.
double spearman_oracle(std::vector<double> x, std::vector<double> y) {
    auto ranks = [](const std::vector<double>& v) {
        std::vector<double> r(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) {
            double less = 0, equal = 0;
            for (std::size_t j = 0; j < v.size(); ++j) {
                if (v[j] < v[i]) ++less;
                if (v[j] == v[i]) ++equal;
            }
            r[i] = less + (equal + 1.0) / 2.0;
        }
        return r;
    };
    const auto rx = ranks(x), ry = ranks(y);
    const std::size_t n = rx.size();
    double mx = 0, my = 0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += rx[i];
        my += ry[i];
    }
    mx /= n;
    my /= n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < n; ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    return sxy / std::sqrt(sxx * syy);
}

// Normal-equations least squares (X^T X) beta = X^T y via Gaussian elimination.
std::vector<double> residuals_oracle(const std::vector<std::vector<double>>& cols,
                                     const std::vector<double>& y) {
    const std::size_t p = cols.size(), n = y.size();
    std::vector<std::vector<double>> a(p, std::vector<double>(p + 1, 0.0));
    for (std::size_t i = 0; i < p; ++i) {
        for (std::size_t j = 0; j < p; ++j) {
            for (std::size_t r = 0; r < n; ++r) a[i][j] += cols[i][r] * cols[j][r];
        }
        for (std::size_t r = 0; r < n; ++r) a[i][p] += cols[i][r] * y[r];
    }
    for (std::size_t i = 0; i < p; ++i) {
        std::size_t piv = i;
        for (std::size_t r = i + 1; r < p; ++r) {
            if (std::fabs(a[r][i]) > std::fabs(a[piv][i])) piv = r;
        }
        std::swap(a[i], a[piv]);
        for (std::size_t r = 0; r < p; ++r) {
            if (r == i || a[i][i] == 0.0) continue;
            const double f = a[r][i] / a[i][i];
            for (std::size_t j = i; j <= p; ++j) a[r][j] -= f * a[i][j];
        }
    }
    std::vector<double> beta(p, 0.0);
    for (std::size_t i = 0; i < p; ++i) beta[i] = a[i][i] != 0.0 ? a[i][p] / a[i][i] : 0.0;
    std::vector<double> res(n);
    for (std::size_t r = 0; r < n; ++r) {
        double fit = 0;
        for (std::size_t i = 0; i < p; ++i) fit += beta[i] * cols[i][r];
        res[r] = y[r] - fit;
    }
    return res;
}

data::PanelDataset tiny_panel(std::size_t days, std::size_t stocks, std::uint64_t seed) {
    config::SyntheticConfig c;
    c.days = days;
    c.stocks = stocks;
    c.seed = seed;
    return synthetic::generate(c).panel;
}

}  // namespace

TEST_CASE("alpha360 definition table") {
    const auto defs = factors::alpha360_definitions();
    CHECK(defs.size() == 360);
    CHECK(defs[0].name() == "CLOSE0");
    CHECK(defs[59].name() == "CLOSE59");
    CHECK(defs[60].name() == "OPEN0");
    CHECK(defs[359].name() == "VOLUME59");
}

TEST_CASE("build_alpha360 values") {
    const auto panel = tiny_panel(70, 3, 5);
    const auto fp = factors::build_alpha360(panel);
    CHECK(fp.channels() == 360);

    const int close0 = fp.channel_index("CLOSE0");
    const int close1 = fp.channel_index("CLOSE1");
    const int vol1 = fp.channel_index("VOLUME1");
    REQUIRE(close0 >= 0);

    SUBCASE("warmup dates stay missing") {
        for (std::size_t t = 0; t < 59; ++t) CHECK(is_missing(fp.values(t, 0, close0)));
        CHECK(!is_missing(fp.values(59, 0, close0)));
    }
    SUBCASE("CLOSE0 is identically one") {
        for (std::size_t t = 59; t < panel.dates_count(); ++t) {
            for (std::size_t n = 0; n < panel.symbols_count(); ++n) {
                CHECK(fp.values(t, n, close0) == doctest::Approx(1.0).epsilon(1e-14));
            }
        }
    }
    SUBCASE("CLOSE1 is the lagged price ratio") {
        const std::size_t t = 60, n = 1;
        CHECK(fp.values(t, n, close1) ==
              doctest::Approx(panel.close(t - 1, n) / panel.close(t, n)).epsilon(1e-14));
    }
    SUBCASE("volume factor uses the 1e-12 guard") {
        // hand-built two-day series: volume [100, 0]  -> 100 / (0 + 1e-12) = 1e14
        const double v = 100.0 / (0.0 + 1e-12);
        CHECK(v == doctest::Approx(1e14).epsilon(1e-12));
        data::PanelDataset p2 = tiny_panel(70, 1, 6);
        p2.volume(69, 0) = 0.0;
        const auto f2 = factors::build_alpha360(p2);
        const int idx = f2.channel_index("VOLUME1");
        CHECK(f2.values(69, 0, idx) ==
              doctest::Approx(p2.volume(68, 0) / 1e-12).epsilon(1e-10));
        (void)vol1;
    }
    SUBCASE("thread count does not change results") {
        const auto fp4 = factors::build_alpha360(panel, 4);
        for (std::size_t i = 0; i < fp.values.v.size(); ++i) {
            const double a = fp.values.v[i], b = fp4.values.v[i];
            CHECK(((is_missing(a) && is_missing(b)) || a == b));
        }
    }
}

TEST_CASE("preprocess steps") {
    SUBCASE("bounded data is idempotent under preprocess") {
        std::mt19937_64 rng(3);
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        factors::FactorPanel raw;
        raw.dates = synthetic::weekday_calendar("2021-01-04", 12);
        raw.symbols = {"A", "B", "C", "D", "E", "F"};
        raw.channel_names = {"F0", "F1"};
        raw.values = Cube(12, 6, 2);
        for (auto& v : raw.values.v) v = u(rng);
        const auto once = factors::preprocess(raw);
        const auto twice = factors::preprocess(once);
        REQUIRE(once.channels() == twice.channels());
        for (std::size_t i = 0; i < once.values.v.size(); ++i) {
            CHECK(std::fabs(once.values.v[i] - twice.values.v[i]) < 1e-8);
        }
        // per-date population moments
        for (std::size_t t = 0; t < 12; ++t) {
            for (std::size_t f = 0; f < 2; ++f) {
                double m = 0, ss = 0;
                for (std::size_t n = 0; n < 6; ++n) m += once.values(t, n, f);
                m /= 6;
                for (std::size_t n = 0; n < 6; ++n) {
                    ss += (once.values(t, n, f) - m) * (once.values(t, n, f) - m);
                }
                CHECK(std::fabs(m) < 1e-8);
                CHECK(std::fabs(ss / 6 - 1.0) < 1e-8);
            }
        }
    }
    SUBCASE("outlier beyond 3 sigma is refilled from the prior day") {
        const std::size_t N = 100;
        factors::FactorPanel raw;
        raw.dates = {"2021-01-04", "2021-01-05"};
        raw.symbols.resize(N);
        for (std::size_t n = 0; n < N; ++n) raw.symbols[n] = "S" + std::to_string(n);
        raw.channel_names = {"F0"};
        raw.values = Cube(2, N, 1);
        std::mt19937_64 rng(4);
        std::uniform_real_distribution<double> u(-1.0, 1.0);
        for (std::size_t n = 0; n < N; ++n) {
            raw.values(0, n, 0) = u(rng);
            raw.values(1, n, 0) = u(rng);
        }
        // plant a gross outlier on day 2 for the first stock
        raw.values(1, 0, 0) = 50.0;
        const auto out = factors::preprocess(raw);
        // its z-score must equal the z of the refilled (prior-day) value, so
        // reconstruct the expectation explicitly
        std::vector<double> day2(N);
        for (std::size_t n = 0; n < N; ++n) day2[n] = raw.values(1, n, 0);
        day2[0] = raw.values(0, 0, 0);  // refilled
        double m = 0;
        for (double v : day2) m += v;
        m /= N;
        double ss = 0;
        for (double v : day2) ss += (v - m) * (v - m);
        const double sd = std::sqrt(ss / N);
        CHECK(out.values(1, 0, 0) == doctest::Approx((day2[0] - m) / sd).epsilon(1e-12));
    }
    SUBCASE("constant column z-scores to zeros") {
        factors::FactorPanel raw;
        raw.dates = {"2021-01-04"};
        raw.symbols = {"A", "B", "C"};
        raw.channel_names = {"F0"};
        raw.values = Cube(1, 3, 1, 2.5);
        const auto out = factors::preprocess(raw);
        for (std::size_t n = 0; n < 3; ++n) CHECK(out.values(0, n, 0) == 0.0);
    }
    SUBCASE("missing cells fill forward from the previous day") {
        factors::FactorPanel raw;
        raw.dates = {"2021-01-04", "2021-01-05"};
        raw.symbols = {"A", "B", "C"};
        raw.channel_names = {"F0"};
        raw.values = Cube(2, 3, 1);
        raw.values(0, 0, 0) = 1.0;
        raw.values(0, 1, 0) = 2.0;
        raw.values(0, 2, 0) = 3.0;
        raw.values(1, 0, 0) = nan_value();
        raw.values(1, 1, 0) = 5.0;
        raw.values(1, 2, 0) = 6.0;
        const auto out = factors::preprocess(raw);
        // filled day-2 vector is [1, 5, 6]
        const double m = 4.0;
        const double sd = std::sqrt(((1 - m) * (1 - m) + 1 + 4) / 3.0);
        CHECK(out.values(1, 0, 0) == doctest::Approx((1 - m) / sd).epsilon(1e-12));
    }
    SUBCASE("entirely missing channel is dropped with a warning") {
        factors::FactorPanel raw;
        raw.dates = {"2021-01-04"};
        raw.symbols = {"A", "B"};
        raw.channel_names = {"F0", "F1"};
        raw.values = Cube(1, 2, 2, nan_value());
        raw.values(0, 0, 0) = 1.0;
        raw.values(0, 1, 0) = 2.0;
        const auto out = factors::preprocess(raw);
        CHECK(out.channels() == 1);
        CHECK(out.channel_names[0] == "F0");
        REQUIRE(out.warnings.size() == 1);
        CHECK(out.warnings[0].find("F1") != std::string::npos);
    }
}

TEST_CASE("neutralize") {
    std::mt19937_64 rng(17);
    std::normal_distribution<double> g(0.0, 1.0);
    const std::size_t N = 10;
    std::vector<std::string> industry = {"A", "A", "B", "B", "B", "C", "C", "C", "C", "A"};
    std::vector<double> caps(N);
    for (auto& c : caps) c = std::exp(10.0 + g(rng));

    SUBCASE("factor equal to log mktcap leaves zero residuals") {
        std::vector<double> f(N);
        for (std::size_t i = 0; i < N; ++i) f[i] = std::log(caps[i]);
        const auto res = factors::neutralize(f, industry, caps);
        for (double r : res.residuals) CHECK(std::fabs(r) < 1e-10);
    }
    SUBCASE("factor orthogonal to all regressors passes through") {
        // build a vector orthogonal to the regressor span via the oracle; the
        // reduced design {intercept, A, B, logcap} spans the full dummy set
        std::vector<double> f(N);
        for (auto& v : f) v = g(rng);
        std::vector<std::vector<double>> cols;
        cols.emplace_back(N, 1.0);
        for (const char* lab : {"A", "B"}) {
            std::vector<double> c(N, 0.0);
            for (std::size_t i = 0; i < N; ++i) c[i] = industry[i] == lab ? 1.0 : 0.0;
            cols.push_back(std::move(c));
        }
        {
            std::vector<double> c(N);
            for (std::size_t i = 0; i < N; ++i) c[i] = std::log(caps[i]);
            cols.push_back(std::move(c));
        }
        const auto orth = residuals_oracle(cols, f);
        const auto res = factors::neutralize(orth, industry, caps);
        for (std::size_t i = 0; i < N; ++i) CHECK(std::fabs(res.residuals[i] - orth[i]) < 1e-10);
    }
    SUBCASE("random case matches the normal-equations oracle") {
        for (int trial = 0; trial < 10; ++trial) {
            std::vector<double> f(N);
            for (auto& v : f) v = g(rng);
            const auto res = factors::neutralize(f, industry, caps);
            std::vector<std::vector<double>> cols;
            cols.emplace_back(N, 1.0);
            // oracle drops dummy "C" (the collinear one under lexicographic order A, B, C)
            for (const char* lab : {"A", "B"}) {
                std::vector<double> c(N, 0.0);
                for (std::size_t i = 0; i < N; ++i) c[i] = industry[i] == lab ? 1.0 : 0.0;
                cols.push_back(std::move(c));
            }
            {
                std::vector<double> c(N);
                for (std::size_t i = 0; i < N; ++i) c[i] = std::log(caps[i]);
                cols.push_back(std::move(c));
            }
            const auto oracle = residuals_oracle(cols, f);
            for (std::size_t i = 0; i < N; ++i) {
                CHECK(std::fabs(res.residuals[i] - oracle[i]) < 1e-8);
            }
            // the dropped dummy is recorded
            REQUIRE(res.dropped_regressors.size() == 1);
            CHECK(res.dropped_regressors[0] == "industry:C");
        }
    }
    SUBCASE("residuals orthogonal to every regressor") {
        std::vector<double> f(N);
        for (auto& v : f) v = g(rng);
        const auto res = factors::neutralize(f, industry, caps);
        for (const char* lab : {"A", "B", "C"}) {
            double dot = 0;
            for (std::size_t i = 0; i < N; ++i) {
                dot += res.residuals[i] * (industry[i] == lab ? 1.0 : 0.0);
            }
            CHECK(std::fabs(dot) < 1e-8);
        }
        double dcap = 0, dint = 0;
        for (std::size_t i = 0; i < N; ++i) {
            dcap += res.residuals[i] * std::log(caps[i]);
            dint += res.residuals[i];
        }
        CHECK(std::fabs(dcap) < 1e-8);
        CHECK(std::fabs(dint) < 1e-8);
    }
    SUBCASE("neutralization is idempotent") {
        std::vector<double> f(N);
        for (auto& v : f) v = g(rng);
        const auto once = factors::neutralize(f, industry, caps);
        const auto twice = factors::neutralize(once.residuals, industry, caps);
        for (std::size_t i = 0; i < N; ++i) {
            CHECK(std::fabs(once.residuals[i] - twice.residuals[i]) < 1e-8);
        }
    }
    SUBCASE("market-cap-only regression works") {
        std::vector<double> f(N);
        for (auto& v : f) v = g(rng);
        const auto res = factors::neutralize(f, {}, caps);
        double dot = 0;
        for (std::size_t i = 0; i < N; ++i) dot += res.residuals[i] * std::log(caps[i]);
        CHECK(std::fabs(dot) < 1e-8);
    }
    SUBCASE("no regressors at all is an error") {
        CHECK_THROWS_AS(factors::neutralize({1.0, 2.0}, {}, {}), ArgumentError);
    }
}

TEST_CASE("ic_analysis") {
    auto make_panel = [](const Cube& values, std::size_t T, std::size_t N) {
        factors::FactorPanel fp;
        fp.dates = synthetic::weekday_calendar("2021-01-04", T);
        for (std::size_t n = 0; n < N; ++n) fp.symbols.push_back("S" + std::to_string(n));
        fp.channel_names = {"F0"};
        fp.values = values;
        return fp;
    };
    auto make_returns = [](const factors::FactorPanel& fp, const Mat& values) {
        data::ReturnMatrix r;
        r.dates = fp.dates;
        r.symbols = fp.symbols;
        r.values = values;
        r.trend_labels = values;
        return r;
    };

    SUBCASE("factor identical to next-day return ranking") {
        const std::size_t T = 6, N = 5;
        Cube f(T, N, 1);
        Mat rets(T, N, nan_value());
        std::mt19937_64 rng(31);
        std::normal_distribution<double> g(0.0, 1.0);
        for (std::size_t t = 0; t + 1 < T; ++t) {
            for (std::size_t n = 0; n < N; ++n) {
                const double v = g(rng);
                f(t, n, 0) = v;
                rets(t + 1, n) = std::exp(v);  // same ranking
            }
        }
        const auto fp = make_panel(f, T, N);
        const auto report = factors::ic_analysis(fp, make_returns(fp, rets));
        REQUIRE(report.factors.size() == 1);
        CHECK(report.factors[0].mean_ic == doctest::Approx(1.0).epsilon(1e-12));
        CHECK(report.factors[0].pct_positive == doctest::Approx(100.0));
        CHECK(report.factors[0].effective);
    }
    SUBCASE("negated ranking gives mean -1 and ineffective") {
        const std::size_t T = 4, N = 5;
        Cube f(T, N, 1);
        Mat rets(T, N, nan_value());
        std::mt19937_64 rng(32);
        std::normal_distribution<double> g(0.0, 1.0);
        for (std::size_t t = 0; t + 1 < T; ++t) {
            for (std::size_t n = 0; n < N; ++n) {
                const double v = g(rng);
                f(t, n, 0) = v;
                rets(t + 1, n) = -v;
            }
        }
        const auto fp = make_panel(f, T, N);
        const auto report = factors::ic_analysis(fp, make_returns(fp, rets));
        CHECK(report.factors[0].mean_ic == doctest::Approx(-1.0).epsilon(1e-12));
        CHECK_FALSE(report.factors[0].effective);
    }
    SUBCASE("random case matches the brute-force oracle") {
        const std::size_t T = 4, N = 5;
        Cube f(T, N, 1);
        Mat rets(T, N, nan_value());
        std::mt19937_64 rng(33);
        std::uniform_real_distribution<double> u(-1, 1);
        for (std::size_t t = 0; t < T; ++t) {
            for (std::size_t n = 0; n < N; ++n) {
                f(t, n, 0) = u(rng);
                if (t > 0) rets(t, n) = u(rng);
            }
        }
        const auto fp = make_panel(f, T, N);
        const auto report = factors::ic_analysis(fp, make_returns(fp, rets));
        std::vector<double> daily;
        for (std::size_t t = 0; t + 1 < T; ++t) {
            std::vector<double> x(N), y(N);
            for (std::size_t n = 0; n < N; ++n) {
                x[n] = f(t, n, 0);
                y[n] = rets(t + 1, n);
            }
            daily.push_back(spearman_oracle(x, y));
        }
        double mean = std::accumulate(daily.begin(), daily.end(), 0.0) / daily.size();
        CHECK(report.factors[0].mean_ic == doctest::Approx(mean).epsilon(1e-12));
        CHECK(report.factors[0].days == daily.size());
    }
    SUBCASE("rank ic is invariant under monotone transforms") {
        const std::size_t T = 3, N = 8;
        Cube f(T, N, 1);
        Mat rets(T, N, nan_value());
        std::mt19937_64 rng(34);
        std::uniform_real_distribution<double> u(-1, 1);
        for (std::size_t t = 0; t < T; ++t)
            for (std::size_t n = 0; n < N; ++n) {
                f(t, n, 0) = u(rng);
                if (t > 0) rets(t, n) = u(rng);
            }
        const auto fp = make_panel(f, T, N);
        const auto base = factors::ic_analysis(fp, make_returns(fp, rets));
        Cube fx = f;
        for (auto& v : fx.v) v = std::exp(3.0 * v) + 5.0;  // strictly increasing
        const auto fp2 = make_panel(fx, T, N);
        const auto mapped = factors::ic_analysis(fp2, make_returns(fp2, rets));
        CHECK(base.factors[0].mean_ic ==
              doctest::Approx(mapped.factors[0].mean_ic).epsilon(1e-12));
    }
    SUBCASE("dates with under 3 stocks are skipped") {
        const std::size_t T = 3, N = 4;
        Cube f(T, N, 1, nan_value());
        Mat rets(T, N, nan_value());
        // only two stocks populated on day 0
        f(0, 0, 0) = 1.0;
        f(0, 1, 0) = 2.0;
        for (std::size_t n = 0; n < N; ++n) {
            f(1, n, 0) = static_cast<double>(n);
            rets(1, n) = 0.1 * static_cast<double>(n);
            rets(2, n) = 0.2 - 0.1 * static_cast<double>(n);
        }
        const auto fp = make_panel(f, T, N);
        const auto report = factors::ic_analysis(fp, make_returns(fp, rets));
        CHECK(report.factors[0].days == 1);  // only day 1 vs day-2 returns
    }
}
