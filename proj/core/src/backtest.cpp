#include "stockformer/backtest.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include <json.hpp>

#include "stockformer/csv.h"
#include "stockformer/errors.h"
#include "stockformer/stats.h"

namespace stockformer::backtest {

void StrategyConfig::validate() const {
    if (n_drop == 0 || n_drop > k) throw ConfigError("strategy: need 0 < n_drop <= k");
    if (fee_rate < 0 || stamp_duty_before < 0 || stamp_duty_after < 0) {
        throw ConfigError("strategy: rates must be >= 0");
    }
    if (!(initial_cash > 0)) throw ConfigError("strategy: initial cash must be positive");
}

double StrategyConfig::stamp_duty_for(const std::string& date) const {
    return date < duty_switch_date ? stamp_duty_before : stamp_duty_after;
}

std::vector<double> NetValueSeries::daily_returns() const {
    std::vector<double> out;
    for (std::size_t i = 1; i < net_value.size(); ++i) {
        out.push_back(net_value[i] / net_value[i - 1] - 1.0);
    }
    return out;
}

void NetValueSeries::save_trades_csv(const std::string& path) const {
    csv::Table t;
    t.header = {"date", "symbol", "side", "shares", "price", "value", "fee", "duty"};
    for (const auto& tr : trades) {
        t.rows.push_back({tr.date, tr.symbol, tr.side, csv::format_double(tr.shares),
                          csv::format_double(tr.price), csv::format_double(tr.value),
                          csv::format_double(tr.fee), csv::format_double(tr.duty)});
    }
    csv::write_file(path, t);
}

void NetValueSeries::save_netvalue_csv(const std::string& path) const {
    csv::Table t;
    t.header = {"date", "net_value", "total_value", "cash"};
    for (std::size_t i = 0; i < dates.size(); ++i) {
        t.rows.push_back({dates[i], csv::format_double(net_value[i]),
                          csv::format_double(total_value[i]), csv::format_double(cash[i])});
    }
    csv::write_file(path, t);
}

ScoreTable ScoreTable::load_csv(const std::string& path) {
    auto table = csv::read_file(path);
    const int cd = table.column("date"), cs = table.column("symbol"), cv = table.column("score");
    if (cd < 0 || cs < 0 || cv < 0) {
        throw ParseError(path + ": header must contain date,symbol,score");
    }
    std::map<std::string, std::map<std::string, double>> grouped;
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        const auto& r = table.rows[i];
        const std::string ctx = path + " row " + std::to_string(i + 2);
        grouped[r[cd]][r[cs]] = csv::parse_double(r[cv], ctx);
    }
    ScoreTable out;
    for (auto& [date, row] : grouped) {
        out.dates.push_back(date);
        out.by_date.push_back(std::move(row));
    }
    return out;
}

void ScoreTable::save_csv(const std::string& path) const {
    csv::Table t;
    t.header = {"date", "symbol", "score"};
    for (std::size_t i = 0; i < dates.size(); ++i) {
        for (const auto& [sym, score] : by_date[i]) {
            t.rows.push_back({dates[i], sym, csv::format_double(score)});
        }
    }
    csv::write_file(path, t);
}

namespace {

struct Position {
    double shares = 0;
    double last_price = 0;
};

bool tradable(const data::PanelDataset& panel, int t, int n) {
    return n >= 0 && panel.has_cell(static_cast<std::size_t>(t), static_cast<std::size_t>(n)) &&
           panel.volume(static_cast<std::size_t>(t), static_cast<std::size_t>(n)) > 0.0;
}

}  // namespace

NetValueSeries run_topk_dropout(const ScoreTable& scores, const data::PanelDataset& panel,
                                const StrategyConfig& config) {
    config.validate();
    NetValueSeries series;
    double cash = config.initial_cash;
    std::map<std::string, Position> holdings;
    bool started = false;

    for (std::size_t di = 0; di < scores.dates.size(); ++di) {
        const std::string& date = scores.dates[di];
        const int t = panel.date_index(date);
        if (t < 0) throw RangeError("backtest: scored date " + date + " not in panel calendar");
        const auto& today = scores.by_date[di];

        auto close_at = [&](const std::string& sym) {
            const int n = panel.symbol_index(sym);
            return panel.close(static_cast<std::size_t>(t), static_cast<std::size_t>(n));
        };
        auto is_tradable = [&](const std::string& sym) {
            return tradable(panel, t, panel.symbol_index(sym));
        };

        // descending by score, lexicographic tie-break
        auto ranked_desc = [](std::vector<std::pair<std::string, double>> v) {
            std::sort(v.begin(), v.end(), [](const auto& a, const auto& b) {
                if (a.second != b.second) return a.second > b.second;
                return a.first < b.first;
            });
            return v;
        };

        auto execute_buy = [&](const std::string& sym, double value) {
            const double price = close_at(sym);
            const double fee = value * config.fee_rate;
            const double shares = value / price;
            cash -= value + fee;
            holdings[sym].shares += shares;
            holdings[sym].last_price = price;
            series.trades.push_back({date, sym, "buy", shares, price, value, fee, 0.0});
        };
        auto execute_sell = [&](const std::string& sym) {
            const double price = close_at(sym);
            const double shares = holdings[sym].shares;
            const double value = shares * price;
            const double fee = value * config.fee_rate;
            const double duty = value * config.stamp_duty_for(date);
            cash += value - fee - duty;
            holdings.erase(sym);
            series.trades.push_back({date, sym, "sell", shares, price, value, fee, duty});
        };

        if (!started) {
            // cold start: buy the top k equally by value
            std::vector<std::pair<std::string, double>> candidates;
            for (const auto& [sym, score] : today) {
                if (is_tradable(sym)) candidates.emplace_back(sym, score);
            }
            candidates = ranked_desc(std::move(candidates));
            const std::size_t buys = std::min(config.k, candidates.size());
            if (buys > 0) {
                const double per_value = cash / (static_cast<double>(buys) * (1.0 + config.fee_rate));
                for (std::size_t i = 0; i < buys; ++i) execute_buy(candidates[i].first, per_value);
                started = true;
                if (buys < config.k) {
                    series.events.push_back(date + ": cold start with only " +
                                            std::to_string(buys) + " tradable candidates");
                }
            } else {
                series.events.push_back(date + ": no tradable candidates, start deferred");
            }
        } else {
            // rank current holdings ascending; unscored holdings drop first
            std::vector<std::pair<std::string, double>> held;
            for (const auto& [sym, pos] : holdings) {
                auto it = today.find(sym);
                held.emplace_back(sym, it == today.end()
                                           ? -std::numeric_limits<double>::infinity()
                                           : it->second);
            }
            std::sort(held.begin(), held.end(), [](const auto& a, const auto& b) {
                if (a.second != b.second) return a.second < b.second;
                return a.first < b.first;
            });
            std::vector<std::string> sell_list;
            for (const auto& [sym, score] : held) {
                if (sell_list.size() == config.n_drop) break;
                if (is_tradable(sym)) sell_list.push_back(sym);
            }
            std::vector<std::pair<std::string, double>> buy_candidates;
            for (const auto& [sym, score] : today) {
                if (!holdings.count(sym) && is_tradable(sym)) buy_candidates.emplace_back(sym, score);
            }
            buy_candidates = ranked_desc(std::move(buy_candidates));
            const std::size_t m = std::min({static_cast<std::size_t>(config.n_drop),
                                            sell_list.size(), buy_candidates.size()});
            if (m == 0) {
                series.events.push_back(date + ": no tradable replacement candidates, holdings carried");
            } else {
                for (std::size_t i = 0; i < m; ++i) execute_sell(sell_list[i]);
                const double per_value = cash / (static_cast<double>(m) * (1.0 + config.fee_rate));
                for (std::size_t i = 0; i < m; ++i) execute_buy(buy_candidates[i].first, per_value);
            }
        }

        // mark to market; suspended names carry their last seen close
        double value = cash;
        for (auto& [sym, pos] : holdings) {
            const int n = panel.symbol_index(sym);
            const double px = panel.close(static_cast<std::size_t>(t), static_cast<std::size_t>(n));
            if (!is_missing(px)) pos.last_price = px;
            value += pos.shares * pos.last_price;
        }
        series.dates.push_back(date);
        series.cash.push_back(cash);
        series.total_value.push_back(value);
        series.net_value.push_back(value / config.initial_cash);
    }
    return series;
}

double annualized_return(const std::vector<double>& net_values, std::size_t trading_days) {
    if (net_values.size() < 2) throw ArgumentError("annualized_return: need at least 2 values");
    if (trading_days == 0) throw ArgumentError("annualized_return: zero trading days");
    for (double v : net_values) {
        if (!(v > 0)) throw RangeError("annualized_return: non-positive net value");
    }
    const double total = net_values.back() / net_values.front() - 1.0;
    return std::pow(1.0 + total, 250.0 / static_cast<double>(trading_days)) - 1.0;
}

double max_drawdown(const std::vector<double>& net_values) {
    if (net_values.empty()) throw ArgumentError("max_drawdown: empty series");
    double peak = net_values.front();
    double worst = 0;
    for (double v : net_values) {
        peak = std::max(peak, v);
        worst = std::max(worst, (peak - v) / peak);
    }
    return worst;
}

double annualized_volatility(const std::vector<double>& daily_returns) {
    if (daily_returns.size() < 2) throw ArgumentError("annualized_volatility: need >= 2 returns");
    return std::sqrt(252.0) * stats::sample_std(daily_returns);
}

double sharpe(double annualized_ret, double risk_free, double annualized_vol) {
    if (annualized_vol <= 0.0 || is_missing(annualized_vol)) return nan_value();
    return (annualized_ret - risk_free) / annualized_vol;
}

PortfolioReport PortfolioReport::from_series(const NetValueSeries& series, double risk_free) {
    PortfolioReport r;
    const auto rets = series.daily_returns();
    r.annualized_return = stockformer::backtest::annualized_return(series.net_value, rets.size());
    r.max_drawdown = stockformer::backtest::max_drawdown(series.net_value);
    r.annualized_volatility =
        rets.size() >= 2 ? stockformer::backtest::annualized_volatility(rets) : nan_value();
    r.sharpe = stockformer::backtest::sharpe(r.annualized_return, risk_free,
                                             r.annualized_volatility);
    return r;
}

namespace {

nlohmann::json report_json(const PortfolioReport& r) {
    nlohmann::json j;
    auto put = [&j](const char* key, double v) {
        if (is_missing(v)) {
            j[key] = nullptr;
        } else {
            j[key] = v;
        }
    };
    put("annualized_return", r.annualized_return);
    put("annualized_return_pct", is_missing(r.annualized_return) ? nan_value()
                                                                 : 100.0 * r.annualized_return);
    put("annualized_volatility", r.annualized_volatility);
    put("max_drawdown", r.max_drawdown);
    put("sharpe", r.sharpe);
    return j;
}

}  // namespace

std::string PortfolioReport::to_json() const { return report_json(*this).dump(2); }

BenchmarkComparison compare_benchmark(const NetValueSeries& strategy,
                                      const NetValueSeries& benchmark, double risk_free) {
    if (strategy.dates != benchmark.dates) {
        std::set<std::string> a(strategy.dates.begin(), strategy.dates.end());
        std::set<std::string> b(benchmark.dates.begin(), benchmark.dates.end());
        std::string missing;
        int listed = 0;
        for (const auto& d : a) {
            if (!b.count(d) && listed < 10) {
                missing += " " + d;
                ++listed;
            }
        }
        for (const auto& d : b) {
            if (!a.count(d) && listed < 10) {
                missing += " " + d;
                ++listed;
            }
        }
        throw AlignmentError("compare_benchmark: calendars differ; unmatched dates:" + missing);
    }
    auto renormalize = [](const NetValueSeries& s) {
        NetValueSeries out = s;
        const double base = s.net_value.front();
        for (auto& v : out.net_value) v /= base;
        return out;
    };
    BenchmarkComparison cmp;
    cmp.strategy = PortfolioReport::from_series(renormalize(strategy), risk_free);
    cmp.benchmark = PortfolioReport::from_series(renormalize(benchmark), risk_free);
    cmp.excess.annualized_return = cmp.strategy.annualized_return - cmp.benchmark.annualized_return;
    cmp.excess.annualized_volatility =
        cmp.strategy.annualized_volatility - cmp.benchmark.annualized_volatility;
    cmp.excess.max_drawdown = cmp.strategy.max_drawdown - cmp.benchmark.max_drawdown;
    cmp.excess.sharpe = cmp.strategy.sharpe - cmp.benchmark.sharpe;
    return cmp;
}

std::string BenchmarkComparison::to_json() const {
    nlohmann::json j;
    j["strategy"] = report_json(strategy);
    j["benchmark"] = report_json(benchmark);
    j["excess"] = report_json(excess);
    return j.dump(2);
}

NetValueSeries load_value_series_csv(const std::string& path) {
    auto table = csv::read_file(path);
    const int cd = table.column("date");
    int cv = table.column("value");
    if (cv < 0) cv = table.column("net_value");
    if (cv < 0) cv = table.column("close");
    if (cd < 0 || cv < 0) {
        throw ParseError(path + ": header must contain date and value/net_value/close");
    }
    std::map<std::string, double> rows;
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        const auto& r = table.rows[i];
        rows[r[cd]] = csv::parse_double(r[cv], path + " row " + std::to_string(i + 2));
    }
    NetValueSeries s;
    for (const auto& [date, value] : rows) {
        s.dates.push_back(date);
        s.total_value.push_back(value);
        s.cash.push_back(0.0);
    }
    if (s.total_value.empty()) throw ParseError(path + ": no rows");
    const double base = s.total_value.front();
    for (double v : s.total_value) s.net_value.push_back(v / base);
    return s;
}

}  // namespace stockformer::backtest
