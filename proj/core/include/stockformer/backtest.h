#pragma once

#include <map>
#include <string>
#include <vector>

#include "stockformer/data.h"

namespace stockformer::backtest {

struct StrategyConfig {
    std::size_t k = 5;
    std::size_t n_drop = 3;
    double fee_rate = 0.001;           // per side
    double stamp_duty_before = 0.001;  // sell side, dates before the switch
    double stamp_duty_after = 0.0005;
    std::string duty_switch_date = "2023-08-27";
    double initial_cash = 1e6;
    double risk_free = 0.0;  // annualized, for the Sharpe ratio

    void validate() const;
    double stamp_duty_for(const std::string& date) const;
};

struct Trade {
    std::string date;
    std::string symbol;
    std::string side;  // "buy" | "sell"
    double shares = 0;
    double price = 0;
    double value = 0;
    double fee = 0;
    double duty = 0;
};

struct NetValueSeries {
    std::vector<std::string> dates;
    std::vector<double> net_value;     // 1.0 at start
    std::vector<double> total_value;   // currency, = cash + holdings
    std::vector<double> cash;          // currency, after that day's trades
    std::vector<Trade> trades;
    std::vector<std::string> events;   // skipped rebalances and the like

    std::vector<double> daily_returns() const;
    void save_trades_csv(const std::string& path) const;
    void save_netvalue_csv(const std::string& path) const;
};

// date,symbol,score rows grouped by date (dates sorted ascending).
struct ScoreTable {
    std::vector<std::string> dates;
    std::vector<std::map<std::string, double>> by_date;  // aligned with dates

    static ScoreTable load_csv(const std::string& path);
    void save_csv(const std::string& path) const;
};

// Daily TopK-Dropout: the cold-start day buys the top k equally by value;
// every later day sells the n_drop lowest-scored holdings and buys the
// n_drop best-scored non-holdings, equal-weighting the new buys. Sell and
// buy counts are paired so exactly k names are held after the cold start;
// untradable candidates (missing bar or zero volume) shrink both sides.
NetValueSeries run_topk_dropout(const ScoreTable& scores, const data::PanelDataset& panel,
                                const StrategyConfig& config);

// (1 + R)^(250/days) - 1 with R the total return over the series.
double annualized_return(const std::vector<double>& net_values, std::size_t trading_days);
double max_drawdown(const std::vector<double>& net_values);
// sqrt(252) * sample std of daily returns.
double annualized_volatility(const std::vector<double>& daily_returns);
// NaN when volatility is zero.
double sharpe(double annualized_ret, double risk_free, double annualized_vol);

struct PortfolioReport {
    double annualized_return = 0;
    double annualized_volatility = 0;
    double max_drawdown = 0;
    double sharpe = 0;

    static PortfolioReport from_series(const NetValueSeries& series, double risk_free = 0.0);
    std::string to_json() const;
};

struct BenchmarkComparison {
    PortfolioReport strategy;
    PortfolioReport benchmark;
    PortfolioReport excess;  // strategy minus benchmark, per metric

    std::string to_json() const;
};

// Requires identical calendars; both series are re-normalized to 1.0 at the
// common start before metrics are taken.
BenchmarkComparison compare_benchmark(const NetValueSeries& strategy,
                                      const NetValueSeries& benchmark, double risk_free = 0.0);

// date,value CSV (an index level series) -> NetValueSeries.
NetValueSeries load_value_series_csv(const std::string& path);

}  // namespace stockformer::backtest
