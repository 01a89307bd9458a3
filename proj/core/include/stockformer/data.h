#pragma once

#include <optional>
#include <string>
#include <vector>

#include "stockformer/array.h"

namespace stockformer::data {

// One daily bar. Prices are forward-adjusted currency units.
struct Bar {
    std::string date;
    std::string symbol;
    double open = 0, high = 0, low = 0, close = 0, vwap = 0;
    double volume = 0;
};

// Dense date x symbol panel. Missing cells are NaN in every field matrix.
struct PanelDataset {
    std::vector<std::string> calendar;  // strictly increasing ISO dates
    std::vector<std::string> symbols;   // sorted unique
    Mat open, high, low, close, vwap, volume;

    std::size_t dates_count() const { return calendar.size(); }
    std::size_t symbols_count() const { return symbols.size(); }
    bool has_cell(std::size_t t, std::size_t n) const { return !is_missing(close(t, n)); }
    int date_index(const std::string& date) const;
    int symbol_index(const std::string& symbol) const;
};

struct DateRange {
    std::string start;
    std::string end;
    std::size_t first = 0;  // calendar indices, inclusive
    std::size_t last = 0;
};

struct RollingSplit {
    DateRange train, validation, test;
};

struct ReturnMatrix {
    std::vector<std::string> dates;
    std::vector<std::string> symbols;
    Mat values;        // close-to-close simple returns, first row NaN
    Mat trend_labels;  // 1 iff value > 0, 0 otherwise (NaN where value missing)
};

// ISO-8601 date helpers.
bool is_iso_date(const std::string& s);
// "YYYY-MM" prefix.
std::string month_of(const std::string& iso_date);

// Loads `date,symbol,open,high,low,close,vwap,volume`. When an adjustment
// file (`date,symbol,factor`) is given, every price field of a bar is
// multiplied by the cumulative product of that symbol's factors dated
// strictly after the bar; volume is untouched.
PanelDataset load_panel(const std::string& path,
                        const std::optional<std::string>& adjustment_path = std::nullopt);

// Canonical CSV form of a panel (one row per non-missing cell, shortest
// round-trip number formatting). save -> load is the identity.
void save_panel(const PanelDataset& panel, const std::string& path);

// One symbol per line; '#' comments and blank lines ignored.
std::vector<std::string> load_exclusions(const std::string& path);

// Symbols tradable on `date`: present, not excluded, volume > 0.
std::vector<std::string> filter_stock_pool(const PanelDataset& panel,
                                           const std::vector<std::string>& exclusions,
                                           const std::string& date);

std::vector<RollingSplit> make_rolling_splits(const std::vector<std::string>& calendar,
                                              std::size_t train_len, std::size_t val_len,
                                              std::size_t test_len, std::size_t step);

ReturnMatrix compute_returns(const PanelDataset& panel);

}  // namespace stockformer::data
