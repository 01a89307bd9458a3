#include "stockformer/data.h"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <set>
#include <unordered_map>

#include "stockformer/csv.h"
#include "stockformer/errors.h"

namespace stockformer::data {

bool is_iso_date(const std::string& s) {
    if (s.size() != 10 || s[4] != '-' || s[7] != '-') return false;
    for (std::size_t i : {0u, 1u, 2u, 3u, 5u, 6u, 8u, 9u}) {
        if (!std::isdigit(static_cast<unsigned char>(s[i]))) return false;
    }
    return true;
}

std::string month_of(const std::string& iso_date) { return iso_date.substr(0, 7); }

int PanelDataset::date_index(const std::string& date) const {
    auto it = std::lower_bound(calendar.begin(), calendar.end(), date);
    if (it == calendar.end() || *it != date) return -1;
    return static_cast<int>(it - calendar.begin());
}

int PanelDataset::symbol_index(const std::string& symbol) const {
    auto it = std::lower_bound(symbols.begin(), symbols.end(), symbol);
    if (it == symbols.end() || *it != symbol) return -1;
    return static_cast<int>(it - symbols.begin());
}

namespace {

void validate_bar(const Bar& b) {
    const std::string where = "(" + b.date + ", " + b.symbol + ")";
    for (double p : {b.open, b.high, b.low, b.close, b.vwap}) {
        if (!(p > 0.0)) throw ValidationError(where + ": non-positive price");
    }
    if (b.volume < 0.0) throw ValidationError(where + ": negative volume");
    if (b.low > std::min(b.open, b.close) || b.high < std::max(b.open, b.close)) {
        throw ValidationError(where + ": low/high inconsistent with open/close");
    }
}

// symbol -> sorted (date, factor) events
using AdjustmentMap = std::unordered_map<std::string, std::vector<std::pair<std::string, double>>>;

AdjustmentMap load_adjustments(const std::string& path) {
    AdjustmentMap out;
    auto table = csv::read_file(path);
    const int cd = table.column("date"), cs = table.column("symbol"), cf = table.column("factor");
    if (cd < 0 || cs < 0 || cf < 0) {
        throw ParseError(path + ": header must contain date,symbol,factor");
    }
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        const auto& r = table.rows[i];
        const std::string ctx = path + " row " + std::to_string(i + 2);
        const double f = csv::parse_double(r[cf], ctx);
        if (!(f > 0.0)) throw ValidationError(ctx + ": adjustment factor must be positive");
        out[r[cs]].emplace_back(r[cd], f);
    }
    for (auto& [sym, events] : out) std::sort(events.begin(), events.end());
    return out;
}

// Product of factors dated strictly after `date`.
double forward_multiplier(const AdjustmentMap& adj, const std::string& symbol,
                          const std::string& date) {
    auto it = adj.find(symbol);
    if (it == adj.end()) return 1.0;
    double m = 1.0;
    for (const auto& [d, f] : it->second) {
        if (d > date) m *= f;
    }
    return m;
}

}  // namespace

PanelDataset load_panel(const std::string& path,
                        const std::optional<std::string>& adjustment_path) {
    auto table = csv::read_file(path);
    const char* required[] = {"date", "symbol", "open", "high", "low", "close", "vwap", "volume"};
    int col[8];
    for (int i = 0; i < 8; ++i) {
        col[i] = table.column(required[i]);
        if (col[i] < 0) throw ParseError(path + ": missing column '" + std::string(required[i]) + "'");
    }

    AdjustmentMap adjustments;
    if (adjustment_path) adjustments = load_adjustments(*adjustment_path);

    std::set<std::string> date_set, symbol_set;
    std::vector<Bar> bars;
    bars.reserve(table.rows.size());
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        const auto& r = table.rows[i];
        const std::string ctx = path + " row " + std::to_string(i + 2);
        Bar b;
        b.date = r[col[0]];
        b.symbol = r[col[1]];
        if (!is_iso_date(b.date)) throw ParseError(ctx + ": bad date '" + b.date + "'");
        if (b.symbol.empty()) throw ParseError(ctx + ": empty symbol");
        b.open = csv::parse_double(r[col[2]], ctx);
        b.high = csv::parse_double(r[col[3]], ctx);
        b.low = csv::parse_double(r[col[4]], ctx);
        b.close = csv::parse_double(r[col[5]], ctx);
        b.vwap = csv::parse_double(r[col[6]], ctx);
        b.volume = csv::parse_double(r[col[7]], ctx);
        validate_bar(b);
        const double m = forward_multiplier(adjustments, b.symbol, b.date);
        b.open *= m;
        b.high *= m;
        b.low *= m;
        b.close *= m;
        b.vwap *= m;
        date_set.insert(b.date);
        symbol_set.insert(b.symbol);
        bars.push_back(std::move(b));
    }

    PanelDataset p;
    p.calendar.assign(date_set.begin(), date_set.end());
    p.symbols.assign(symbol_set.begin(), symbol_set.end());
    const std::size_t T = p.calendar.size(), N = p.symbols.size();
    for (Mat* m : {&p.open, &p.high, &p.low, &p.close, &p.vwap, &p.volume}) {
        *m = Mat(T, N, nan_value());
    }
    for (const auto& b : bars) {
        const int t = p.date_index(b.date);
        const int n = p.symbol_index(b.symbol);
        if (!is_missing(p.close(t, n))) {
            throw ValidationError("(" + b.date + ", " + b.symbol + "): duplicate row");
        }
        p.open(t, n) = b.open;
        p.high(t, n) = b.high;
        p.low(t, n) = b.low;
        p.close(t, n) = b.close;
        p.vwap(t, n) = b.vwap;
        p.volume(t, n) = b.volume;
    }
    return p;
}

void save_panel(const PanelDataset& panel, const std::string& path) {
    csv::Table t;
    t.header = {"date", "symbol", "open", "high", "low", "close", "vwap", "volume"};
    for (std::size_t i = 0; i < panel.dates_count(); ++i) {
        for (std::size_t n = 0; n < panel.symbols_count(); ++n) {
            if (!panel.has_cell(i, n)) continue;
            t.rows.push_back({panel.calendar[i], panel.symbols[n],
                              csv::format_double(panel.open(i, n)),
                              csv::format_double(panel.high(i, n)),
                              csv::format_double(panel.low(i, n)),
                              csv::format_double(panel.close(i, n)),
                              csv::format_double(panel.vwap(i, n)),
                              csv::format_double(panel.volume(i, n))});
        }
    }
    csv::write_file(path, t);
}

std::vector<std::string> load_exclusions(const std::string& path) {
    std::vector<std::string> out;
    auto strip = [](std::string s) {
        while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.pop_back();
        return s;
    };
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open " + path);
    std::string line;
    while (std::getline(in, line)) {
        line = strip(line);
        if (line.empty() || line[0] == '#') continue;
        out.push_back(line);
    }
    return out;
}

std::vector<std::string> filter_stock_pool(const PanelDataset& panel,
                                           const std::vector<std::string>& exclusions,
                                           const std::string& date) {
    const int t = panel.date_index(date);
    if (t < 0) throw RangeError("date " + date + " not in calendar");
    const std::set<std::string> excl(exclusions.begin(), exclusions.end());
    std::vector<std::string> out;
    for (std::size_t n = 0; n < panel.symbols_count(); ++n) {
        const auto& sym = panel.symbols[n];
        if (excl.count(sym)) continue;
        if (!panel.has_cell(t, n)) continue;
        if (panel.volume(t, n) == 0.0) continue;  // suspension proxy
        out.push_back(sym);
    }
    return out;
}

std::vector<RollingSplit> make_rolling_splits(const std::vector<std::string>& calendar,
                                              std::size_t train_len, std::size_t val_len,
                                              std::size_t test_len, std::size_t step) {
    const std::size_t need = train_len + val_len + test_len;
    if (step == 0) throw ConfigError("rolling split step must be positive");
    if (calendar.size() < need) {
        throw ConfigError("calendar has " + std::to_string(calendar.size()) +
                          " days, need at least " + std::to_string(need));
    }
    auto range = [&calendar](std::size_t first, std::size_t len) {
        DateRange r;
        r.first = first;
        r.last = first + len - 1;
        r.start = calendar[r.first];
        r.end = calendar[r.last];
        return r;
    };
    std::vector<RollingSplit> out;
    for (std::size_t start = 0; start + need <= calendar.size(); start += step) {
        RollingSplit s;
        s.train = range(start, train_len);
        s.validation = range(start + train_len, val_len);
        s.test = range(start + train_len + val_len, test_len);
        out.push_back(s);
    }
    return out;
}

ReturnMatrix compute_returns(const PanelDataset& panel) {
    const std::size_t T = panel.dates_count(), N = panel.symbols_count();
    if (T < 2) throw ArgumentError("panel needs at least 2 dates for returns");
    ReturnMatrix r;
    r.dates = panel.calendar;
    r.symbols = panel.symbols;
    r.values = Mat(T, N, nan_value());
    r.trend_labels = Mat(T, N, nan_value());
    for (std::size_t t = 1; t < T; ++t) {
        for (std::size_t n = 0; n < N; ++n) {
            const double prev = panel.close(t - 1, n);
            const double cur = panel.close(t, n);
            if (is_missing(prev) || is_missing(cur)) continue;
            const double ret = cur / prev - 1.0;
            r.values(t, n) = ret;
            r.trend_labels(t, n) = ret > 0.0 ? 1.0 : 0.0;
        }
    }
    return r;
}

}  // namespace stockformer::data
