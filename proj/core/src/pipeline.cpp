#include "stockformer/pipeline.h"

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "stockformer/backtest.h"
#include "stockformer/csv.h"
#include "stockformer/errors.h"
#include "stockformer/eval.h"
#include "stockformer/graphs.h"
#include "stockformer/synthetic.h"
#include "stockformer/tensor_file.h"

namespace stockformer::pipeline {

namespace fs = std::filesystem;
using nlohmann::json;

std::uint64_t fnv1a(const void* data, std::size_t bytes, std::uint64_t seed) {
    const auto* p = static_cast<const unsigned char*>(data);
    std::uint64_t h = seed;
    for (std::size_t i = 0; i < bytes; ++i) {
        h ^= p[i];
        h *= 1099511628211ull;
    }
    return h;
}

namespace {

struct Paths {
    fs::path out;
    explicit Paths(const config::RunConfig& cfg) : out(cfg.output.dir) {}

    fs::path panel() const { return out / "panel.csv"; }
    fs::path bars() const { return out / "bars.csv"; }
    fs::path benchmark() const { return out / "benchmark.csv"; }
    fs::path metadata() const { return out / "metadata.csv"; }
    fs::path factor_panel() const { return out / "factor_panel.bin"; }
    fs::path ic_report() const { return out / "ic_report.csv"; }
    fs::path splits() const { return out / "splits.csv"; }
    fs::path split_dir(std::size_t i) const {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "split_%02zu", i);
        return out / buf;
    }
};

void require_artifact(const fs::path& p, const std::string& producer) {
    if (!fs::exists(p)) {
        throw ArtifactError("missing " + p.string() + "; run `" + producer + "` first");
    }
}

std::string metadata_path(const config::RunConfig& cfg, const Paths& paths) {
    if (!cfg.data.metadata.empty()) return cfg.data.metadata;
    if (cfg.data.synthetic.enabled && fs::exists(paths.metadata())) return paths.metadata().string();
    return "";
}

// ---- factor panel container -------------------------------------------------

void save_factor_panel(const factors::FactorPanel& fp, const std::string& path) {
    json meta;
    meta["dates"] = fp.dates;
    meta["symbols"] = fp.symbols;
    meta["channels"] = fp.channel_names;
    meta["warnings"] = fp.warnings;
    tensor_file::Entry values{"values",
                              {fp.dates.size(), fp.symbols.size(), fp.channels()},
                              fp.values.v};
    tensor_file::write(path, meta.dump(), {values});
}

factors::FactorPanel load_factor_panel(const std::string& path) {
    auto file = tensor_file::read(path);
    if (file.entries.size() != 1 || file.entries[0].name != "values") {
        throw ParseError(path + ": not a factor panel file");
    }
    json meta = json::parse(file.meta);
    factors::FactorPanel fp;
    fp.dates = meta.at("dates").get<std::vector<std::string>>();
    fp.symbols = meta.at("symbols").get<std::vector<std::string>>();
    fp.channel_names = meta.at("channels").get<std::vector<std::string>>();
    fp.warnings = meta.at("warnings").get<std::vector<std::string>>();
    const auto& e = file.entries[0];
    fp.values = Cube(e.shape[0], e.shape[1], e.shape[2]);
    fp.values.v = e.data;
    return fp;
}

// ---- metadata (industry / market cap) ----------------------------------------

struct SymbolMeta {
    std::string industry;
    std::vector<std::pair<std::string, double>> caps;  // sorted by date
};

std::map<std::string, SymbolMeta> load_metadata(const std::string& path) {
    auto table = csv::read_file(path);
    const int cs = table.column("symbol"), ci = table.column("industry");
    const int cd = table.column("mktcap_date"), cm = table.column("mktcap");
    if (cs < 0 || ci < 0 || cd < 0 || cm < 0) {
        throw ParseError(path + ": header must contain symbol,industry,mktcap_date,mktcap");
    }
    std::map<std::string, SymbolMeta> out;
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        const auto& r = table.rows[i];
        auto& m = out[r[cs]];
        m.industry = r[ci];
        m.caps.emplace_back(r[cd], csv::parse_double(r[cm], path + " row " + std::to_string(i + 2)));
    }
    for (auto& [sym, m] : out) std::sort(m.caps.begin(), m.caps.end());
    return out;
}

double cap_asof(const SymbolMeta& m, const std::string& date) {
    double cap = nan_value();
    for (const auto& [d, v] : m.caps) {
        if (d <= date) cap = v;
    }
    return cap;
}

// ---- splits io ---------------------------------------------------------------

void save_splits(const std::vector<data::RollingSplit>& splits, const std::string& path) {
    csv::Table t;
    t.header = {"split", "train_start", "train_end", "val_start", "val_end", "test_start",
                "test_end"};
    for (std::size_t i = 0; i < splits.size(); ++i) {
        const auto& s = splits[i];
        t.rows.push_back({std::to_string(i), s.train.start, s.train.end, s.validation.start,
                          s.validation.end, s.test.start, s.test.end});
    }
    csv::write_file(path, t);
}

std::vector<data::RollingSplit> load_splits(const std::string& path,
                                            const data::PanelDataset& panel) {
    auto table = csv::read_file(path);
    std::vector<data::RollingSplit> out;
    auto range = [&panel, &path](const std::string& start, const std::string& end) {
        data::DateRange r;
        const int a = panel.date_index(start), b = panel.date_index(end);
        if (a < 0 || b < 0) throw ParseError(path + ": split date not in panel calendar");
        r.start = start;
        r.end = end;
        r.first = static_cast<std::size_t>(a);
        r.last = static_cast<std::size_t>(b);
        return r;
    };
    for (const auto& r : table.rows) {
        data::RollingSplit s;
        s.train = range(r[1], r[2]);
        s.validation = range(r[3], r[4]);
        s.test = range(r[5], r[6]);
        out.push_back(s);
    }
    return out;
}

std::vector<std::size_t> selected_splits(int split_index, std::size_t total) {
    if (split_index >= 0) {
        if (static_cast<std::size_t>(split_index) >= total) {
            throw RangeError("split index " + std::to_string(split_index) + " out of range (" +
                             std::to_string(total) + " splits)");
        }
        return {static_cast<std::size_t>(split_index)};
    }
    std::vector<std::size_t> all(total);
    for (std::size_t i = 0; i < total; ++i) all[i] = i;
    return all;
}

struct LoadedInputs {
    data::PanelDataset panel;
    data::ReturnMatrix returns;
    factors::FactorPanel factor_panel;
    std::vector<data::RollingSplit> splits;
};

LoadedInputs load_inputs(const config::RunConfig& cfg, bool need_factors, bool need_splits) {
    Paths paths(cfg);
    require_artifact(paths.panel(), "ingest");
    LoadedInputs in;
    in.panel = data::load_panel(paths.panel().string());
    in.returns = data::compute_returns(in.panel);
    if (need_factors) {
        require_artifact(paths.factor_panel(), "factors");
        in.factor_panel = load_factor_panel(paths.factor_panel().string());
    }
    if (need_splits) {
        require_artifact(paths.splits(), "split");
        in.splits = load_splits(paths.splits().string(), in.panel);
    }
    return in;
}

std::uint64_t dataset_hash(const SplitDataset& ds) {
    std::uint64_t h = 1469598103934665603ull;
    for (const auto& w : ds.train) {
        h = fnv1a(w.input.v.data(), w.input.v.size() * sizeof(double), h);
        h = fnv1a(w.target_return.v.data(), w.target_return.v.size() * sizeof(double), h);
    }
    return h;
}

model::ModelConfig model_config_for(const config::RunConfig& cfg, const SplitDataset& ds) {
    model::ModelConfig mc = cfg.model;
    mc.stocks = ds.symbols.size();
    mc.input_channels = ds.input_channels;
    return mc;
}

// ---- training ---------------------------------------------------------------

void train_one_split(const config::RunConfig& cfg, const LoadedInputs& in, std::size_t si,
                     const fs::path& dir) {
    const auto& split = in.splits[si];
    const auto filters = cfg.filters();
    SplitDataset ds = build_split_dataset(in.panel, in.factor_panel, in.returns, split,
                                          cfg.model.t1, cfg.model.t2, filters);
    if (ds.train.empty()) {
        throw ConfigError("split " + std::to_string(si) + " produced no training windows");
    }
    fs::create_directories(dir);

    model::ModelConfig mc = model_config_for(cfg, ds);
    model::Stockformer net(mc, filters);

    // graphs for this split: spatial over the training range, slot graph as-is
    data::ReturnMatrix train_rets;
    train_rets.symbols = ds.symbols;
    for (std::size_t t = split.train.first; t <= split.train.last; ++t) {
        train_rets.dates.push_back(in.panel.calendar[t]);
    }
    train_rets.values = Mat(train_rets.dates.size(), ds.symbols.size());
    for (std::size_t i = 0; i < train_rets.dates.size(); ++i) {
        for (std::size_t n = 0; n < ds.symbols.size(); ++n) {
            const int col = in.panel.symbol_index(ds.symbols[n]);
            train_rets.values(i, n) = in.returns.values(split.train.first + i, col);
        }
    }
    const auto temporal_graph = graphs::build_temporal_graph();
    const auto temporal_embed = graphs::init_temporal_embedding(
        temporal_graph, mc.hidden_dim, mc.embed_smoothing, mc.seed);
    const auto spatial_graph = graphs::build_spatial_graph(train_rets);
    const auto spatial_embed = graphs::struc2vec_embed(spatial_graph, mc.hidden_dim,
                                                       mc.struc2vec_iters, mc.struc2vec_tol,
                                                       mc.seed + 1);
    temporal_graph.save_csv((dir / "temporal_graph.csv").string());
    temporal_embed.save_csv((dir / "temporal_embedding.csv").string());
    spatial_graph.save_csv((dir / "spatial_graph.csv").string());
    spatial_embed.save_csv((dir / "spatial_embedding.csv").string());

    tensor::ParameterStore store(mc.seed);
    net.init_params(store, temporal_embed.values, spatial_embed.values);
    const auto result = model::train(net, ds.train, ds.val, store);

    const std::uint64_t hash = dataset_hash(ds);
    json meta;
    meta["model"] = json::parse(mc.to_json());
    meta["data_hash"] = hash;
    meta["symbols"] = ds.symbols;
    meta["split"] = si;
    store.save((dir / "checkpoint.bin").string(), meta.dump());

    json manifest;
    manifest["split"] = si;
    manifest["seed"] = mc.seed;
    manifest["data_hash"] = hash;
    manifest["symbols"] = ds.symbols;
    manifest["model"] = json::parse(mc.to_json());
    manifest["windows"] = {{"train", ds.train.size()}, {"val", ds.val.size()},
                           {"test", ds.test.size()}};
    manifest["best_epoch"] = result.best_epoch;
    manifest["best_val"] = result.best_val;
    json log = json::array();
    for (const auto& e : result.log) {
        log.push_back({{"epoch", e.epoch},
                       {"train_loss", e.train_loss},
                       {"val_loss", is_missing(e.val_loss) ? json() : json(e.val_loss)},
                       {"lr", e.lr}});
    }
    manifest["loss_log"] = log;
    std::ofstream(dir / "manifest.json") << manifest.dump(2) << "\n";
}

struct PredictionRow {
    std::string anchor_date, target_date, symbol;
    int horizon = 1;  // 1-based target step
    double y_reg = 0, p_cla = 0, y_l_reg = 0, p_l_cla = 0;
};

std::vector<PredictionRow> load_predictions(const std::string& path) {
    auto table = csv::read_file(path);
    std::vector<PredictionRow> rows;
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        const auto& r = table.rows[i];
        const std::string ctx = path + " row " + std::to_string(i + 2);
        PredictionRow p;
        p.anchor_date = r[0];
        p.target_date = r[1];
        p.horizon = static_cast<int>(csv::parse_long(r[2], ctx));
        p.symbol = r[3];
        p.y_reg = csv::parse_double(r[4], ctx);
        p.p_cla = csv::parse_double(r[5], ctx);
        p.y_l_reg = csv::parse_double(r[6], ctx);
        p.p_l_cla = csv::parse_double(r[7], ctx);
        rows.push_back(std::move(p));
    }
    return rows;
}

void predict_one_split(const config::RunConfig& cfg, const LoadedInputs& in, std::size_t si,
                       const fs::path& dir) {
    require_artifact(dir / "checkpoint.bin", "train");
    const auto filters = cfg.filters();
    SplitDataset ds = build_split_dataset(in.panel, in.factor_panel, in.returns, in.splits[si],
                                          cfg.model.t1, cfg.model.t2, filters);
    model::ModelConfig mc = model_config_for(cfg, ds);
    model::Stockformer net(mc, filters);

    tensor::ParameterStore store(mc.seed);
    const std::string meta_text = store.load((dir / "checkpoint.bin").string());
    json meta = json::parse(meta_text);
    const auto stored = model::ModelConfig::from_json(meta.at("model").dump());
    if (!(stored == mc)) {
        throw CompatibilityError("checkpoint for split " + std::to_string(si) +
                                 " was trained with a different model configuration");
    }
    const auto stored_symbols = meta.at("symbols").get<std::vector<std::string>>();
    if (stored_symbols != ds.symbols) {
        throw CompatibilityError("checkpoint stock universe differs from the rebuilt dataset");
    }

    csv::Table t;
    t.header = {"anchor_date", "target_date", "horizon", "symbol", "y_reg", "p_cla", "y_l_reg",
                "p_l_cla"};
    for (const auto& w : ds.test) {
        const auto bundle = net.predict(w, store);
        for (std::size_t h = 0; h < mc.t2; ++h) {
            for (std::size_t n = 0; n < ds.symbols.size(); ++n) {
                t.rows.push_back({w.anchor_date, w.target_dates[h], std::to_string(h + 1),
                                  ds.symbols[n], csv::format_double(bundle.y_reg(h, n)),
                                  csv::format_double(bundle.p_cla(h, n)),
                                  csv::format_double(bundle.y_l_reg(h, n)),
                                  csv::format_double(bundle.p_l_cla(h, n))});
            }
        }
    }
    csv::write_file((dir / "predictions.csv").string(), t);
}

void evaluate_one_split(const LoadedInputs& in, const fs::path& dir) {
    require_artifact(dir / "predictions.csv", "predict");
    const auto rows = load_predictions((dir / "predictions.csv").string());
    if (rows.empty()) throw ArtifactError("no prediction rows in " + dir.string());

    // group cross-sections by (anchor, horizon)
    std::map<std::pair<std::string, int>, std::vector<const PredictionRow*>> groups;
    for (const auto& r : rows) groups[{r.anchor_date, r.horizon}].push_back(&r);

    std::vector<std::vector<double>> pred_days, actual_days;
    std::vector<double> probs, labels;
    for (const auto& [key, group] : groups) {
        std::vector<double> pred, actual;
        for (const auto* r : group) {
            const int t = in.panel.date_index(r->target_date);
            const int n = in.panel.symbol_index(r->symbol);
            if (t < 0 || n < 0) continue;
            const double a = in.returns.values(static_cast<std::size_t>(t),
                                               static_cast<std::size_t>(n));
            if (is_missing(a)) continue;
            pred.push_back(r->y_reg);
            actual.push_back(a);
            probs.push_back(r->p_cla);
            labels.push_back(a > 0 ? 1.0 : 0.0);
        }
        if (!pred.empty()) {
            pred_days.push_back(std::move(pred));
            actual_days.push_back(std::move(actual));
        }
    }
    const auto report = eval::evaluate_days(pred_days, actual_days, probs, labels);
    report.save_csv((dir / "eval.csv").string());
    std::ofstream(dir / "eval.json") << report.to_json() << "\n";

    std::vector<double> all_probs;
    for (const auto& r : rows) all_probs.push_back(r.p_cla);
    const auto confidence = eval::high_confidence_analysis(all_probs);
    std::ofstream(dir / "confidence.json") << confidence.to_json() << "\n";
}

void backtest_one_split(const config::RunConfig& cfg, const LoadedInputs& in, const fs::path& dir) {
    require_artifact(dir / "predictions.csv", "predict");
    const auto rows = load_predictions((dir / "predictions.csv").string());
    if (rows.empty()) throw ArtifactError("no prediction rows in " + dir.string());

    std::string selected;
    if (fs::exists(dir / "confidence.json")) {
        std::ifstream f(dir / "confidence.json");
        std::ostringstream buf;
        buf << f.rdbuf();
        selected = json::parse(buf.str()).at("selected_output").get<std::string>();
    } else {
        std::vector<double> probs;
        for (const auto& r : rows) probs.push_back(r.p_cla);
        selected = eval::high_confidence_analysis(probs).selected_output;
    }

    // scores produced at anchor T trade at the T+1 close: the horizon-2
    // prediction covers the T+1 -> T+2 price change, keyed by trade date T+1
    std::map<std::string, std::map<std::string, double>> by_date;
    std::map<std::string, std::string> trade_date_of_anchor;
    for (const auto& r : rows) {
        if (r.horizon == 1) trade_date_of_anchor[r.anchor_date] = r.target_date;
    }
    for (const auto& r : rows) {
        if (r.horizon != 2) continue;
        auto it = trade_date_of_anchor.find(r.anchor_date);
        if (it == trade_date_of_anchor.end()) continue;
        by_date[it->second][r.symbol] = selected == "classification" ? r.p_cla : r.y_reg;
    }
    backtest::ScoreTable scores;
    for (auto& [date, row] : by_date) {
        scores.dates.push_back(date);
        scores.by_date.push_back(std::move(row));
    }
    scores.save_csv((dir / "scores.csv").string());

    const auto series = backtest::run_topk_dropout(scores, in.panel, cfg.strategy);
    series.save_trades_csv((dir / "trades.csv").string());
    series.save_netvalue_csv((dir / "netvalue.csv").string());
    const auto report = backtest::PortfolioReport::from_series(series, cfg.strategy.risk_free);
    json pj = json::parse(report.to_json());
    pj["selected_output"] = selected;
    std::ofstream(dir / "portfolio.json") << pj.dump(2) << "\n";

    if (!cfg.strategy.benchmark.empty()) {
        auto bench = backtest::load_value_series_csv(cfg.strategy.benchmark);
        // restrict the benchmark to the strategy dates; gaps surface as an
        // alignment error inside compare_benchmark
        backtest::NetValueSeries sliced;
        std::set<std::string> want(series.dates.begin(), series.dates.end());
        for (std::size_t i = 0; i < bench.dates.size(); ++i) {
            if (want.count(bench.dates[i])) {
                sliced.dates.push_back(bench.dates[i]);
                sliced.net_value.push_back(bench.net_value[i]);
                sliced.total_value.push_back(bench.total_value[i]);
                sliced.cash.push_back(0.0);
            }
        }
        const auto cmp = backtest::compare_benchmark(series, sliced, cfg.strategy.risk_free);
        std::ofstream(dir / "benchmark_comparison.json") << cmp.to_json() << "\n";
    }
}

}  // namespace

// ---- dataset assembly --------------------------------------------------------

SplitDataset build_split_dataset(const data::PanelDataset& panel,
                                 const factors::FactorPanel& factor_panel,
                                 const data::ReturnMatrix& returns,
                                 const data::RollingSplit& split, std::size_t t1, std::size_t t2,
                                 const wavelet::FilterPair& filters) {
    if (factor_panel.dates != panel.calendar || factor_panel.symbols != panel.symbols) {
        throw AlignmentError("factor panel is not aligned with the bar panel");
    }
    const std::size_t F = factor_panel.channels();
    SplitDataset ds;
    ds.input_channels = 2 + F;

    // modeled stocks: complete returns over the split range (the first panel
    // row never has a return, so the check starts at row 1)
    std::vector<std::size_t> cols;
    const std::size_t check_first = std::max<std::size_t>(split.train.first, 1);
    for (std::size_t n = 0; n < panel.symbols_count(); ++n) {
        bool ok = true;
        for (std::size_t t = check_first; t <= split.test.last && ok; ++t) {
            if (is_missing(returns.values(t, n))) ok = false;
        }
        if (ok) {
            cols.push_back(n);
            ds.symbols.push_back(panel.symbols[n]);
        }
    }
    if (ds.symbols.empty()) {
        throw ConfigError("no stock has complete returns across the split range");
    }
    const std::size_t N = cols.size();

    auto window_at = [&](std::size_t target_first) {
        model::Window w;
        const std::size_t in_first = target_first - t1;
        w.input = Cube(t1, N, 2 + F);
        for (std::size_t i = 0; i < t1; ++i) {
            const std::size_t t = in_first + i;
            for (std::size_t j = 0; j < N; ++j) {
                const std::size_t n = cols[j];
                w.input(i, j, 0) = returns.values(t, n);
                w.input(i, j, 1) = returns.trend_labels(t, n);
                for (std::size_t f = 0; f < F; ++f) {
                    w.input(i, j, 2 + f) = factor_panel.values(t, n, f);
                }
            }
        }
        w.target_return = Mat(t2, N);
        w.label_trend = Mat(t2, N);
        for (std::size_t h = 0; h < t2; ++h) {
            const std::size_t t = target_first + h;
            for (std::size_t j = 0; j < N; ++j) {
                w.target_return(h, j) = returns.values(t, cols[j]);
                w.label_trend(h, j) = returns.trend_labels(t, cols[j]);
            }
            w.target_dates.push_back(panel.calendar[target_first + h]);
        }
        Mat joint(t1 + t2, N);
        for (std::size_t i = 0; i < t1 + t2; ++i) {
            for (std::size_t j = 0; j < N; ++j) joint(i, j) = returns.values(in_first + i, cols[j]);
        }
        bool complete = true;
        for (double v : w.input.v) {
            if (is_missing(v)) complete = false;
        }
        for (double v : joint.v) {
            if (is_missing(v)) complete = false;
        }
        if (!complete) return std::pair<bool, model::Window>{false, {}};
        w.target_lowfreq = model::low_frequency_targets(joint, t2, filters);
        w.label_lowfreq = Mat(t2, N);
        for (std::size_t h = 0; h < t2; ++h) {
            for (std::size_t j = 0; j < N; ++j) {
                w.label_lowfreq(h, j) = w.target_lowfreq(h, j) > 0 ? 1.0 : 0.0;
            }
        }
        const auto slots = graphs::date_slots(panel.calendar);
        w.slot_ids.resize(t1);
        for (std::size_t i = 0; i < t1; ++i) w.slot_ids[i] = static_cast<std::size_t>(slots[in_first + i]);
        w.anchor_date = panel.calendar[target_first - 1];
        return std::pair<bool, model::Window>{true, std::move(w)};
    };

    auto fill = [&](std::size_t range_first, std::size_t range_last,
                    std::vector<model::Window>& dst) {
        for (std::size_t tf = std::max(range_first, t1); tf + t2 - 1 <= range_last; ++tf) {
            auto [ok, w] = window_at(tf);
            if (ok) dst.push_back(std::move(w));
        }
    };
    fill(split.train.first, split.train.last, ds.train);
    fill(split.validation.first, split.validation.last, ds.val);
    fill(split.test.first, split.test.last, ds.test);
    return ds;
}

// ---- commands -----------------------------------------------------------------

void cmd_ingest(const config::RunConfig& cfg) {
    Paths paths(cfg);
    fs::create_directories(paths.out);
    std::string bars_path = cfg.data.bars;
    std::optional<std::string> adjustments;
    if (!cfg.data.adjustments.empty()) adjustments = cfg.data.adjustments;

    if (cfg.data.synthetic.enabled) {
        const auto generated = synthetic::generate(cfg.data.synthetic);
        data::save_panel(generated.panel, paths.bars().string());
        synthetic::save_benchmark_csv(generated, paths.benchmark().string());
        synthetic::save_metadata_csv(generated, paths.metadata().string());
        bars_path = paths.bars().string();
        adjustments.reset();
    } else if (bars_path.empty()) {
        throw ConfigError("data.bars is empty and data.synthetic.enabled is false");
    }

    auto panel = data::load_panel(bars_path, adjustments);
    if (!cfg.data.exclusions.empty()) {
        const auto excl = data::load_exclusions(cfg.data.exclusions);
        const std::set<std::string> drop(excl.begin(), excl.end());
        if (!drop.empty()) {
            data::PanelDataset kept;
            kept.calendar = panel.calendar;
            std::vector<std::size_t> keep_cols;
            for (std::size_t n = 0; n < panel.symbols_count(); ++n) {
                if (!drop.count(panel.symbols[n])) {
                    keep_cols.push_back(n);
                    kept.symbols.push_back(panel.symbols[n]);
                }
            }
            const std::size_t T = panel.dates_count();
            for (Mat* m : {&kept.open, &kept.high, &kept.low, &kept.close, &kept.vwap,
                           &kept.volume}) {
                *m = Mat(T, kept.symbols.size(), nan_value());
            }
            for (std::size_t t = 0; t < T; ++t) {
                for (std::size_t j = 0; j < keep_cols.size(); ++j) {
                    const std::size_t n = keep_cols[j];
                    kept.open(t, j) = panel.open(t, n);
                    kept.high(t, j) = panel.high(t, n);
                    kept.low(t, j) = panel.low(t, n);
                    kept.close(t, j) = panel.close(t, n);
                    kept.vwap(t, j) = panel.vwap(t, n);
                    kept.volume(t, j) = panel.volume(t, n);
                }
            }
            panel = std::move(kept);
        }
    }
    data::save_panel(panel, paths.panel().string());
}

void cmd_factors(const config::RunConfig& cfg) {
    Paths paths(cfg);
    require_artifact(paths.panel(), "ingest");
    const auto panel = data::load_panel(paths.panel().string());
    const auto returns = data::compute_returns(panel);

    auto fp = factors::build_alpha360(panel, cfg.factors.threads);
    fp = factors::preprocess(fp, cfg.factors.threads);

    const std::string meta_path_str = metadata_path(cfg, paths);
    if (!meta_path_str.empty()) {
        const auto meta = load_metadata(meta_path_str);
        const std::size_t T = fp.dates.size(), N = fp.symbols.size();
        std::vector<std::string> industry(N);
        bool have_industry = false;
        for (std::size_t n = 0; n < N; ++n) {
            auto it = meta.find(fp.symbols[n]);
            if (it != meta.end() && !it->second.industry.empty()) {
                industry[n] = it->second.industry;
                have_industry = true;
            }
        }
        std::set<std::string> distinct(industry.begin(), industry.end());
        distinct.erase("");
        const bool use_industry = have_industry && distinct.size() >= 2;
        for (std::size_t t = 0; t < T; ++t) {
            std::vector<double> caps(N, nan_value());
            for (std::size_t n = 0; n < N; ++n) {
                auto it = meta.find(fp.symbols[n]);
                if (it != meta.end()) caps[n] = cap_asof(it->second, fp.dates[t]);
            }
            for (std::size_t f = 0; f < fp.channels(); ++f) {
                std::vector<double> col(N);
                for (std::size_t n = 0; n < N; ++n) col[n] = fp.values(t, n, f);
                bool any = false;
                for (double v : col) {
                    if (!is_missing(v)) any = true;
                }
                if (!any) continue;
                auto res = factors::neutralize(col, use_industry ? industry
                                                                 : std::vector<std::string>{},
                                               caps);
                for (std::size_t n = 0; n < N; ++n) fp.values(t, n, f) = res.residuals[n];
            }
        }
    }

    const auto report = factors::ic_analysis(fp, returns, cfg.factors.ic_threshold);
    report.save_csv(paths.ic_report().string());
    if (cfg.factors.screen) {
        const auto keep = report.effective_names();
        if (!keep.empty()) {
            fp = factors::select_channels(fp, keep);
        } else {
            fp.warnings.push_back("no factor passed the IC screen; keeping all channels");
        }
    }
    save_factor_panel(fp, paths.factor_panel().string());
}

void cmd_split(const config::RunConfig& cfg) {
    Paths paths(cfg);
    require_artifact(paths.panel(), "ingest");
    const auto panel = data::load_panel(paths.panel().string());
    const auto splits = data::make_rolling_splits(panel.calendar, cfg.splits.train_len,
                                                  cfg.splits.val_len, cfg.splits.test_len,
                                                  cfg.splits.step);
    save_splits(splits, paths.splits().string());
}

void cmd_train(const config::RunConfig& cfg, int split_index) {
    Paths paths(cfg);
    auto in = load_inputs(cfg, true, true);
    for (std::size_t si : selected_splits(split_index, in.splits.size())) {
        train_one_split(cfg, in, si, paths.split_dir(si));
    }
}

void cmd_predict(const config::RunConfig& cfg, int split_index) {
    Paths paths(cfg);
    auto in = load_inputs(cfg, true, true);
    for (std::size_t si : selected_splits(split_index, in.splits.size())) {
        predict_one_split(cfg, in, si, paths.split_dir(si));
    }
}

void cmd_evaluate(const config::RunConfig& cfg, int split_index) {
    Paths paths(cfg);
    auto in = load_inputs(cfg, false, true);
    for (std::size_t si : selected_splits(split_index, in.splits.size())) {
        evaluate_one_split(in, paths.split_dir(si));
    }
}

void cmd_backtest(const config::RunConfig& cfg, int split_index) {
    Paths paths(cfg);
    auto in = load_inputs(cfg, false, true);
    for (std::size_t si : selected_splits(split_index, in.splits.size())) {
        backtest_one_split(cfg, in, paths.split_dir(si));
    }
}

void cmd_report(const config::RunConfig& cfg) {
    Paths paths(cfg);
    require_artifact(paths.splits(), "split");
    csv::Table report;
    report.header = {"split", "ic", "rank_ic", "icir", "rank_icir", "directional_accuracy",
                     "high_confidence_proportion", "selected_output", "annualized_return",
                     "annualized_volatility", "max_drawdown", "sharpe"};
    json bundle = json::array();
    csv::Table netvalues;
    netvalues.header = {"split", "date", "net_value"};

    for (std::size_t si = 0;; ++si) {
        const fs::path dir = paths.split_dir(si);
        if (!fs::exists(dir)) break;
        auto slurp = [&dir](const char* name) {
            std::ifstream f(dir / name);
            if (!f) throw ArtifactError("missing " + (dir / name).string() +
                                        "; run `evaluate` and `backtest` first");
            std::ostringstream buf;
            buf << f.rdbuf();
            return json::parse(buf.str());
        };
        const json ev = slurp("eval.json");
        const json conf = slurp("confidence.json");
        const json pf = slurp("portfolio.json");
        auto num = [](const json& j, const char* k) {
            return j.at(k).is_null() ? std::string() : csv::format_double(j.at(k).get<double>());
        };
        report.rows.push_back({std::to_string(si), num(ev, "ic"), num(ev, "rank_ic"),
                               num(ev, "icir"), num(ev, "rank_icir"),
                               num(ev, "directional_accuracy"),
                               num(conf, "high_confidence_proportion"),
                               conf.at("selected_output").get<std::string>(),
                               num(pf, "annualized_return"), num(pf, "annualized_volatility"),
                               num(pf, "max_drawdown"), num(pf, "sharpe")});
        json row;
        row["split"] = si;
        row["eval"] = ev;
        row["confidence"] = conf;
        row["portfolio"] = pf;
        bundle.push_back(row);

        auto nv = csv::read_file((dir / "netvalue.csv").string());
        const int cd = nv.column("date"), cv = nv.column("net_value");
        for (const auto& r : nv.rows) {
            netvalues.rows.push_back({std::to_string(si), r[cd], r[cv]});
        }
    }
    if (bundle.empty()) throw ArtifactError("no split outputs found; run the pipeline first");
    csv::write_file((paths.out / "report.csv").string(), report);
    std::ofstream(paths.out / "report.json") << bundle.dump(2) << "\n";
    csv::write_file((paths.out / "netvalue_all.csv").string(), netvalues);
}

std::vector<SweepPoint> sweep_grid() {
    std::vector<SweepPoint> grid;
    for (std::size_t d : {32, 64, 128, 256}) {
        for (std::size_t l : {1, 2, 3, 4}) {
            for (std::size_t b : {8, 16, 32, 64}) {
                for (double lam : {1.0, 1.5, 2.0, 2.5}) grid.push_back({d, l, b, lam});
            }
        }
    }
    return grid;
}

std::vector<std::string> ablation_variants() {
    return {"full",      "no_decouple", "no_temporal", "no_graph",
            "no_fusion", "no_reg_head", "no_cla_head"};
}

model::AblationFlags ablation_flags_for(const std::string& variant) {
    model::AblationFlags f;
    if (variant == "full") return f;
    if (variant == "no_decouple") {
        f.no_decouple = true;
    } else if (variant == "no_temporal") {
        f.no_temporal = true;
    } else if (variant == "no_graph") {
        f.no_graph = true;
    } else if (variant == "no_fusion") {
        f.no_fusion = true;
    } else if (variant == "no_reg_head") {
        f.no_reg_head = true;
    } else if (variant == "no_cla_head") {
        f.no_cla_head = true;
    } else {
        throw ArgumentError("unknown ablation variant " + variant);
    }
    return f;
}

void run_parallel(unsigned jobs, const std::vector<std::function<void()>>& tasks) {
    if (jobs <= 1) {
        for (const auto& task : tasks) task();
        return;
    }
    std::vector<pid_t> running;
    auto reap_one = [&running]() {
        int status = 0;
        const pid_t done = waitpid(-1, &status, 0);
        running.erase(std::remove(running.begin(), running.end(), done), running.end());
        if (!WIFEXITED(status) || WEXITSTATUS(status) != 0) {
            throw Error("E_WORKER", "worker process failed");
        }
    };
    for (const auto& task : tasks) {
        while (running.size() >= jobs) reap_one();
        const pid_t pid = fork();
        if (pid < 0) throw Error("E_WORKER", "fork failed");
        if (pid == 0) {
            try {
                task();
                _exit(0);
            } catch (const std::exception& e) {
                std::fprintf(stderr, "worker: %s\n", e.what());
                _exit(1);
            }
        }
        running.push_back(pid);
    }
    while (!running.empty()) reap_one();
}

namespace {

// Shared by sweep and ablate: train a model variant and evaluate it.
struct VariantResult {
    double val_total_full = 0, val_reg_full = 0, val_cla_full = 0;
    double test_ic = 0, test_rank_ic = 0, test_dir_acc = 0;
    std::size_t best_epoch = 0;
    double best_val = 0;
};

VariantResult run_variant(const config::RunConfig& cfg, const LoadedInputs& in, std::size_t si,
                          const model::ModelConfig& base, const fs::path& dir) {
    const auto filters = cfg.filters();
    SplitDataset ds = build_split_dataset(in.panel, in.factor_panel, in.returns, in.splits[si],
                                          base.t1, base.t2, filters);
    if (ds.train.empty()) throw ConfigError("variant run produced no training windows");
    fs::create_directories(dir);
    model::ModelConfig mc = base;
    mc.stocks = ds.symbols.size();
    mc.input_channels = ds.input_channels;
    model::Stockformer net(mc, filters);

    tensor::ParameterStore store(mc.seed);
    net.init_params(store);
    const auto result = model::train(net, ds.train, ds.val, store);
    store.save((dir / "checkpoint.bin").string(),
               json{{"model", json::parse(mc.to_json())}}.dump());

    VariantResult vr;
    vr.best_epoch = result.best_epoch;
    vr.best_val = result.best_val;
    double tot = 0, reg = 0, cla = 0;
    const auto& vws = ds.val.empty() ? ds.train : ds.val;
    for (const auto& w : vws) {
        const auto lb = net.evaluate_loss(w, store, /*full_form=*/true);
        tot += lb.total;
        reg += lb.reg;
        cla += lb.cla;
    }
    vr.val_total_full = tot / static_cast<double>(vws.size());
    vr.val_reg_full = reg / static_cast<double>(vws.size());
    vr.val_cla_full = cla / static_cast<double>(vws.size());

    // test-window prediction quality
    std::vector<std::vector<double>> preds, actuals;
    std::vector<double> probs, labels;
    std::vector<double> rank_daily, ic_daily;
    for (const auto& w : ds.test) {
        const auto bundle = net.predict(w, store);
        for (std::size_t h = 0; h < mc.t2; ++h) {
            std::vector<double> p, a;
            for (std::size_t n = 0; n < ds.symbols.size(); ++n) {
                p.push_back(bundle.y_reg(h, n));
                a.push_back(w.target_return(h, n));
                probs.push_back(bundle.p_cla(h, n));
                labels.push_back(w.label_trend(h, n));
            }
            ic_daily.push_back(eval::ic(p, a));
            rank_daily.push_back(eval::rank_ic(p, a));
        }
    }
    vr.test_ic = eval::summarize_daily(ic_daily).mean;
    vr.test_rank_ic = eval::summarize_daily(rank_daily).mean;
    vr.test_dir_acc = probs.empty() ? nan_value()
                                    : eval::directional_accuracy_from_probs(probs, labels);

    json manifest;
    manifest["model"] = json::parse(mc.to_json());
    manifest["best_epoch"] = result.best_epoch;
    manifest["best_val"] = result.best_val;
    manifest["val_total_full"] = vr.val_total_full;
    manifest["val_reg_full"] = vr.val_reg_full;
    manifest["val_cla_full"] = vr.val_cla_full;
    auto put = [&manifest](const char* key, double v) {
        manifest[key] = is_missing(v) ? json() : json(v);
    };
    put("test_ic", vr.test_ic);
    put("test_rank_ic", vr.test_rank_ic);
    put("test_directional_accuracy", vr.test_dir_acc);
    std::ofstream(dir / "manifest.json") << manifest.dump(2) << "\n";
    return vr;
}

}  // namespace

void cmd_sweep(const config::RunConfig& cfg, unsigned jobs, bool dry_run, int limit,
               int split_index) {
    Paths paths(cfg);
    const auto grid = sweep_grid();
    fs::create_directories(paths.out / "sweep");

    csv::Table plan;
    plan.header = {"point", "hidden_dim", "layers", "batch", "lambda"};
    for (std::size_t i = 0; i < grid.size(); ++i) {
        plan.rows.push_back({std::to_string(i), std::to_string(grid[i].hidden_dim),
                             std::to_string(grid[i].layers), std::to_string(grid[i].batch),
                             csv::format_double(grid[i].lambda_cla)});
    }
    csv::write_file((paths.out / "sweep" / "sweep_plan.csv").string(), plan);
    if (dry_run) return;

    auto in = load_inputs(cfg, true, true);
    const std::size_t si = selected_splits(split_index, in.splits.size()).front();
    const std::size_t count =
        limit < 0 ? grid.size() : std::min<std::size_t>(grid.size(), static_cast<std::size_t>(limit));

    std::vector<std::function<void()>> tasks;
    for (std::size_t i = 0; i < count; ++i) {
        tasks.push_back([&, i] {
            char buf[32];
            std::snprintf(buf, sizeof(buf), "point_%03zu", i);
            model::ModelConfig mc = cfg.model;
            mc.hidden_dim = grid[i].hidden_dim;
            mc.layers = grid[i].layers;
            mc.batch = grid[i].batch;
            mc.lambda_cla = grid[i].lambda_cla;
            run_variant(cfg, in, si, mc, paths.out / "sweep" / buf);
        });
    }
    run_parallel(jobs, tasks);

    csv::Table results;
    results.header = {"point", "hidden_dim", "layers", "batch", "lambda", "best_val", "best_epoch"};
    for (std::size_t i = 0; i < count; ++i) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), "point_%03zu", i);
        std::ifstream f(paths.out / "sweep" / buf / "manifest.json");
        if (!f) throw ArtifactError("sweep point " + std::string(buf) + " left no manifest");
        std::ostringstream txt;
        txt << f.rdbuf();
        const json m = json::parse(txt.str());
        results.rows.push_back({std::to_string(i), std::to_string(grid[i].hidden_dim),
                                std::to_string(grid[i].layers), std::to_string(grid[i].batch),
                                csv::format_double(grid[i].lambda_cla),
                                csv::format_double(m.at("best_val").get<double>()),
                                std::to_string(m.at("best_epoch").get<std::size_t>())});
    }
    csv::write_file((paths.out / "sweep" / "sweep_results.csv").string(), results);
}

void cmd_ablate(const config::RunConfig& cfg, unsigned jobs, int split_index) {
    Paths paths(cfg);
    auto in = load_inputs(cfg, true, true);
    const std::size_t si = selected_splits(split_index, in.splits.size()).front();
    const auto variants = ablation_variants();
    fs::create_directories(paths.out / "ablate");

    std::vector<std::function<void()>> tasks;
    for (const auto& variant : variants) {
        tasks.push_back([&, variant] {
            model::ModelConfig mc = cfg.model;
            mc.ablation = ablation_flags_for(variant);
            run_variant(cfg, in, si, mc, paths.out / "ablate" / variant);
        });
    }
    run_parallel(jobs, tasks);

    csv::Table results;
    results.header = {"variant", "val_total_full", "val_reg_full", "val_cla_full", "test_ic",
                      "test_rank_ic", "test_directional_accuracy", "best_epoch"};
    for (const auto& variant : variants) {
        std::ifstream f(paths.out / "ablate" / variant / "manifest.json");
        if (!f) throw ArtifactError("ablation variant " + variant + " left no manifest");
        std::ostringstream txt;
        txt << f.rdbuf();
        const json m = json::parse(txt.str());
        auto num = [&m](const char* k) {
            return m.at(k).is_null() ? std::string() : csv::format_double(m.at(k).get<double>());
        };
        results.rows.push_back({variant, num("val_total_full"), num("val_reg_full"),
                                num("val_cla_full"), num("test_ic"), num("test_rank_ic"),
                                num("test_directional_accuracy"),
                                std::to_string(m.at("best_epoch").get<std::size_t>())});
    }
    csv::write_file((paths.out / "ablate" / "ablate_results.csv").string(), results);
}

}  // namespace stockformer::pipeline
