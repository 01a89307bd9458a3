#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stockformer/backtest.h"
#include "stockformer/model.h"
#include "stockformer/wavelet.h"

namespace stockformer::config {

struct SyntheticConfig {
    bool enabled = false;
    std::size_t stocks = 6;
    std::size_t days = 420;
    std::uint64_t seed = 7;
    double signal = 0.35;   // AR(1) mean-reversion strength of daily returns
    double noise = 0.004;   //;innovation std
    std::string start_date = "2021-01-04";
};

struct DataConfig {
    std::string bars;
    std::string adjustments;
    std::string exclusions;
    std::string metadata;  // symbol,industry,mktcap_date,mktcap
    SyntheticConfig synthetic;
};

struct SplitConfig {
    std::size_t train_len = 486;
    std::size_t val_len = 81;
    std::size_t test_len = 81;
    std::size_t step = 62;
};

struct FactorConfig {
    double ic_threshold = 0.02;
    bool screen = true;
    unsigned threads = 0;  // 0 = hardware concurrency
};

struct WaveletConfig {
    std::string name = "haar";
    std::vector<double> g;  // explicit coefficients override the named family
    std::vector<double> h;
};

struct OutputConfig {
    std::string dir = "out";
};

struct StrategyConfig : backtest::StrategyConfig {
    std::string benchmark;  // optional date,value CSV
};

struct RunConfig {
    DataConfig data;
    SplitConfig splits;
    FactorConfig factors;
    WaveletConfig wavelet;
    model::ModelConfig model;  // stocks/input_channels filled from data at train time
    StrategyConfig strategy;
    OutputConfig output;

    wavelet::FilterPair filters() const;
};

// Loads a JSON config. Unknown keys anywhere are rejected, all of them listed
// in one error. Environment variables STKF_<SECTION>__<KEY>=<json-or-string>
// override file values (e.g. STKF_MODEL__EPOCHS=3).
RunConfig load(const std::string& path);
RunConfig from_json_text(const std::string& text, bool apply_env = false);

std::string default_json();

}  // namespace stockformer::config
