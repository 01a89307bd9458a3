#pragma once

#include <functional>
#include <string>
#include <vector>

#include "stockformer/config.h"
#include "stockformer/data.h"
#include "stockformer/factors.h"
#include "stockformer/model.h"

namespace stockformer::pipeline {

// ingest -> factors -> split -> train -> predict -> evaluate -> backtest ->
// report. Every command is idempotent for identical inputs and seed; missing
// upstream artifacts raise ArtifactError naming the command to run first.
void cmd_ingest(const config::RunConfig& cfg);
void cmd_factors(const config::RunConfig& cfg);
void cmd_split(const config::RunConfig& cfg);
void cmd_train(const config::RunConfig& cfg, int split_index = -1);
void cmd_predict(const config::RunConfig& cfg, int split_index = -1);
void cmd_evaluate(const config::RunConfig& cfg, int split_index = -1);
void cmd_backtest(const config::RunConfig& cfg, int split_index = -1);
void cmd_report(const config::RunConfig& cfg);
void cmd_sweep(const config::RunConfig& cfg, unsigned jobs = 1, bool dry_run = false,
               int limit = -1, int split_index = 0);
void cmd_ablate(const config::RunConfig& cfg, unsigned jobs = 1, int split_index = 0);

// Model universe and windows for one rolling split.
struct SplitDataset {
    std::vector<std::string> symbols;
    std::size_t input_channels = 0;
    std::vector<model::Window> train, val, test;
};

SplitDataset build_split_dataset(const data::PanelDataset& panel,
                                 const factors::FactorPanel& factor_panel,
                                 const data::ReturnMatrix& returns,
                                 const data::RollingSplit& split, std::size_t t1, std::size_t t2,
                                 const wavelet::FilterPair& filters);

struct SweepPoint {
    std::size_t hidden_dim;
    std::size_t layers;
    std::size_t batch;
    double lambda_cla;
};
// The full hyperparameter grid: 4 x 4 x 4 x 4 = 256 points.
std::vector<SweepPoint> sweep_grid();

// Ablation variant names in report order ("full" first).
std::vector<std::string> ablation_variants();
model::AblationFlags ablation_flags_for(const std::string& variant);

// Runs tasks across up to `jobs` forked worker processes (sequentially when
// jobs <= 1). Throws if any worker exits nonzero.
void run_parallel(unsigned jobs, const std::vector<std::function<void()>>& tasks);

std::uint64_t fnv1a(const void* data, std::size_t bytes, std::uint64_t seed = 1469598103934665603ull);

}  // namespace stockformer::pipeline
