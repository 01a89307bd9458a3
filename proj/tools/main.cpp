#include <cstdio>
#include <string>

#include <CLI11.hpp>

#include "stockformer/config.h"
#include "stockformer/errors.h"
#include "stockformer/pipeline.h"

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_override;
    long seed_override = -1;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "run configuration JSON")->required();
    cmd->add_option("--out", args.out_override, "override output.dir");
    cmd->add_option("--seed", args.seed_override, "override model.seed");
}

stockformer::config::RunConfig load_config(const CommonArgs& args) {
    auto cfg = stockformer::config::load(args.config_path);
    if (!args.out_override.empty()) cfg.output.dir = args.out_override;
    if (args.seed_override >= 0) cfg.model.seed = static_cast<std::uint64_t>(args.seed_override);
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"stockformer: factor construction, dual-frequency model training and TopK-Dropout backtesting"};
    app.require_subcommand(1);

    CommonArgs common;
    int split = -1;
    unsigned jobs = 1;
    bool dry_run = false;
    int limit = -1;

    auto* ingest = app.add_subcommand("ingest", "load bars (or generate the synthetic fixture) into a canonical panel");
    auto* factors = app.add_subcommand("factors", "build, preprocess, neutralize and screen the Alpha360 factors");
    auto* split_cmd = app.add_subcommand("split", "emit rolling train/validation/test windows");
    auto* train = app.add_subcommand("train", "train the model per rolling split");
    auto* predict = app.add_subcommand("predict", "predict test windows from checkpoints");
    auto* evaluate = app.add_subcommand("evaluate", "prediction-quality metrics and output selection");
    auto* backtest = app.add_subcommand("backtest", "run the TopK-Dropout strategy on model scores");
    auto* report = app.add_subcommand("report", "aggregate per-split reports into one bundle");
    auto* sweep = app.add_subcommand("sweep", "hyperparameter grid runs");
    auto* ablate = app.add_subcommand("ablate", "train the six ablation variants plus the full model");

    for (CLI::App* cmd : {ingest, factors, split_cmd, train, predict, evaluate, backtest, report,
                          sweep, ablate}) {
        add_common(cmd, common);
    }
    for (CLI::App* cmd : {train, predict, evaluate, backtest}) {
        cmd->add_option("--split", split, "run a single split index (default: all)");
    }
    sweep->add_option("--jobs", jobs, "parallel worker processes");
    sweep->add_flag("--dry-run", dry_run, "write the grid plan without training");
    sweep->add_option("--limit", limit, "run only the first N grid points");
    sweep->add_option("--split", split, "split index to sweep on (default 0)");
    ablate->add_option("--jobs", jobs, "parallel worker processes");
    ablate->add_option("--split", split, "split index to ablate on (default 0)");

    CLI11_PARSE(app, argc, argv);

    try {
        const auto cfg = load_config(common);
        using namespace stockformer::pipeline;
        if (*ingest) cmd_ingest(cfg);
        if (*factors) cmd_factors(cfg);
        if (*split_cmd) cmd_split(cfg);
        if (*train) cmd_train(cfg, split);
        if (*predict) cmd_predict(cfg, split);
        if (*evaluate) cmd_evaluate(cfg, split);
        if (*backtest) cmd_backtest(cfg, split);
        if (*report) cmd_report(cfg);
        if (*sweep) cmd_sweep(cfg, jobs, dry_run, limit, split < 0 ? 0 : split);
        if (*ablate) cmd_ablate(cfg, jobs, split < 0 ? 0 : split);
    } catch (const stockformer::Error& e) {
        std::fprintf(stderr, "error: %s: %s\n", e.code().c_str(), e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: E_INTERNAL: %s\n", e.what());
        return 1;
    }
    return 0;
}
