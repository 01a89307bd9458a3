#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stockformer/config.h"
#include "stockformer/data.h"
#include "stockformer/model.h"

namespace stockformer::synthetic {

struct GeneratedData {
    data::PanelDataset panel;
    // equal-weight index level per date, for benchmark comparisons
    std::vector<std::string> benchmark_dates;
    std::vector<double> benchmark_values;
    // one metadata row per symbol: industry label and market cap
    std::vector<std::string> industries;
    std::vector<double> mktcaps;
};

// Seeded geometric random walk with a mean-reverting AR(1) return signal, so
// short-lag price ratios genuinely predict next-day returns.
GeneratedData generate(const config::SyntheticConfig& cfg);

void save_benchmark_csv(const GeneratedData& g, const std::string& path);
void save_metadata_csv(const GeneratedData& g, const std::string& path);

// Weekday calendar starting at `start` (ISO date), `days` entries long.
std::vector<std::string> weekday_calendar(const std::string& start, std::size_t days);

// Window-level planted-signal dataset: returns follow factor channel 2 with
// a two-step information lag, noise-free, so every prediction horizon is a
// function of the observed window. With sign_by_stock, odd stocks flip the
// coefficient; identifying the flip requires stock-identity information.
std::vector<model::Window> make_planted_windows(std::size_t count, std::size_t stocks,
                                                std::size_t t1, std::size_t t2,
                                                std::size_t channels, std::uint64_t seed,
                                                double coef = 0.1, bool sign_by_stock = false);

// Composite fixture for component comparisons: returns carry a nonlinear
// driver term, an alternating-day component, a per-stock bias and optional
// gaussian noise, so the decoupling branch, the temporal blocks and the
// stock embedding each have signal to pick up.
std::vector<model::Window> make_component_windows(std::size_t count, std::size_t stocks,
                                                  std::size_t t1, std::size_t t2,
                                                  std::uint64_t seed, double noise = 0.0);

}  // namespace stockformer::synthetic
