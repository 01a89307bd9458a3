#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stockformer/array.h"
#include "stockformer/data.h"

namespace stockformer::graphs {

// 21 trading slots per month x 12 months.
constexpr int kSlotsPerMonth = 21;
constexpr int kMonths = 12;
constexpr int kSlotNodes = kSlotsPerMonth * kMonths;  // 252

struct TimeSlot {
    std::int64_t index = 0;  // floor((t - t0) / dt)
    double remainder = 0;    // t - t0 - index * dt, in [0, dt)
};

enum class EdgeType { AdjacentSlot, SameSlotNextMonth };

struct TemporalEdge {
    int src = 0;
    int dst = 0;
    EdgeType type = EdgeType::AdjacentSlot;
};

// Directed 252-node graph: node i -> (i+1) mod 252 and i -> (i+21) mod 252.
struct TemporalGraph {
    int nodes = kSlotNodes;
    std::vector<TemporalEdge> edges;  // 504 edges

    std::vector<std::vector<int>> out_neighbors() const;
    void save_csv(const std::string& path) const;
};

// N x N Spearman correlation adjacency; symmetric, unit diagonal.
struct SpatialGraph {
    std::vector<std::string> symbols;
    Mat adjacency;
    std::vector<std::string> warnings;

    void save_csv(const std::string& path) const;
};

struct EmbeddingTable {
    std::size_t rows = 0;
    std::size_t dim = 0;
    Mat values;
    bool trainable = true;

    void save_csv(const std::string& path) const;
};

TimeSlot time_slot_of(double t, double t0, double dt);

// Node id for a slot index: index mod 252.
int slot_node(std::int64_t index);

TemporalGraph build_temporal_graph();

// Seeded random rows followed by `smoothing_rounds` of averaging each row
// with its out-neighbors' rows.
EmbeddingTable init_temporal_embedding(const TemporalGraph& graph, std::size_t dim,
                                       int smoothing_rounds, std::uint64_t seed);

// One smoothing round: row_i <- mean(row_i, rows of out-neighbors of i),
// all rows updated from the previous iterate.
Mat smooth_rows(const Mat& rows, const std::vector<std::vector<int>>& out_neighbors, int rounds);

SpatialGraph build_spatial_graph(const data::ReturnMatrix& returns);

// Iterative attention-weighted aggregation: v_i <- normalize(v_i +
// sum_{j != i} softmax_j((v_i . v_j)/sqrt(D)) * |w_ij| * v_j), until the max
// elementwise change drops below tol or max_iters is reached. Rows are
// unit-norm on exit.
EmbeddingTable struc2vec_embed(const SpatialGraph& graph, std::size_t dim, int max_iters,
                               double tol, std::uint64_t seed);

// (rho_spa N x D, rho_tem T1 x D) -> pair of T1 x N x D replicas.
std::pair<Cube, Cube> broadcast_embeddings(const Mat& rho_spa, const Mat& rho_tem);

// Trading-day ordinals: date -> slot (month-1)*21 + min(ordinal_in_month, 21) - 1.
std::vector<int> date_slots(const std::vector<std::string>& calendar_dates);

}  // namespace stockformer::graphs
