#include "stockformer/graphs.h"

#include <cmath>
#include <map>
#include <random>

#include "stockformer/csv.h"
#include "stockformer/errors.h"
#include "stockformer/stats.h"

namespace stockformer::graphs {

TimeSlot time_slot_of(double t, double t0, double dt) {
    if (t < t0) throw ArgumentError("time_slot_of: t precedes base timestamp");
    if (!(dt > 0)) throw ArgumentError("time_slot_of: dt must be positive");
    TimeSlot s;
    s.index = static_cast<std::int64_t>(std::floor((t - t0) / dt));
    s.remainder = t - t0 - static_cast<double>(s.index) * dt;
    // guard against floor() landing one unit off at representation boundaries
    if (s.remainder < 0) {
        s.index -= 1;
        s.remainder += dt;
    } else if (s.remainder >= dt) {
        s.index += 1;
        s.remainder -= dt;
    }
    return s;
}

int slot_node(std::int64_t index) {
    if (index < 0) throw ArgumentError("slot_node: negative slot index");
    return static_cast<int>(index % kSlotNodes);
}

TemporalGraph build_temporal_graph() {
    TemporalGraph g;
    g.edges.reserve(2 * kSlotNodes);
    for (int i = 0; i < kSlotNodes; ++i) {
        g.edges.push_back({i, (i + 1) % kSlotNodes, EdgeType::AdjacentSlot});
        g.edges.push_back({i, (i + kSlotsPerMonth) % kSlotNodes, EdgeType::SameSlotNextMonth});
    }
    return g;
}

std::vector<std::vector<int>> TemporalGraph::out_neighbors() const {
    std::vector<std::vector<int>> adj(nodes);
    for (const auto& e : edges) adj[e.src].push_back(e.dst);
    return adj;
}

void TemporalGraph::save_csv(const std::string& path) const {
    csv::Table t;
    t.header = {"src", "dst", "type"};
    for (const auto& e : edges) {
        t.rows.push_back({std::to_string(e.src), std::to_string(e.dst),
                          e.type == EdgeType::AdjacentSlot ? "adjacent" : "month"});
    }
    csv::write_file(path, t);
}

Mat smooth_rows(const Mat& rows, const std::vector<std::vector<int>>& out_neighbors, int rounds) {
    Mat cur = rows;
    for (int r = 0; r < rounds; ++r) {
        Mat next(cur.rows, cur.cols, 0.0);
        for (std::size_t i = 0; i < cur.rows; ++i) {
            const auto& nbrs = out_neighbors[i];
            const double denom = 1.0 + static_cast<double>(nbrs.size());
            for (std::size_t d = 0; d < cur.cols; ++d) {
                double s = cur(i, d);
                for (int j : nbrs) s += cur(static_cast<std::size_t>(j), d);
                next(i, d) = s / denom;
            }
        }
        cur = std::move(next);
    }
    return cur;
}

EmbeddingTable init_temporal_embedding(const TemporalGraph& graph, std::size_t dim,
                                       int smoothing_rounds, std::uint64_t seed) {
    if (dim < 1) throw ArgumentError("init_temporal_embedding: dim must be >= 1");
    EmbeddingTable table;
    table.rows = static_cast<std::size_t>(graph.nodes);
    table.dim = dim;
    table.trainable = true;
    table.values = Mat(table.rows, dim);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    for (auto& v : table.values.v) v = dist(rng);
    table.values = smooth_rows(table.values, graph.out_neighbors(), smoothing_rounds);
    return table;
}

SpatialGraph build_spatial_graph(const data::ReturnMatrix& returns) {
    const std::size_t N = returns.symbols.size();
    const std::size_t T = returns.dates.size();
    SpatialGraph g;
    g.symbols = returns.symbols;
    g.adjacency = Mat(N, N, 0.0);
    std::vector<std::vector<double>> cols(N, std::vector<double>(T));
    std::vector<bool> constant(N, false);
    for (std::size_t n = 0; n < N; ++n) {
        bool seen = false, varies = false;
        double first = 0;
        for (std::size_t t = 0; t < T; ++t) {
            cols[n][t] = returns.values(t, n);
            if (is_missing(cols[n][t])) continue;
            if (!seen) {
                first = cols[n][t];
                seen = true;
            } else if (cols[n][t] != first) {
                varies = true;
            }
        }
        if (seen && !varies) {
            constant[n] = true;
            g.warnings.push_back("constant return column: " + returns.symbols[n]);
        }
    }
    for (std::size_t i = 0; i < N; ++i) {
        g.adjacency(i, i) = 1.0;
        for (std::size_t j = i + 1; j < N; ++j) {
            double rho = 0.0;
            if (!constant[i] && !constant[j]) {
                const double s = stats::spearman(cols[i], cols[j], 3);
                rho = is_missing(s) ? 0.0 : s;
            }
            g.adjacency(i, j) = rho;
            g.adjacency(j, i) = rho;
        }
    }
    return g;
}

EmbeddingTable struc2vec_embed(const SpatialGraph& graph, std::size_t dim, int max_iters,
                               double tol, std::uint64_t seed) {
    const std::size_t N = graph.adjacency.rows;
    if (N < 1) throw ArgumentError("struc2vec_embed: empty graph");
    for (double w : graph.adjacency.v) {
        if (!std::isfinite(w)) throw ArgumentError("struc2vec_embed: non-finite adjacency entry");
    }
    EmbeddingTable table;
    table.rows = N;
    table.dim = dim;
    table.trainable = true;
    table.values = Mat(N, dim);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    for (auto& v : table.values.v) v = dist(rng);

    auto normalize_row = [&](Mat& m, std::size_t i) {
        double norm = 0;
        for (std::size_t d = 0; d < dim; ++d) norm += m(i, d) * m(i, d);
        norm = std::sqrt(norm);
        if (norm > 0) {
            for (std::size_t d = 0; d < dim; ++d) m(i, d) /= norm;
        }
    };

    const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
    Mat cur = table.values;
    for (int it = 0; it < max_iters; ++it) {
        Mat next(N, dim, 0.0);
        for (std::size_t i = 0; i < N; ++i) {
            // attention over the other nodes
            std::vector<double> score(N, 0.0);
            double mx = -1e300;
            for (std::size_t j = 0; j < N; ++j) {
                if (j == i) continue;
                double dot = 0;
                for (std::size_t d = 0; d < dim; ++d) dot += cur(i, d) * cur(j, d);
                score[j] = dot * scale;
                mx = std::max(mx, score[j]);
            }
            double denom = 0;
            for (std::size_t j = 0; j < N; ++j) {
                if (j != i) denom += std::exp(score[j] - mx);
            }
            for (std::size_t d = 0; d < dim; ++d) next(i, d) = cur(i, d);
            if (denom > 0) {
                for (std::size_t j = 0; j < N; ++j) {
                    if (j == i) continue;
                    const double alpha = std::exp(score[j] - mx) / denom;
                    const double w = std::fabs(graph.adjacency(i, j));
                    for (std::size_t d = 0; d < dim; ++d) next(i, d) += alpha * w * cur(j, d);
                }
            }
            normalize_row(next, i);
        }
        double max_change = 0;
        for (std::size_t k = 0; k < next.v.size(); ++k) {
            max_change = std::max(max_change, std::fabs(next.v[k] - cur.v[k]));
        }
        cur = std::move(next);
        if (max_change < tol) break;
    }
    if (max_iters == 0) {
        for (std::size_t i = 0; i < N; ++i) normalize_row(cur, i);
    }
    table.values = std::move(cur);
    return table;
}

std::pair<Cube, Cube> broadcast_embeddings(const Mat& rho_spa, const Mat& rho_tem) {
    if (rho_spa.cols != rho_tem.cols) {
        throw ShapeError("broadcast_embeddings: dim mismatch " + std::to_string(rho_spa.cols) +
                         " vs " + std::to_string(rho_tem.cols));
    }
    const std::size_t N = rho_spa.rows, T = rho_tem.rows, D = rho_spa.cols;
    Cube spa(T, N, D), tem(T, N, D);
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t n = 0; n < N; ++n) {
            for (std::size_t d = 0; d < D; ++d) {
                spa(t, n, d) = rho_spa(n, d);
                tem(t, n, d) = rho_tem(t, d);
            }
        }
    }
    return {std::move(spa), std::move(tem)};
}

std::vector<int> date_slots(const std::vector<std::string>& calendar_dates) {
    std::vector<int> out;
    out.reserve(calendar_dates.size());
    std::string cur_month;
    int ordinal = 0;
    for (const auto& date : calendar_dates) {
        if (!data::is_iso_date(date)) throw ArgumentError("date_slots: bad date " + date);
        const std::string m = data::month_of(date);
        if (m != cur_month) {
            cur_month = m;
            ordinal = 0;
        }
        ++ordinal;
        const int month = std::stoi(date.substr(5, 2));  // 1..12
        const int slot = std::min(ordinal, kSlotsPerMonth) - 1;
        out.push_back((month - 1) * kSlotsPerMonth + slot);
    }
    return out;
}

void SpatialGraph::save_csv(const std::string& path) const {
    csv::Table t;
    t.header = {"symbol_i", "symbol_j", "spearman"};
    for (std::size_t i = 0; i < adjacency.rows; ++i) {
        for (std::size_t j = 0; j < adjacency.cols; ++j) {
            t.rows.push_back({symbols[i], symbols[j], csv::format_double(adjacency(i, j))});
        }
    }
    csv::write_file(path, t);
}

void EmbeddingTable::save_csv(const std::string& path) const {
    csv::Table t;
    t.header = {"row"};
    for (std::size_t d = 0; d < dim; ++d) t.header.push_back("d" + std::to_string(d));
    for (std::size_t i = 0; i < rows; ++i) {
        std::vector<std::string> row{std::to_string(i)};
        for (std::size_t d = 0; d < dim; ++d) row.push_back(csv::format_double(values(i, d)));
        t.rows.push_back(std::move(row));
    }
    csv::write_file(path, t);
}

}  // namespace stockformer::graphs
