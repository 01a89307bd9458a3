#include "stockformer/tensor.h"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <unordered_set>

#include "stockformer/errors.h"
#include "stockformer/tensor_file.h"

namespace stockformer::tensor {

namespace {

std::atomic<std::size_t> g_clamp_count{0};

// Sum in value-sorted order: invariant under permutation of the addends.
double stable_sum(std::vector<double>& buf) {
    std::sort(buf.begin(), buf.end());
    double s = 0;
    for (double x : buf) s += x;
    return s;
}

std::shared_ptr<Node> make_node(Shape shape, std::vector<double> value) {
    auto n = std::make_shared<Node>();
    n->shape = std::move(shape);
    n->value = std::move(value);
    return n;
}

bool any_requires(const std::vector<Tensor>& ts) {
    for (const auto& t : ts) {
        if (t.node()->requires_grad) return true;
    }
    return false;
}

// Wires parents/backward only when some parent needs gradients.
Tensor finish(std::shared_ptr<Node> out, std::vector<Tensor> parents,
              std::function<void(Node&)> backward_fn) {
    if (any_requires(parents)) {
        out->requires_grad = true;
        out->parents.reserve(parents.size());
        for (auto& p : parents) out->parents.push_back(p.node());
        out->backward_fn = std::move(backward_fn);
    }
    return Tensor(std::move(out));
}

struct BroadcastPlan {
    Shape out_shape;
    std::vector<std::size_t> a_stride;  // per out dim; 0 where a broadcasts
    std::vector<std::size_t> b_stride;
};

BroadcastPlan broadcast_plan(const Shape& a, const Shape& b) {
    const std::size_t rank = std::max(a.size(), b.size());
    BroadcastPlan p;
    p.out_shape.assign(rank, 1);
    for (std::size_t i = 0; i < rank; ++i) {
        const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
        const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
        if (da != db && da != 1 && db != 1) {
            throw ShapeError("cannot broadcast " + shape_str(a) + " with " + shape_str(b));
        }
        p.out_shape[i] = std::max(da, db);
    }
    auto strides_for = [&](const Shape& s) {
        std::vector<std::size_t> st(rank, 0);
        std::size_t acc = 1;
        for (std::size_t i = 0; i < s.size(); ++i) {
            const std::size_t dim = s[s.size() - 1 - i];
            const std::size_t out_i = rank - 1 - i;
            st[out_i] = dim == 1 ? 0 : acc;
            acc *= dim;
        }
        return st;
    };
    p.a_stride = strides_for(a);
    p.b_stride = strides_for(b);
    return p;
}

// Walks the broadcast iteration space calling fn(out_idx, a_idx, b_idx).
template <typename F>
void broadcast_walk(const BroadcastPlan& p, F&& fn) {
    const std::size_t rank = p.out_shape.size();
    const std::size_t total = shape_size(p.out_shape);
    std::vector<std::size_t> idx(rank, 0);
    std::size_t ao = 0, bo = 0;
    for (std::size_t o = 0; o < total; ++o) {
        fn(o, ao, bo);
        for (std::size_t i = rank; i-- > 0;) {
            ++idx[i];
            ao += p.a_stride[i];
            bo += p.b_stride[i];
            if (idx[i] < p.out_shape[i]) break;
            ao -= p.a_stride[i] * idx[i];
            bo -= p.b_stride[i] * idx[i];
            idx[i] = 0;
        }
    }
}

enum class BinOp { Add, Sub, Mul };

Tensor binary_broadcast(const Tensor& a, const Tensor& b, BinOp op) {
    const auto plan = broadcast_plan(a.shape(), b.shape());
    std::vector<double> out(shape_size(plan.out_shape));
    const auto& av = a.values();
    const auto& bv = b.values();
    broadcast_walk(plan, [&](std::size_t o, std::size_t ao, std::size_t bo) {
        switch (op) {
            case BinOp::Add: out[o] = av[ao] + bv[bo]; break;
            case BinOp::Sub: out[o] = av[ao] - bv[bo]; break;
            case BinOp::Mul: out[o] = av[ao] * bv[bo]; break;
        }
    });
    auto node = make_node(plan.out_shape, std::move(out));
    return finish(node, {a, b}, [plan, op](Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        const bool need_a = pa.requires_grad;
        const bool need_b = pb.requires_grad;
        auto& ga = need_a ? pa.ensure_grad() : pa.grad;
        auto& gb = need_b ? pb.ensure_grad() : pb.grad;
        broadcast_walk(plan, [&](std::size_t o, std::size_t ao, std::size_t bo) {
            const double g = self.grad[o];
            switch (op) {
                case BinOp::Add:
                    if (need_a) ga[ao] += g;
                    if (need_b) gb[bo] += g;
                    break;
                case BinOp::Sub:
                    if (need_a) ga[ao] += g;
                    if (need_b) gb[bo] -= g;
                    break;
                case BinOp::Mul:
                    if (need_a) ga[ao] += g * pb.value[bo];
                    if (need_b) gb[bo] += g * pa.value[ao];
                    break;
            }
        });
    });
}

template <typename F, typename B>
Tensor unary_op(const Tensor& a, F&& fwd, B&& bwd) {
    std::vector<double> out(a.size());
    const auto& av = a.values();
    for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
    auto node = make_node(a.shape(), std::move(out));
    return finish(node, {a}, [bwd](Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        auto& g = p.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) {
            g[i] += self.grad[i] * bwd(p.value[i], self.value[i]);
        }
    });
}

}  // namespace

std::string shape_str(const Shape& s) {
    std::string out = "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + ")";
}

std::size_t shape_size(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

std::vector<double>& Node::ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
}

Tensor Tensor::from_values(Shape shape, std::vector<double> values, bool requires_grad) {
    if (shape_size(shape) != values.size()) {
        throw ShapeError("from_values: shape " + shape_str(shape) + " does not hold " +
                         std::to_string(values.size()) + " values");
    }
    auto n = make_node(std::move(shape), std::move(values));
    n->requires_grad = requires_grad;
    return Tensor(std::move(n));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    std::vector<double> v(shape_size(shape), 0.0);
    return from_values(std::move(shape), std::move(v), requires_grad);
}

Tensor Tensor::scalar(double v) { return from_values({1}, {v}); }

Tensor Tensor::from_mat(const Mat& m, bool requires_grad) {
    return from_values({m.rows, m.cols}, m.v, requires_grad);
}

Tensor Tensor::from_cube(const Cube& c, bool requires_grad) {
    return from_values({c.d0, c.d1, c.d2}, c.v, requires_grad);
}

const std::vector<double>& Tensor::grad() const { return node_->ensure_grad(); }

double Tensor::item() const {
    if (size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
    return values()[0];
}

Tensor add(const Tensor& a, const Tensor& b) { return binary_broadcast(a, b, BinOp::Add); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_broadcast(a, b, BinOp::Sub); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_broadcast(a, b, BinOp::Mul); }

Tensor scale(const Tensor& a, double c) {
    return unary_op(a, [c](double x) { return c * x; },
                    [c](double, double) { return c; });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0]) {
        throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
    }
    const std::size_t M = a.shape()[0], K = a.shape()[1], N = b.shape()[1];
    std::vector<double> out(M * N, 0.0);
    const auto& av = a.values();
    const auto& bv = b.values();
    for (std::size_t i = 0; i < M; ++i) {
        for (std::size_t k = 0; k < K; ++k) {
            const double aik = av[i * K + k];
            if (aik == 0.0) continue;
            const double* brow = &bv[k * N];
            double* orow = &out[i * N];
            for (std::size_t j = 0; j < N; ++j) orow[j] += aik * brow[j];
        }
    }
    auto node = make_node({M, N}, std::move(out));
    return finish(node, {a, b}, [M, K, N](Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) {  // dA = dC * B^T
            auto& ga = pa.ensure_grad();
            for (std::size_t i = 0; i < M; ++i) {
                for (std::size_t j = 0; j < N; ++j) {
                    const double g = self.grad[i * N + j];
                    if (g == 0.0) continue;
                    for (std::size_t k = 0; k < K; ++k) ga[i * K + k] += g * pb.value[k * N + j];
                }
            }
        }
        if (pb.requires_grad) {  // dB = A^T * dC
            auto& gb = pb.ensure_grad();
            for (std::size_t i = 0; i < M; ++i) {
                for (std::size_t k = 0; k < K; ++k) {
                    const double aik = pa.value[i * K + k];
                    if (aik == 0.0) continue;
                    for (std::size_t j = 0; j < N; ++j) gb[k * N + j] += aik * self.grad[i * N + j];
                }
            }
        }
    });
}

Tensor transpose(const Tensor& a) {
    if (a.rank() != 2) throw ShapeError("transpose: expected rank 2, got " + shape_str(a.shape()));
    const std::size_t R = a.shape()[0], C = a.shape()[1];
    std::vector<double> out(R * C);
    const auto& av = a.values();
    for (std::size_t i = 0; i < R; ++i)
        for (std::size_t j = 0; j < C; ++j) out[j * R + i] = av[i * C + j];
    auto node = make_node({C, R}, std::move(out));
    return finish(node, {a}, [R, C](Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        auto& g = p.ensure_grad();
        for (std::size_t i = 0; i < R; ++i)
            for (std::size_t j = 0; j < C; ++j) g[i * C + j] += self.grad[j * R + i];
    });
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_size(shape) != a.size()) {
        throw ShapeError("reshape: " + shape_str(a.shape()) + " to " + shape_str(shape));
    }
    auto node = make_node(std::move(shape), a.values());
    return finish(node, {a}, [](Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        auto& g = p.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    });
}

Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
    if (parts.empty()) throw ArgumentError("concat: no operands");
    const Shape base = parts[0].shape();
    if (axis >= base.size()) throw ShapeError("concat: axis out of range");
    Shape out_shape = base;
    std::size_t axis_total = 0;
    for (const auto& p : parts) {
        if (p.rank() != base.size()) throw ShapeError("concat: rank mismatch");
        for (std::size_t i = 0; i < base.size(); ++i) {
            if (i != axis && p.shape()[i] != base[i]) {
                throw ShapeError("concat: shape mismatch " + shape_str(p.shape()) + " vs " +
                                 shape_str(base));
            }
        }
        axis_total += p.shape()[axis];
    }
    out_shape[axis] = axis_total;
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= base[i];
    for (std::size_t i = axis + 1; i < base.size(); ++i) inner *= base[i];

    std::vector<double> out(shape_size(out_shape));
    std::size_t offset = 0;
    std::vector<std::size_t> piece_axis(parts.size());
    for (std::size_t pi = 0; pi < parts.size(); ++pi) {
        const std::size_t len = parts[pi].shape()[axis];
        piece_axis[pi] = len;
        const auto& pv = parts[pi].values();
        for (std::size_t o = 0; o < outer; ++o) {
            std::copy(&pv[o * len * inner], &pv[o * len * inner] + len * inner,
                      &out[(o * axis_total + offset) * inner]);
        }
        offset += len;
    }
    auto node = make_node(out_shape, std::move(out));
    return finish(node, parts, [outer, inner, axis_total, piece_axis](Node& self) {
        std::size_t offset = 0;
        for (std::size_t pi = 0; pi < self.parents.size(); ++pi) {
            auto& p = *self.parents[pi];
            const std::size_t len = piece_axis[pi];
            if (p.requires_grad) {
                auto& g = p.ensure_grad();
                for (std::size_t o = 0; o < outer; ++o) {
                    const double* src = &self.grad[(o * axis_total + offset) * inner];
                    double* dst = &g[o * len * inner];
                    for (std::size_t i = 0; i < len * inner; ++i) dst[i] += src[i];
                }
            }
            offset += len;
        }
    });
}

std::vector<Tensor> split(const Tensor& a, std::size_t axis,
                          const std::vector<std::size_t>& sizes) {
    if (axis >= a.rank()) throw ShapeError("split: axis out of range");
    std::size_t total = 0;
    for (std::size_t s : sizes) total += s;
    if (total != a.shape()[axis]) {
        throw ShapeError("split: sizes sum to " + std::to_string(total) + ", axis has " +
                         std::to_string(a.shape()[axis]));
    }
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= a.shape()[i];
    for (std::size_t i = axis + 1; i < a.rank(); ++i) inner *= a.shape()[i];
    const std::size_t axis_total = a.shape()[axis];

    std::vector<Tensor> out;
    std::size_t offset = 0;
    for (std::size_t len : sizes) {
        Shape shape = a.shape();
        shape[axis] = len;
        std::vector<double> vals(shape_size(shape));
        const auto& av = a.values();
        for (std::size_t o = 0; o < outer; ++o) {
            std::copy(&av[(o * axis_total + offset) * inner],
                      &av[(o * axis_total + offset) * inner] + len * inner, &vals[o * len * inner]);
        }
        auto node = make_node(shape, std::move(vals));
        const std::size_t off = offset;
        out.push_back(finish(node, {a}, [outer, inner, axis_total, len, off](Node& self) {
            auto& p = *self.parents[0];
            if (!p.requires_grad) return;
            auto& g = p.ensure_grad();
            for (std::size_t o = 0; o < outer; ++o) {
                const double* src = &self.grad[o * len * inner];
                double* dst = &g[(o * axis_total + off) * inner];
                for (std::size_t i = 0; i < len * inner; ++i) dst[i] += src[i];
            }
        }));
        offset += len;
    }
    return out;
}

Tensor relu(const Tensor& a) {
    return unary_op(a, [](double x) { return x > 0 ? x : 0.0; },
                    [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Tensor abs_val(const Tensor& a) {
    return unary_op(a, [](double x) { return std::fabs(x); },
                    [](double x, double) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Tensor softmax(const Tensor& a, std::size_t axis) {
    if (axis >= a.rank()) throw ShapeError("softmax: axis out of range for " + shape_str(a.shape()));
    const std::size_t len = a.shape()[axis];
    std::size_t outer = 1, inner = 1;
    for (std::size_t i = 0; i < axis; ++i) outer *= a.shape()[i];
    for (std::size_t i = axis + 1; i < a.rank(); ++i) inner *= a.shape()[i];

    std::vector<double> out(a.size());
    const auto& av = a.values();
    for (std::size_t o = 0; o < outer; ++o) {
        for (std::size_t in = 0; in < inner; ++in) {
            auto at = [&](std::size_t l) { return (o * len + l) * inner + in; };
            double mx = av[at(0)];
            for (std::size_t l = 1; l < len; ++l) mx = std::max(mx, av[at(l)]);
            double denom = 0;
            for (std::size_t l = 0; l < len; ++l) denom += std::exp(av[at(l)] - mx);
            for (std::size_t l = 0; l < len; ++l) out[at(l)] = std::exp(av[at(l)] - mx) / denom;
        }
    }
    auto node = make_node(a.shape(), std::move(out));
    return finish(node, {a}, [outer, inner, len](Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        auto& g = p.ensure_grad();
        for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t in = 0; in < inner; ++in) {
                auto at = [&](std::size_t l) { return (o * len + l) * inner + in; };
                double dot = 0;
                for (std::size_t l = 0; l < len; ++l) dot += self.grad[at(l)] * self.value[at(l)];
                for (std::size_t l = 0; l < len; ++l) {
                    g[at(l)] += self.value[at(l)] * (self.grad[at(l)] - dot);
                }
            }
        }
    });
}

Tensor log_clamped(const Tensor& a, double eps) {
    std::size_t clamped = 0;
    for (double x : a.values()) {
        if (x < eps) ++clamped;
    }
    if (clamped) g_clamp_count += clamped;
    return unary_op(a, [eps](double x) { return std::log(std::max(x, eps)); },
                    [eps](double x, double) { return x >= eps ? 1.0 / x : 0.0; });
}

Tensor sum(const Tensor& a) {
    double s = 0;
    for (double x : a.values()) s += x;
    auto node = make_node({1}, {s});
    return finish(node, {a}, [](Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        auto& g = p.ensure_grad();
        for (auto& x : g) x += self.grad[0];
    });
}

Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b) {
    if (w.rank() != 2) throw ShapeError("affine: weight must be rank 2");
    const std::size_t C = w.shape()[0], D = w.shape()[1];
    if (x.shape().back() != C) {
        throw ShapeError("affine: input " + shape_str(x.shape()) + " vs weight " +
                         shape_str(w.shape()));
    }
    Shape out_shape = x.shape();
    out_shape.back() = D;
    const std::size_t rows_count = x.size() / C;
    Tensor flat = reshape(x, {rows_count, C});
    Tensor y = add(matmul(flat, w), b);
    return reshape(y, out_shape);
}

Tensor dropout(const Tensor& x, double rate, bool training, std::mt19937_64& rng) {
    if (rate < 0.0 || rate >= 1.0) throw ArgumentError("dropout: rate must be in [0, 1)");
    if (!training || rate == 0.0) return x;  // exact identity in eval mode
    std::bernoulli_distribution keep(1.0 - rate);
    const double scale_up = 1.0 / (1.0 - rate);
    std::vector<double> mask(x.size());
    for (auto& m : mask) m = keep(rng) ? scale_up : 0.0;
    std::vector<double> out(x.size());
    const auto& xv = x.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * mask[i];
    auto node = make_node(x.shape(), std::move(out));
    return finish(node, {x}, [mask = std::move(mask)](Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        auto& g = p.ensure_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * mask[i];
    });
}

Tensor dilated_causal_conv(const Tensor& x, const Tensor& theta, std::size_t dilation) {
    if (dilation < 1) throw ArgumentError("dilated_causal_conv: dilation must be >= 1");
    if (theta.rank() != 2) throw ShapeError("dilated_causal_conv: filter must be D x J");
    const bool rank2 = x.rank() == 2;
    if (!rank2 && x.rank() != 3) {
        throw ShapeError("dilated_causal_conv: input must be rank 2 or 3, got " +
                         shape_str(x.shape()));
    }
    const std::size_t T = x.shape()[0];
    const std::size_t N = rank2 ? 1 : x.shape()[1];
    const std::size_t D = x.shape().back();
    const std::size_t J = theta.shape()[1];
    if (theta.shape()[0] != D) {
        throw ShapeError("dilated_causal_conv: filter " + shape_str(theta.shape()) +
                         " vs channels " + std::to_string(D));
    }
    const auto& xv = x.values();
    const auto& th = theta.values();
    std::vector<double> out(x.size(), 0.0);
    auto at = [N, D](std::size_t t, std::size_t n, std::size_t d) { return (t * N + n) * D + d; };
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t n = 0; n < N; ++n) {
            for (std::size_t d = 0; d < D; ++d) {
                double acc = 0;
                for (std::size_t j = 0; j < J; ++j) {
                    const std::size_t back = dilation * j;
                    if (back > t) break;
                    acc += th[d * J + j] * xv[at(t - back, n, d)];
                }
                out[at(t, n, d)] = acc;
            }
        }
    }
    auto node = make_node(x.shape(), std::move(out));
    return finish(node, {x, theta}, [T, N, D, J, dilation, at](Node& self) {
        auto& px = *self.parents[0];
        auto& pt = *self.parents[1];
        if (px.requires_grad) {
            auto& gx = px.ensure_grad();
            for (std::size_t t = 0; t < T; ++t)
                for (std::size_t n = 0; n < N; ++n)
                    for (std::size_t d = 0; d < D; ++d) {
                        const double g = self.grad[at(t, n, d)];
                        if (g == 0.0) continue;
                        for (std::size_t j = 0; j < J; ++j) {
                            const std::size_t back = dilation * j;
                            if (back > t) break;
                            gx[at(t - back, n, d)] += g * pt.value[d * J + j];
                        }
                    }
        }
        if (pt.requires_grad) {
            auto& gt = pt.ensure_grad();
            for (std::size_t t = 0; t < T; ++t)
                for (std::size_t n = 0; n < N; ++n)
                    for (std::size_t d = 0; d < D; ++d) {
                        const double g = self.grad[at(t, n, d)];
                        if (g == 0.0) continue;
                        for (std::size_t j = 0; j < J; ++j) {
                            const std::size_t back = dilation * j;
                            if (back > t) break;
                            gt[d * J + j] += g * px.value[at(t - back, n, d)];
                        }
                    }
        }
    });
}

Tensor rows(const Tensor& table, const std::vector<std::size_t>& indices) {
    if (table.rank() != 2) throw ShapeError("rows: table must be rank 2");
    const std::size_t R = table.shape()[0], D = table.shape()[1];
    for (std::size_t i : indices) {
        if (i >= R) throw RangeError("rows: index " + std::to_string(i) + " out of range");
    }
    std::vector<double> out(indices.size() * D);
    const auto& tv = table.values();
    for (std::size_t r = 0; r < indices.size(); ++r) {
        std::copy(&tv[indices[r] * D], &tv[indices[r] * D] + D, &out[r * D]);
    }
    auto node = make_node({indices.size(), D}, std::move(out));
    return finish(node, {table}, [indices, D](Node& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        auto& g = p.ensure_grad();
        for (std::size_t r = 0; r < indices.size(); ++r) {
            for (std::size_t d = 0; d < D; ++d) g[indices[r] * D + d] += self.grad[r * D + d];
        }
    });
}

// ---- fused scaled-dot attention --------------------------------------------

namespace {

struct AttnSlice {
    // projected operands and softmax weights, cached for the backward pass
    std::vector<double> qp, kp, vp, attn;
};

// One attention evaluation on row-major buffers. P query rows, Pk key rows,
// d input dim, da projected dim. Reductions over the key axis use sorted
// summation so a permutation of key rows permutes outputs bit-exactly.
AttnSlice attention_forward(const double* q, std::size_t P, const double* k, const double* v,
                            std::size_t Pk, std::size_t d, const double* wq, const double* wk,
                            const double* wv, std::size_t da, double* out) {
    AttnSlice s;
    s.qp.assign(P * da, 0.0);
    s.kp.assign(Pk * da, 0.0);
    s.vp.assign(Pk * da, 0.0);
    auto project = [d, da](const double* src, std::size_t rows_n, const double* w,
                           std::vector<double>& dst) {
        for (std::size_t i = 0; i < rows_n; ++i)
            for (std::size_t c = 0; c < d; ++c) {
                const double x = src[i * d + c];
                if (x == 0.0) continue;
                for (std::size_t j = 0; j < da; ++j) dst[i * da + j] += x * w[c * da + j];
            }
    };
    project(q, P, wq, s.qp);
    project(k, Pk, wk, s.kp);
    project(v, Pk, wv, s.vp);

    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    s.attn.assign(P * Pk, 0.0);
    std::vector<double> buf(Pk);
    for (std::size_t i = 0; i < P; ++i) {
        double mx = -1e300;
        for (std::size_t j = 0; j < Pk; ++j) {
            double dot = 0;
            for (std::size_t a = 0; a < da; ++a) dot += s.qp[i * da + a] * s.kp[j * da + a];
            s.attn[i * Pk + j] = dot * inv_sqrt_d;
            mx = std::max(mx, s.attn[i * Pk + j]);
        }
        for (std::size_t j = 0; j < Pk; ++j) {
            buf[j] = std::exp(s.attn[i * Pk + j] - mx);
            s.attn[i * Pk + j] = buf[j];
        }
        std::vector<double> sorted = buf;
        const double denom = stable_sum(sorted);
        for (std::size_t j = 0; j < Pk; ++j) s.attn[i * Pk + j] /= denom;
        for (std::size_t a = 0; a < da; ++a) {
            for (std::size_t j = 0; j < Pk; ++j) buf[j] = s.attn[i * Pk + j] * s.vp[j * da + a];
            std::vector<double> addends = buf;
            out[i * da + a] = stable_sum(addends);
        }
    }
    return s;
}

// Accumulates input and projection gradients for one slice.
void attention_backward(const AttnSlice& s, const double* q, std::size_t P, const double* k,
                        const double* v, std::size_t Pk, std::size_t d, const double* wq,
                        const double* wk, const double* wv, std::size_t da, const double* dout,
                        double* dq, double* dk, double* dv, double* dwq, double* dwk,
                        double* dwv) {
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(d));
    std::vector<double> dqp(P * da, 0.0), dkp(Pk * da, 0.0), dvp(Pk * da, 0.0);
    std::vector<double> dattn(Pk);
    for (std::size_t i = 0; i < P; ++i) {
        // dV' and dA
        for (std::size_t j = 0; j < Pk; ++j) {
            double acc = 0;
            const double aij = s.attn[i * Pk + j];
            for (std::size_t a = 0; a < da; ++a) {
                acc += dout[i * da + a] * s.vp[j * da + a];
                dvp[j * da + a] += aij * dout[i * da + a];
            }
            dattn[j] = acc;
        }
        // softmax jacobian
        double dot = 0;
        for (std::size_t j = 0; j < Pk; ++j) dot += dattn[j] * s.attn[i * Pk + j];
        for (std::size_t j = 0; j < Pk; ++j) {
            const double ds = s.attn[i * Pk + j] * (dattn[j] - dot) * inv_sqrt_d;
            for (std::size_t a = 0; a < da; ++a) {
                dqp[i * da + a] += ds * s.kp[j * da + a];
                dkp[j * da + a] += ds * s.qp[i * da + a];
            }
        }
    }
    auto unproject = [d, da](const double* dproj, std::size_t rows_n, const double* src,
                             const double* w, double* dsrc, double* dw) {
        for (std::size_t i = 0; i < rows_n; ++i)
            for (std::size_t c = 0; c < d; ++c) {
                double acc = 0;
                for (std::size_t j = 0; j < da; ++j) acc += dproj[i * da + j] * w[c * da + j];
                if (dsrc) dsrc[i * d + c] += acc;
                if (dw) {
                    const double x = src[i * d + c];
                    if (x != 0.0) {
                        for (std::size_t j = 0; j < da; ++j) dw[c * da + j] += x * dproj[i * da + j];
                    }
                }
            }
    };
    unproject(dqp.data(), P, q, wq, dq, dwq);
    unproject(dkp.data(), Pk, k, wk, dk, dwk);
    unproject(dvp.data(), Pk, v, wv, dv, dwv);
}

void check_projection(const Tensor& w, std::size_t d, const char* what) {
    if (w.rank() != 2 || w.shape()[0] != d) {
        throw ShapeError(std::string("attention: ") + what + " " + shape_str(w.shape()) +
                         " incompatible with input dim " + std::to_string(d));
    }
}

}  // namespace

Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v, const Tensor& wq,
                            const Tensor& wk, const Tensor& wv) {
    if (q.rank() != 2 || k.rank() != 2 || v.rank() != 2) {
        throw ShapeError("scaled_dot_attention: operands must be rank 2");
    }
    const std::size_t d = q.shape()[1];
    if (d == 0) throw ArgumentError("scaled_dot_attention: zero feature dimension");
    if (k.shape()[1] != d || v.shape()[1] != d || k.shape()[0] != v.shape()[0]) {
        throw ShapeError("scaled_dot_attention: key/value shapes " + shape_str(k.shape()) + ", " +
                         shape_str(v.shape()) + " incompatible with query " + shape_str(q.shape()));
    }
    check_projection(wq, d, "W^Q");
    check_projection(wk, d, "W^K");
    check_projection(wv, d, "W^V");
    const std::size_t da = wq.shape()[1];
    if (wk.shape()[1] != da || wv.shape()[1] != da) {
        throw ShapeError("scaled_dot_attention: projection output dims differ");
    }
    const std::size_t P = q.shape()[0], Pk = k.shape()[0];
    std::vector<double> out(P * da, 0.0);
    auto cache = std::make_shared<AttnSlice>(attention_forward(
        q.values().data(), P, k.values().data(), v.values().data(), Pk, d, wq.values().data(),
        wk.values().data(), wv.values().data(), da, out.data()));
    auto node = make_node({P, da}, std::move(out));
    return finish(node, {q, k, v, wq, wk, wv}, [cache, P, Pk, d, da](Node& self) {
        auto grad_of = [](Node& n) -> double* {
            return n.requires_grad ? n.ensure_grad().data() : nullptr;
        };
        attention_backward(*cache, self.parents[0]->value.data(), P, self.parents[1]->value.data(),
                           self.parents[2]->value.data(), Pk, d, self.parents[3]->value.data(),
                           self.parents[4]->value.data(), self.parents[5]->value.data(), da,
                           self.grad.data(), grad_of(*self.parents[0]), grad_of(*self.parents[1]),
                           grad_of(*self.parents[2]), grad_of(*self.parents[3]),
                           grad_of(*self.parents[4]), grad_of(*self.parents[5]));
    });
}

Tensor attention_batched(const Tensor& q_src, const Tensor& kv_src, const Tensor& wq,
                         const Tensor& wk, const Tensor& wv, std::size_t batch_axis) {
    if (q_src.rank() != 3 || kv_src.rank() != 3 || q_src.shape() != kv_src.shape()) {
        throw ShapeError("attention_batched: sources must share a rank-3 shape, got " +
                         shape_str(q_src.shape()) + " and " + shape_str(kv_src.shape()));
    }
    if (batch_axis > 1) throw ArgumentError("attention_batched: batch_axis must be 0 or 1");
    const std::size_t A = q_src.shape()[0], B = q_src.shape()[1], D = q_src.shape()[2];
    check_projection(wq, D, "W^Q");
    check_projection(wk, D, "W^K");
    check_projection(wv, D, "W^V");
    const std::size_t da = wq.shape()[1];
    if (da != D || wk.shape()[1] != da || wv.shape()[1] != da) {
        throw ShapeError("attention_batched: projections must be square D x D");
    }
    const std::size_t batches = batch_axis == 0 ? A : B;
    const std::size_t positions = batch_axis == 0 ? B : A;

    auto gather = [A, B, D, batch_axis](const std::vector<double>& src, std::size_t b,
                                        std::vector<double>& dst) {
        if (batch_axis == 0) {
            std::copy(&src[b * B * D], &src[b * B * D] + B * D, dst.begin());
        } else {
            for (std::size_t a = 0; a < A; ++a) {
                std::copy(&src[(a * B + b) * D], &src[(a * B + b) * D] + D, &dst[a * D]);
            }
        }
    };

    std::vector<double> out(q_src.size(), 0.0);
    auto caches = std::make_shared<std::vector<AttnSlice>>();
    caches->reserve(batches);
    std::vector<double> qbuf(positions * D), kvbuf(positions * D), obuf(positions * D);
    for (std::size_t b = 0; b < batches; ++b) {
        gather(q_src.values(), b, qbuf);
        gather(kv_src.values(), b, kvbuf);
        caches->push_back(attention_forward(qbuf.data(), positions, kvbuf.data(), kvbuf.data(),
                                            positions, D, wq.values().data(), wk.values().data(),
                                            wv.values().data(), da, obuf.data()));
        if (batch_axis == 0) {
            std::copy(obuf.begin(), obuf.end(), &out[b * B * D]);
        } else {
            for (std::size_t a = 0; a < A; ++a) {
                std::copy(&obuf[a * D], &obuf[a * D] + D, &out[(a * B + b) * D]);
            }
        }
    }
    auto node = make_node(q_src.shape(), std::move(out));
    return finish(node, {q_src, kv_src, wq, wk, wv},
                  [caches, A, B, D, da, batch_axis, batches, positions, gather](Node& self) {
        auto& pq = *self.parents[0];
        auto& pkv = *self.parents[1];
        const bool same_source = self.parents[0] == self.parents[1];
        double* gq = pq.requires_grad ? pq.ensure_grad().data() : nullptr;
        double* gkv = pkv.requires_grad ? pkv.ensure_grad().data() : nullptr;
        double* gwq = self.parents[2]->requires_grad ? self.parents[2]->ensure_grad().data() : nullptr;
        double* gwk = self.parents[3]->requires_grad ? self.parents[3]->ensure_grad().data() : nullptr;
        double* gwv = self.parents[4]->requires_grad ? self.parents[4]->ensure_grad().data() : nullptr;

        std::vector<double> qbuf(positions * D), kvbuf(positions * D), dobuf(positions * D);
        std::vector<double> dq(positions * D), dkv(positions * D);
        for (std::size_t b = 0; b < batches; ++b) {
            gather(pq.value, b, qbuf);
            gather(pkv.value, b, kvbuf);
            if (batch_axis == 0) {
                std::copy(&self.grad[b * B * D], &self.grad[b * B * D] + B * D, dobuf.begin());
            } else {
                for (std::size_t a = 0; a < A; ++a) {
                    std::copy(&self.grad[(a * B + b) * D], &self.grad[(a * B + b) * D] + D,
                              &dobuf[a * D]);
                }
            }
            std::fill(dq.begin(), dq.end(), 0.0);
            std::fill(dkv.begin(), dkv.end(), 0.0);
            attention_backward((*caches)[b], qbuf.data(), positions, kvbuf.data(), kvbuf.data(),
                               positions, D, self.parents[2]->value.data(),
                               self.parents[3]->value.data(), self.parents[4]->value.data(), da,
                               dobuf.data(), gq ? dq.data() : nullptr,
                               gkv ? dkv.data() : nullptr, gkv ? dkv.data() : nullptr, gwq, gwk,
                               gwv);
            auto scatter = [&](double* dst, const std::vector<double>& src) {
                if (!dst) return;
                if (batch_axis == 0) {
                    for (std::size_t i = 0; i < B * D; ++i) dst[b * B * D + i] += src[i];
                } else {
                    for (std::size_t a = 0; a < A; ++a)
                        for (std::size_t d2 = 0; d2 < D; ++d2)
                            dst[(a * B + b) * D + d2] += src[a * D + d2];
                }
            };
            if (same_source && gq) {
                for (std::size_t i = 0; i < dq.size(); ++i) dq[i] += dkv[i];
                scatter(gq, dq);
            } else {
                scatter(gq, dq);
                scatter(gkv, dkv);
            }
        }
    });
}

Mat attention_weights(const Tensor& q, const Tensor& k, const Tensor& wq, const Tensor& wk) {
    const std::size_t d = q.shape()[1];
    check_projection(wq, d, "W^Q");
    check_projection(wk, d, "W^K");
    const std::size_t P = q.shape()[0], Pk = k.shape()[0], da = wq.shape()[1];
    std::vector<double> vp(Pk * da, 0.0);  // dummy values, we only read attn
    std::vector<double> wv_id(d * da, 0.0);
    std::vector<double> out(P * da, 0.0);
    AttnSlice s = attention_forward(q.values().data(), P, k.values().data(), k.values().data(), Pk,
                                    d, wq.values().data(), wk.values().data(), wv_id.data(), da,
                                    out.data());
    Mat w(P, Pk);
    w.v = s.attn;
    return w;
}

std::size_t clamp_count() { return g_clamp_count.load(); }
void reset_clamp_count() { g_clamp_count.store(0); }

void backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1) {
        throw ArgumentError("backward: loss must be a defined scalar tensor");
    }
    Node* root = loss.node().get();
    if (!root->requires_grad) return;  // nothing trainable upstream

    // reverse post-order over the tape
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
    visited.insert(root);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next].get();
            ++next;
            if (parent->requires_grad && !visited.count(parent)) {
                visited.insert(parent);
                stack.emplace_back(parent, 0);
            }
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }
    for (Node* n : order) n->ensure_grad();
    root->grad[0] = 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        if ((*it)->backward_fn) (*it)->backward_fn(**it);
    }
}

// ---- parameter store --------------------------------------------------------

ParameterStore::ParameterStore(std::uint64_t seed) : init_rng_(seed) {}

Tensor ParameterStore::param(const std::string& name, const Shape& shape) {
    auto it = params_.find(name);
    if (it != params_.end()) {
        if (it->second.shape() != shape) {
            throw ShapeError("parameter " + name + " registered as " +
                             shape_str(it->second.shape()) + ", requested " + shape_str(shape));
        }
        return it->second;
    }
    std::vector<double> init(shape_size(shape), 0.0);
    if (shape.size() >= 2) {
        const double fan_in = static_cast<double>(shape[shape.size() - 2]);
        const double fan_out = static_cast<double>(shape[shape.size() - 1]);
        const double bound = std::sqrt(6.0 / (fan_in + fan_out));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (auto& v : init) v = dist(init_rng_);
    }
    return param_from(name, shape, std::move(init));
}

Tensor ParameterStore::param_from(const std::string& name, const Shape& shape,
                                  std::vector<double> init) {
    auto it = params_.find(name);
    if (it != params_.end()) return it->second;
    Tensor t = Tensor::from_values(shape, std::move(init), true);
    params_.emplace(name, t);
    order_.push_back(name);
    return t;
}

bool ParameterStore::has(const std::string& name) const { return params_.count(name) > 0; }

Tensor ParameterStore::get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ArgumentError("unknown parameter " + name);
    return it->second;
}

void ParameterStore::set_values(const std::string& name, const std::vector<double>& values) {
    Tensor t = get(name);
    if (t.size() != values.size()) {
        throw ShapeError("set_values: parameter " + name + " holds " + std::to_string(t.size()) +
                         " values, got " + std::to_string(values.size()));
    }
    t.mutable_values() = values;
}

std::size_t ParameterStore::total_size() const {
    std::size_t n = 0;
    for (const auto& [name, t] : params_) n += t.size();
    return n;
}

void ParameterStore::zero_grad() {
    for (auto& [name, t] : params_) {
        auto& g = t.node()->ensure_grad();
        std::fill(g.begin(), g.end(), 0.0);
    }
}

void ParameterStore::save(const std::string& path, const std::string& meta_json) const {
    std::vector<tensor_file::Entry> entries;
    entries.reserve(order_.size());
    for (const auto& name : order_) {
        const Tensor& t = params_.at(name);
        entries.push_back({name, t.shape(), t.values()});
    }
    tensor_file::write(path, meta_json, entries);
}

std::string ParameterStore::load(const std::string& path) {
    auto file = tensor_file::read(path);
    params_.clear();
    order_.clear();
    for (auto& e : file.entries) param_from(e.name, e.shape, std::move(e.data));
    return file.meta;
}

void adam_step(ParameterStore& store, AdamState& state) {
    ++state.step;
    const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
    for (const auto& name : store.names()) {
        Tensor t = store.get(name);
        const auto& g = t.node()->ensure_grad();
        auto& m = state.m[name];
        auto& v = state.v[name];
        if (m.size() != g.size()) m.assign(g.size(), 0.0);
        if (v.size() != g.size()) v.assign(g.size(), 0.0);
        auto& vals = t.mutable_values();
        for (std::size_t i = 0; i < g.size(); ++i) {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            vals[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
        }
    }
}

}  // namespace stockformer::tensor
