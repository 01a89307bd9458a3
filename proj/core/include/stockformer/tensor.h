#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "stockformer/array.h"

namespace stockformer::tensor {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);
std::size_t shape_size(const Shape& s);

struct Node {
    Shape shape;
    std::vector<double> value;
    std::vector<double> grad;  // sized lazily, zero-filled
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;

    std::vector<double>& ensure_grad();
};

// Value-semantic handle onto a node of the computation tape. Ops build new
// nodes whose parents are their operands; freeing the final handle frees the
// tape, while parameter leaves live on in their store.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

    static Tensor from_values(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor scalar(double v);
    static Tensor from_mat(const Mat& m, bool requires_grad = false);
    static Tensor from_cube(const Cube& c, bool requires_grad = false);

    const Shape& shape() const { return node_->shape; }
    std::size_t size() const { return node_->value.size(); }
    std::size_t rank() const { return node_->shape.size(); }
    const std::vector<double>& values() const { return node_->value; }
    std::vector<double>& mutable_values() { return node_->value; }
    const std::vector<double>& grad() const;
    bool defined() const { return node_ != nullptr; }
    double item() const;

    std::shared_ptr<Node> node() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

// ---- core ops -------------------------------------------------------------

Tensor add(const Tensor& a, const Tensor& b);   // numpy-style broadcasting
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);   // elementwise, broadcasting
Tensor scale(const Tensor& a, double c);
Tensor neg(const Tensor& a);
Tensor matmul(const Tensor& a, const Tensor& b);  // 2-D
Tensor transpose(const Tensor& a);                // 2-D
Tensor reshape(const Tensor& a, Shape shape);
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
std::vector<Tensor> split(const Tensor& a, std::size_t axis, const std::vector<std::size_t>& sizes);
Tensor relu(const Tensor& a);
Tensor abs_val(const Tensor& a);
Tensor softmax(const Tensor& a, std::size_t axis);
// log(max(p, eps)); clamped entries get zero gradient and bump clamp_count().
Tensor log_clamped(const Tensor& a, double eps = 1e-12);
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// x (.. x C) * W (C x D) + b (D)
Tensor affine(const Tensor& x, const Tensor& w, const Tensor& b);
// Inverted dropout; identity (same node) when !training.
Tensor dropout(const Tensor& x, double rate, bool training, std::mt19937_64& rng);
// y[t,n,d] = sum_j theta[d,j] * x[t - c*j, n, d], x out of range treated as 0.
Tensor dilated_causal_conv(const Tensor& x, const Tensor& theta, std::size_t dilation);
// Gather rows of a 2-D table; backward scatter-adds.
Tensor rows(const Tensor& table, const std::vector<std::size_t>& indices);

// softmax((q Wq)(k Wk)^T / sqrt(d)) (v Wv) over 2-D operands (positions x d).
// Reductions along the position axis use value-sorted summation, making the
// output invariant to a consistent permutation of key positions.
Tensor scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                            const Tensor& wq, const Tensor& wk, const Tensor& wv);

// Batched attention over one axis of rank-3 inputs sharing one projection
// triple: batch_axis = 1 runs attention per stock over (T x D) slices,
// batch_axis = 0 per time step over (N x D) slices. q_src and kv_src must
// share shapes.
Tensor attention_batched(const Tensor& q_src, const Tensor& kv_src, const Tensor& wq,
                         const Tensor& wk, const Tensor& wv, std::size_t batch_axis);

// Post-softmax weight matrix for given 2-D inputs (inspection only, off-tape).
Mat attention_weights(const Tensor& q, const Tensor& k, const Tensor& wq, const Tensor& wk);

// Count of probabilities clamped by log_clamped since the last reset.
std::size_t clamp_count();
void reset_clamp_count();

// Reverse pass from a scalar loss. Accumulates into node.grad of every
// reachable node that requires gradients; caller zeroes parameter grads
// beforehand (ParameterStore::zero_grad).
void backward(const Tensor& loss);

// ---- parameters -----------------------------------------------------------

class ParameterStore {
public:
    explicit ParameterStore(std::uint64_t seed);

    // Create-or-get. New parameters of rank >= 2 draw scaled-uniform values
    // (+-sqrt(6/(fan_in+fan_out))); rank-1 parameters start at zero.
    Tensor param(const std::string& name, const Shape& shape);
    // Create-or-get with explicit initial values (embedding tables, tests).
    Tensor param_from(const std::string& name, const Shape& shape, std::vector<double> init);

    bool has(const std::string& name) const;
    Tensor get(const std::string& name) const;
    void set_values(const std::string& name, const std::vector<double>& values);
    const std::vector<std::string>& names() const { return order_; }
    std::size_t total_size() const;

    void zero_grad();

    void save(const std::string& path, const std::string& meta_json) const;
    // Replaces the store contents; returns the file's meta string.
    std::string load(const std::string& path);

private:
    std::map<std::string, Tensor> params_;
    std::vector<std::string> order_;
    std::mt19937_64 init_rng_;
};

struct AdamState {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double decay = 0.1;  // multiplied into lr on plateau
    std::int64_t step = 0;
    std::map<std::string, std::vector<double>> m;
    std::map<std::string, std::vector<double>> v;

    void decay_lr() { lr *= decay; }
};

// One Adam update over every parameter in the store, reading node grads.
void adam_step(ParameterStore& store, AdamState& state);

}  // namespace stockformer::tensor
