#include "stockformer/model.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include <json.hpp>

#include "stockformer/errors.h"
#include "stockformer/graphs.h"

namespace stockformer::model {

using tensor::Tensor;

void ModelConfig::validate() const {
    if (t2 >= t1) throw ConfigError("model: T2 must be smaller than T1");
    if (stocks < 1) throw ConfigError("model: stock count must be >= 1");
    if (input_channels < 2) throw ConfigError("model: need at least return and trend channels");
    if (hidden_dim < 1 || layers < 1 || kernel < 1) {
        throw ConfigError("model: hidden_dim, layers and kernel must be >= 1");
    }
    if (heads != 1) throw ConfigError("model: only a single attention head is supported");
    if (hidden_dim % heads != 0) throw ConfigError("model: hidden_dim must divide by heads");
    if (lambda_cla < 0) throw ConfigError("model: lambda must be >= 0");
    if (dropout < 0 || dropout >= 1) throw ConfigError("model: dropout must be in [0, 1)");
    if (batch < 1) throw ConfigError("model: batch must be >= 1");
}

std::string ModelConfig::to_json() const {
    nlohmann::json j;
    j["t1"] = t1;
    j["t2"] = t2;
    j["stocks"] = stocks;
    j["input_channels"] = input_channels;
    j["hidden_dim"] = hidden_dim;
    j["layers"] = layers;
    j["heads"] = heads;
    j["kernel"] = kernel;
    j["lambda"] = lambda_cla;
    j["dropout"] = dropout;
    j["lr"] = lr;
    j["decay"] = decay;
    j["epochs"] = epochs;
    j["batch"] = batch;
    j["patience"] = patience;
    j["seed"] = seed;
    j["embed_smoothing"] = embed_smoothing;
    j["struc2vec_iters"] = struc2vec_iters;
    j["struc2vec_tol"] = struc2vec_tol;
    j["ablation"] = {{"no_decouple", ablation.no_decouple}, {"no_temporal", ablation.no_temporal},
                     {"no_graph", ablation.no_graph},       {"no_fusion", ablation.no_fusion},
                     {"no_reg_head", ablation.no_reg_head}, {"no_cla_head", ablation.no_cla_head}};
    return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& json) {
    nlohmann::json j = nlohmann::json::parse(json);
    ModelConfig c;
    c.t1 = j.at("t1");
    c.t2 = j.at("t2");
    c.stocks = j.at("stocks");
    c.input_channels = j.at("input_channels");
    c.hidden_dim = j.at("hidden_dim");
    c.layers = j.at("layers");
    c.heads = j.at("heads");
    c.kernel = j.at("kernel");
    c.lambda_cla = j.at("lambda");
    c.dropout = j.at("dropout");
    c.lr = j.at("lr");
    c.decay = j.at("decay");
    c.epochs = j.at("epochs");
    c.batch = j.at("batch");
    c.patience = j.at("patience");
    c.seed = j.at("seed");
    c.embed_smoothing = j.at("embed_smoothing");
    c.struc2vec_iters = j.at("struc2vec_iters");
    c.struc2vec_tol = j.at("struc2vec_tol");
    const auto& a = j.at("ablation");
    c.ablation.no_decouple = a.at("no_decouple");
    c.ablation.no_temporal = a.at("no_temporal");
    c.ablation.no_graph = a.at("no_graph");
    c.ablation.no_fusion = a.at("no_fusion");
    c.ablation.no_reg_head = a.at("no_reg_head");
    c.ablation.no_cla_head = a.at("no_cla_head");
    return c;
}

std::pair<Cube, Cube> decouple_window(const Cube& input, const wavelet::FilterPair& filters,
                                      bool no_decouple) {
    if (no_decouple) return {input, input};
    const std::size_t T = input.d0, N = input.d1;
    Mat returns(T, N);
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t n = 0; n < N; ++n) returns(t, n) = input(t, n, 0);
    const auto comps = wavelet::decouple_returns(returns, filters);
    Cube low = input, high = input;
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t n = 0; n < N; ++n) {
            low(t, n, 0) = comps.low(t, n);
            high(t, n, 0) = comps.high(t, n);
        }
    }
    return {std::move(low), std::move(high)};
}

Mat low_frequency_targets(const Mat& joint_returns, std::size_t t2,
                          const wavelet::FilterPair& filters) {
    if (joint_returns.rows <= t2) {
        throw ArgumentError("low_frequency_targets: series shorter than horizon");
    }
    const auto comps = wavelet::decouple_returns(joint_returns, filters);
    Mat out(t2, joint_returns.cols);
    const std::size_t start = joint_returns.rows - t2;
    for (std::size_t t = 0; t < t2; ++t)
        for (std::size_t n = 0; n < joint_returns.cols; ++n)
            out(t, n) = comps.low(start + t, n);
    return out;
}

LossBreakdown multi_supervision_loss(const PredictionBundle& bundle, const Mat& target_return,
                                     const Mat& target_lowfreq, const Mat& label_trend,
                                     const Mat& label_lowfreq, double lambda_cla) {
    const std::size_t T2 = target_return.rows, N = target_return.cols;
    for (const Mat* m : {&bundle.y_reg, &bundle.p_cla, &bundle.y_l_reg, &bundle.p_l_cla,
                         &target_lowfreq, &label_trend, &label_lowfreq}) {
        if (m->rows != T2 || m->cols != N) {
            throw ShapeError("multi_supervision_loss: operand shape mismatch");
        }
    }
    constexpr double kEps = 1e-12;
    const double denom = static_cast<double>(T2 * N);
    double reg_sum = 0, cla_sum = 0;
    for (std::size_t t = 0; t < T2; ++t) {
        for (std::size_t n = 0; n < N; ++n) {
            reg_sum += std::fabs(target_return(t, n) - bundle.y_reg(t, n)) +
                       std::fabs(target_lowfreq(t, n) - bundle.y_l_reg(t, n));
            const double p1 = bundle.p_cla(t, n);
            const double pl1 = bundle.p_l_cla(t, n);
            const double p_true = label_trend(t, n) > 0.5 ? p1 : 1.0 - p1;
            const double pl_true = label_lowfreq(t, n) > 0.5 ? pl1 : 1.0 - pl1;
            cla_sum += -std::log(std::max(p_true, kEps)) - std::log(std::max(pl_true, kEps));
        }
    }
    LossBreakdown out;
    out.reg = reg_sum * (1.0 / denom);
    out.cla = cla_sum * (1.0 / denom);
    out.total = out.reg + lambda_cla * out.cla;
    return out;
}

Stockformer::Stockformer(ModelConfig cfg, wavelet::FilterPair filters)
    : cfg_(std::move(cfg)), filters_(std::move(filters)) {
    cfg_.validate();
}

void Stockformer::for_each_parameter(
    const std::function<void(const std::string&, const tensor::Shape&)>& fn) const {
    const std::size_t C = cfg_.input_channels, D = cfg_.hidden_dim, J = cfg_.kernel;
    const std::size_t N = cfg_.stocks, T1 = cfg_.t1, T2 = cfg_.t2;
    fn("decouple.low.w", {C, D});
    fn("decouple.low.b", {D});
    fn("decouple.high.w", {C, D});
    fn("decouple.high.b", {D});
    fn("embed.temporal", {static_cast<std::size_t>(graphs::kSlotNodes), D});
    fn("embed.spatial", {N, D});
    for (std::size_t l = 0; l < cfg_.layers; ++l) {
        const std::string p = "enc" + std::to_string(l);
        for (const char* w : {"wq", "wk", "wv"}) fn(p + ".low.tatt." + w, {D, D});
        fn(p + ".high.conv.theta", {D, J});
        fn(p + ".high.conv.b", {D});
        for (const char* w : {"wq", "wk", "wv"}) fn(p + ".low.gat." + w, {D, D});
        for (const char* w : {"wq", "wk", "wv"}) fn(p + ".high.gat." + w, {D, D});
    }
    fn("dec.low.pred.w", {T1, T2});
    fn("dec.low.pred.b", {T2});
    fn("dec.high.pred.w", {T1, T2});
    fn("dec.high.pred.b", {T2});
    for (const char* w : {"wq", "wk", "wv"}) fn(std::string("dec.fuse.self.") + w, {D, D});
    for (const char* w : {"wq", "wk", "wv"}) fn(std::string("dec.fuse.cross.") + w, {D, D});
    fn("head.reg.w", {D, 1});
    fn("head.reg.b", {1});
    fn("head.cla.w", {D, 2});
    fn("head.cla.b", {2});
    fn("head.lreg.w", {D, 1});
    fn("head.lreg.b", {1});
    fn("head.lcla.w", {D, 2});
    fn("head.lcla.b", {2});
}

void Stockformer::init_params(tensor::ParameterStore& store, const Mat& temporal_init,
                              const Mat& spatial_init) const {
    for_each_parameter([&](const std::string& name, const tensor::Shape& shape) {
        if (name == "embed.temporal" && !temporal_init.empty()) {
            if (temporal_init.rows != shape[0] || temporal_init.cols != shape[1]) {
                throw ShapeError("init_params: temporal embedding is " +
                                 std::to_string(temporal_init.rows) + "x" +
                                 std::to_string(temporal_init.cols));
            }
            store.param_from(name, shape, temporal_init.v);
        } else if (name == "embed.spatial" && !spatial_init.empty()) {
            if (spatial_init.rows != shape[0] || spatial_init.cols != shape[1]) {
                throw ShapeError("init_params: spatial embedding is " +
                                 std::to_string(spatial_init.rows) + "x" +
                                 std::to_string(spatial_init.cols));
            }
            store.param_from(name, shape, spatial_init.v);
        } else {
            store.param(name, shape);
        }
    });
}

void Stockformer::check_params(const tensor::ParameterStore& store) const {
    for_each_parameter([&](const std::string& name, const tensor::Shape& shape) {
        if (!store.has(name)) {
            throw CompatibilityError("checkpoint is missing parameter " + name);
        }
        if (store.get(name).shape() != shape) {
            throw CompatibilityError("checkpoint parameter " + name + " has shape " +
                                     tensor::shape_str(store.get(name).shape()) + ", expected " +
                                     tensor::shape_str(shape));
        }
    });
}

std::pair<Tensor, Tensor> Stockformer::decoupling_layer(const Window& w,
                                                        tensor::ParameterStore& store) const {
    auto [xl_raw, xh_raw] = decouple_window(w.input, filters_, cfg_.ablation.no_decouple);
    Tensor xl = tensor::affine(Tensor::from_cube(xl_raw), store.get("decouple.low.w"),
                               store.get("decouple.low.b"));
    Tensor xh = tensor::affine(Tensor::from_cube(xh_raw), store.get("decouple.high.w"),
                               store.get("decouple.high.b"));
    return {xl, xh};
}

Stockformer::Outputs Stockformer::forward(const Window& w, tensor::ParameterStore& store,
                                          bool training, std::mt19937_64& rng) const {
    const std::size_t T1 = cfg_.t1, T2 = cfg_.t2, N = cfg_.stocks, D = cfg_.hidden_dim;
    if (w.input.d0 != T1 || w.input.d1 != N || w.input.d2 != cfg_.input_channels) {
        throw ShapeError("forward: window " + std::to_string(w.input.d0) + "x" +
                         std::to_string(w.input.d1) + "x" + std::to_string(w.input.d2) +
                         " does not match the model configuration");
    }
    if (w.slot_ids.size() != T1) throw ShapeError("forward: window needs T1 slot ids");
    const double rate = cfg_.dropout;
    const auto& abl = cfg_.ablation;

    auto [xl, xh] = decoupling_layer(w, store);

    Tensor rho_spa, rho_tem;
    if (!abl.no_graph) {
        rho_spa = tensor::reshape(store.get("embed.spatial"), {1, N, D});
        rho_tem = tensor::reshape(tensor::rows(store.get("embed.temporal"), w.slot_ids), {T1, 1, D});
    }

    for (std::size_t l = 0; l < cfg_.layers; ++l) {
        const std::string p = "enc" + std::to_string(l);
        if (!abl.no_temporal) {
            // Eq.-style temporal attention on the low branch, per stock
            Tensor tatt = tensor::attention_batched(xl, xl, store.get(p + ".low.tatt.wq"),
                                                    store.get(p + ".low.tatt.wk"),
                                                    store.get(p + ".low.tatt.wv"), 1);
            xl = tensor::add(xl, tensor::dropout(tatt, rate, training, rng));
            // dilated causal conv + relu on the high branch
            const std::size_t dilation = std::size_t{1} << l;
            Tensor conv = tensor::dilated_causal_conv(xh, store.get(p + ".high.conv.theta"), dilation);
            conv = tensor::relu(tensor::add(conv, store.get(p + ".high.conv.b")));
            xh = tensor::add(xh, tensor::dropout(conv, rate, training, rng));
        }
        auto graph_block = [&](const Tensor& x, const std::string& prefix) {
            Tensor tilde = abl.no_graph ? x : tensor::add(tensor::add(x, rho_spa), rho_tem);
            Tensor gat = tensor::attention_batched(tilde, tilde, store.get(prefix + ".wq"),
                                                   store.get(prefix + ".wk"),
                                                   store.get(prefix + ".wv"), 0);
            return tensor::add(x, tensor::dropout(gat, rate, training, rng));
        };
        xl = graph_block(xl, p + ".low.gat");
        xh = graph_block(xh, p + ".high.gat");
    }

    // predictors: affine over the time axis, T1 -> T2
    auto time_affine = [&](const Tensor& x, const std::string& prefix) {
        Tensor flat = tensor::transpose(tensor::reshape(x, {T1, N * D}));  // (N*D, T1)
        Tensor mapped = tensor::matmul(flat, store.get(prefix + ".w"));    // (N*D, T2)
        Tensor shaped = tensor::reshape(tensor::transpose(mapped), {T2, N, D});
        return tensor::add(shaped, tensor::reshape(store.get(prefix + ".b"), {T2, 1, 1}));
    };
    Tensor yl_f = time_affine(xl, "dec.low.pred");
    Tensor yh_f = time_affine(xh, "dec.high.pred");

    Tensor fused;
    if (abl.no_fusion) {
        fused = tensor::add(yl_f, yh_f);
    } else {
        Tensor self_att = tensor::attention_batched(yl_f, yl_f, store.get("dec.fuse.self.wq"),
                                                    store.get("dec.fuse.self.wk"),
                                                    store.get("dec.fuse.self.wv"), 1);
        Tensor cross_att = tensor::attention_batched(yl_f, yh_f, store.get("dec.fuse.cross.wq"),
                                                     store.get("dec.fuse.cross.wk"),
                                                     store.get("dec.fuse.cross.wv"), 1);
        fused = tensor::add(self_att, cross_att);
    }
    fused = tensor::dropout(fused, rate, training, rng);

    auto reg_head = [&](const Tensor& rep, const std::string& prefix) {
        return tensor::reshape(
            tensor::affine(rep, store.get(prefix + ".w"), store.get(prefix + ".b")), {T2, N});
    };
    auto cla_head = [&](const Tensor& rep, const std::string& prefix) {
        Tensor probs = tensor::softmax(
            tensor::affine(rep, store.get(prefix + ".w"), store.get(prefix + ".b")), 2);
        auto parts = tensor::split(probs, 2, {1, 1});
        return tensor::reshape(parts[1], {T2, N});  // uptrend probability
    };

    Outputs out;
    out.y_reg = reg_head(fused, "head.reg");
    out.p_cla = cla_head(fused, "head.cla");
    out.y_l_reg = reg_head(yl_f, "head.lreg");
    out.p_l_cla = cla_head(yl_f, "head.lcla");
    return out;
}

Stockformer::LossTensors Stockformer::loss(const Outputs& out, const Window& w,
                                           bool full_form) const {
    const std::size_t T2 = cfg_.t2, N = cfg_.stocks;
    const double inv = 1.0 / static_cast<double>(T2 * N);
    const bool use_reg = full_form || !cfg_.ablation.no_reg_head;
    const bool use_cla = full_form || !cfg_.ablation.no_cla_head;

    LossTensors lt;
    if (use_reg) {
        Tensor dr = tensor::abs_val(tensor::sub(out.y_reg, Tensor::from_mat(w.target_return)));
        Tensor dl = tensor::abs_val(tensor::sub(out.y_l_reg, Tensor::from_mat(w.target_lowfreq)));
        lt.reg = tensor::scale(tensor::add(tensor::sum(dr), tensor::sum(dl)), inv);
    } else {
        lt.reg = Tensor::scalar(0.0);
    }
    if (use_cla) {
        auto cross_entropy_sum = [](const Tensor& p1, const Mat& labels) {
            Tensor y = Tensor::from_mat(labels);
            Tensor one = Tensor::from_values({1}, {1.0});
            Tensor p0 = tensor::sub(one, p1);
            Tensor y0 = tensor::sub(one, y);
            Tensor ll = tensor::add(tensor::mul(y, tensor::log_clamped(p1)),
                                    tensor::mul(y0, tensor::log_clamped(p0)));
            return tensor::neg(tensor::sum(ll));
        };
        Tensor ce = tensor::add(cross_entropy_sum(out.p_cla, w.label_trend),
                                cross_entropy_sum(out.p_l_cla, w.label_lowfreq));
        lt.cla = tensor::scale(ce, inv);
    } else {
        lt.cla = Tensor::scalar(0.0);
    }
    lt.total = tensor::add(lt.reg, tensor::scale(lt.cla, cfg_.lambda_cla));
    return lt;
}

PredictionBundle Stockformer::predict(const Window& w, tensor::ParameterStore& store) const {
    check_params(store);
    std::mt19937_64 rng(0);  // dropout is identity in eval mode
    Outputs out = forward(w, store, /*training=*/false, rng);
    const std::size_t T2 = cfg_.t2, N = cfg_.stocks;
    PredictionBundle b;
    auto to_mat = [T2, N](const Tensor& t) {
        Mat m(T2, N);
        m.v = t.values();
        for (double v : m.v) {
            if (!std::isfinite(v)) throw ValidationError("predict: non-finite model output");
        }
        return m;
    };
    b.y_reg = to_mat(out.y_reg);
    b.p_cla = to_mat(out.p_cla);
    b.y_l_reg = to_mat(out.y_l_reg);
    b.p_l_cla = to_mat(out.p_l_cla);
    return b;
}

LossBreakdown Stockformer::evaluate_loss(const Window& w, tensor::ParameterStore& store,
                                         bool full_form) const {
    std::mt19937_64 rng(0);
    Outputs out = forward(w, store, /*training=*/false, rng);
    LossTensors lt = loss(out, w, full_form);
    return {lt.total.item(), lt.reg.item(), lt.cla.item()};
}

TrainResult train(const Stockformer& model, const std::vector<Window>& train_windows,
                  const std::vector<Window>& val_windows, tensor::ParameterStore& store) {
    if (train_windows.empty()) throw ArgumentError("train: need at least one training window");
    const ModelConfig& cfg = model.config();
    std::mt19937_64 rng(cfg.seed);

    tensor::AdamState adam;
    adam.lr = cfg.lr;
    adam.decay = cfg.decay;

    auto mean_eval = [&](const std::vector<Window>& ws) {
        double s = 0;
        for (const auto& w : ws) s += model.evaluate_loss(w, store).total;
        return s / static_cast<double>(ws.size());
    };
    auto snapshot = [&store]() {
        std::map<std::string, std::vector<double>> snap;
        for (const auto& name : store.names()) snap[name] = store.get(name).values();
        return snap;
    };

    TrainResult result;
    const bool has_val = !val_windows.empty();
    double best = has_val ? mean_eval(val_windows) : mean_eval(train_windows);
    auto best_params = snapshot();
    result.best_epoch = 0;
    result.best_val = best;
    std::size_t stale = 0;

    std::vector<std::size_t> order(train_windows.size());
    std::iota(order.begin(), order.end(), 0);

    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double epoch_sum = 0;
        std::size_t batch_index = 0;
        for (std::size_t at = 0; at < order.size(); at += cfg.batch, ++batch_index) {
            const std::size_t take = std::min(cfg.batch, order.size() - at);
            store.zero_grad();
            Tensor batch_loss;
            for (std::size_t i = 0; i < take; ++i) {
                const Window& w = train_windows[order[at + i]];
                auto out = model.forward(w, store, /*training=*/true, rng);
                Tensor total = model.loss(out, w).total;
                batch_loss = batch_loss.defined() ? tensor::add(batch_loss, total) : total;
            }
            batch_loss = tensor::scale(batch_loss, 1.0 / static_cast<double>(take));
            const double loss_value = batch_loss.item();
            if (!std::isfinite(loss_value)) {
                throw Error("E_TRAIN", "non-finite loss at epoch " + std::to_string(epoch) +
                                           ", batch " + std::to_string(batch_index));
            }
            epoch_sum += loss_value * static_cast<double>(take);
            tensor::backward(batch_loss);
            tensor::adam_step(store, adam);
        }
        const double train_loss = epoch_sum / static_cast<double>(order.size());
        const double val_loss = has_val ? mean_eval(val_windows) : train_loss;
        result.log.push_back({epoch, train_loss, has_val ? val_loss : nan_value(), adam.lr});

        if (val_loss < best - 1e-12) {
            best = val_loss;
            best_params = snapshot();
            result.best_epoch = epoch;
            result.best_val = best;
            stale = 0;
        } else if (++stale >= cfg.patience) {
            adam.decay_lr();
            stale = 0;
        }
    }
    for (const auto& [name, values] : best_params) store.set_values(name, values);
    return result;
}

}  // namespace stockformer::model
