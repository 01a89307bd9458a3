#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "stockformer/array.h"
#include "stockformer/tensor.h"
#include "stockformer/wavelet.h"

namespace stockformer::model {

struct AblationFlags {
    bool no_decouple = false;  // both branches receive the raw window
    bool no_temporal = false;  // skip temporal attention + causal conv
    bool no_graph = false;     // omit spatial/temporal embeddings
    bool no_fusion = false;    // fusion attention replaced by addition
    bool no_reg_head = false;  // classification-only supervision
    bool no_cla_head = false;  // regression-only supervision

    bool any() const {
        return no_decouple || no_temporal || no_graph || no_fusion || no_reg_head || no_cla_head;
    }
    bool operator==(const AblationFlags&) const = default;
};

struct ModelConfig {
    std::size_t t1 = 20;
    std::size_t t2 = 2;
    std::size_t stocks = 0;           // N, fixed when the model is built
    std::size_t input_channels = 362; // C: return, trend, factors...
    std::size_t hidden_dim = 128;     // D
    std::size_t layers = 2;           // L
    std::size_t heads = 1;
    std::size_t kernel = 2;           // J
    double lambda_cla = 2.0;
    double dropout = 0.2;
    double lr = 0.001;
    double decay = 0.1;
    std::size_t epochs = 100;
    std::size_t batch = 2;
    std::size_t patience = 10;
    std::uint64_t seed = 42;
    int embed_smoothing = 2;
    int struc2vec_iters = 50;
    double struc2vec_tol = 1e-6;
    AblationFlags ablation;

    void validate() const;  // T2 < T1, D divisible by heads, lambda >= 0, ...
    std::string to_json() const;
    static ModelConfig from_json(const std::string& json);
    bool operator==(const ModelConfig&) const = default;
};

// One training/prediction sample.
struct Window {
    Cube input;                         // T1 x N x C
    Mat target_return;                  // T2 x N
    Mat target_lowfreq;                 // T2 x N
    Mat label_trend;                    // T2 x N, {0,1}
    Mat label_lowfreq;                  // T2 x N, {0,1}
    std::vector<std::size_t> slot_ids;  // T1 temporal-graph nodes
    std::string anchor_date;            // last input date
    std::vector<std::string> target_dates;
};

struct PredictionBundle {
    Mat y_reg;    // T2 x N predicted returns
    Mat p_cla;    // T2 x N uptrend probabilities
    Mat y_l_reg;  // T2 x N low-frequency return predictions
    Mat p_l_cla;  // T2 x N low-frequency trend probabilities
};

struct LossBreakdown {
    double total = 0;
    double reg = 0;
    double cla = 0;
};

// Wavelet split of the return channel; trend and factor channels pass through
// unchanged. With no_decouple both branches are the raw window.
std::pair<Cube, Cube> decouple_window(const Cube& input, const wavelet::FilterPair& filters,
                                      bool no_decouple = false);

// Low-frequency branch of the joint input+target return series, cut to the
// final `t2` steps; used to build supervision targets.
Mat low_frequency_targets(const Mat& joint_returns, std::size_t t2,
                          const wavelet::FilterPair& filters);

LossBreakdown multi_supervision_loss(const PredictionBundle& bundle, const Mat& target_return,
                                     const Mat& target_lowfreq, const Mat& label_trend,
                                     const Mat& label_lowfreq, double lambda_cla);

class Stockformer {
public:
    Stockformer(ModelConfig cfg, wavelet::FilterPair filters);

    const ModelConfig& config() const { return cfg_; }
    const wavelet::FilterPair& filters() const { return filters_; }

    // Canonical parameter enumeration; creation order fixes the seeded init.
    void for_each_parameter(
        const std::function<void(const std::string&, const tensor::Shape&)>& fn) const;

    // Materializes every parameter. Embedding tables take the provided
    // initial values (rows x D); pass empty Mats to draw seeded defaults.
    void init_params(tensor::ParameterStore& store, const Mat& temporal_init = {},
                     const Mat& spatial_init = {}) const;

    // Verifies a loaded checkpoint covers this architecture.
    void check_params(const tensor::ParameterStore& store) const;

    struct Outputs {
        tensor::Tensor y_reg, p_cla, y_l_reg, p_l_cla;
    };
    Outputs forward(const Window& w, tensor::ParameterStore& store, bool training,
                    std::mt19937_64& rng) const;

    // Projected decoupling-flow branches (T1 x N x D), eval mode.
    std::pair<tensor::Tensor, tensor::Tensor> decoupling_layer(
        const Window& w, tensor::ParameterStore& store) const;

    struct LossTensors {
        tensor::Tensor total, reg, cla;
    };
    // In-graph loss; honors no_reg_head / no_cla_head unless full_form.
    LossTensors loss(const Outputs& out, const Window& w, bool full_form = false) const;

    PredictionBundle predict(const Window& w, tensor::ParameterStore& store) const;

    LossBreakdown evaluate_loss(const Window& w, tensor::ParameterStore& store,
                                bool full_form = false) const;

private:
    ModelConfig cfg_;
    wavelet::FilterPair filters_;
};

struct EpochLog {
    std::size_t epoch = 0;
    double train_loss = 0;
    double val_loss = 0;
    double lr = 0;
};

struct TrainResult {
    std::vector<EpochLog> log;
    std::size_t best_epoch = 0;  // 1-based; 0 = initialization
    double best_val = 0;
};

// Mini-batch Adam with multiply-on-plateau learning-rate decay. The best
// checkpoint by validation total loss (train loss when no validation windows
// are given) is restored into the store on return. Deterministic for a fixed
// config seed. Throws on non-finite loss, naming epoch and batch.
TrainResult train(const Stockformer& model, const std::vector<Window>& train_windows,
                  const std::vector<Window>& val_windows, tensor::ParameterStore& store);

}  // namespace stockformer::model
