#pragma once

// Mini-batch SGD with classic momentum, polynomial learning-rate decay, and
// cross-entropy over non-ignored pixels, for classifier and detailer alike.

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "segdetail/data.hpp"
#include "segdetail/network.hpp"

namespace segdetail {

enum class ModelKind { Classifier, Detailer };

inline std::string to_string(ModelKind k) {
    return k == ModelKind::Classifier ? "classifier" : "detailer";
}
inline ModelKind parse_model_kind(const std::string& s) {
    if (s == "classifier") return ModelKind::Classifier;
    if (s == "detailer") return ModelKind::Detailer;
    throw ConfigError("unknown model kind '" + s + "'");
}

struct TrainConfig {
    double base_lr = 0.01;
    double poly_power = 0.9;
    double momentum = 0.99;
    int batch_size = 8;
    int total_iters = 2000;
    int crop = 48;
    std::uint32_t seed = 1;
    int eval_every = 0;  // 0 disables periodic validation

    void validate() const {
        if (base_lr <= 0) throw ConfigError("base_lr must be > 0");
        if (poly_power <= 0) throw ConfigError("poly_power must be > 0");
        if (momentum < 0 || momentum >= 1) throw ConfigError("momentum must be in [0,1)");
        if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
        if (total_iters < 1) throw ConfigError("total_iters must be >= 1");
        if (crop < 1) throw ConfigError("crop must be >= 1");
    }
};

/// lr(t) = base_lr * (1 - t/total_iters)^poly_power.
double poly_lr(int t, const TrainConfig& cfg);

/// Per-parameter momentum buffers, keyed by parameter order.
struct SgdState {
    std::vector<std::vector<float>> momentum;
};

/// buf <- momentum*buf + grad; param <- param - lr*buf. Throws TrainError
/// naming the parameter path on a non-finite gradient.
void sgd_step(std::vector<ParamRef<float>>& params, SgdState& state, double lr,
              double momentum);

struct MetricsRow {
    int iter = 0;
    double lr = 0.0;
    double loss = 0.0;
    std::optional<double> val_miou;
};

struct TrainResult {
    std::vector<MetricsRow> log;
};

/// Writes the append-only metrics CSV (iter,lr,loss,val_miou).
void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& log);

/// Runs total_iters mini-batches sampled with replacement from the augmented
/// training set. The detailer's loss compares its logits against the fine
/// mask. Sets the model's normalization stats from the training set.
TrainResult train(ModelKind kind, MiniPsp<float>& model, const Dataset& train_set,
                  const Dataset* val_set, const TrainConfig& cfg);

}  // namespace segdetail
