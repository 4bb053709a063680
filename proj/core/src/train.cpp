#include "segdetail/train.hpp"

#include <cmath>
#include <fstream>
#include <random>

#include "segdetail/eval.hpp"

namespace segdetail {

double poly_lr(int t, const TrainConfig& cfg) {
    cfg.validate();
    if (t < 0 || t > cfg.total_iters)
        throw ArgumentError("poly_lr: iteration " + std::to_string(t) + " out of [0," +
                            std::to_string(cfg.total_iters) + "]");
    return cfg.base_lr *
           std::pow(1.0 - static_cast<double>(t) / cfg.total_iters, cfg.poly_power);
}

void sgd_step(std::vector<ParamRef<float>>& params, SgdState& state, double lr,
              double momentum) {
    if (state.momentum.empty()) {
        state.momentum.resize(params.size());
        for (std::size_t i = 0; i < params.size(); ++i)
            state.momentum[i].assign(params[i].value->size(), 0.f);
    }
    if (state.momentum.size() != params.size())
        throw TrainError("sgd_step: momentum buffer count mismatch");
    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& value = *params[i].value;
        const auto& grad = *params[i].grad;
        auto& buf = state.momentum[i];
        if (grad.size() != value.size() || buf.size() != value.size())
            throw TrainError("sgd_step: shape mismatch for " + params[i].path);
        for (std::size_t j = 0; j < value.size(); ++j) {
            if (!std::isfinite(grad[j]))
                throw TrainError("sgd_step: non-finite gradient in " + params[i].path);
            buf[j] = static_cast<float>(momentum) * buf[j] + grad[j];
            value[j] -= static_cast<float>(lr) * buf[j];
        }
    }
}

void write_metrics_csv(const std::string& path, const std::vector<MetricsRow>& log) {
    std::ofstream out(path);
    if (!out) throw DataError("cannot write metrics CSV " + path);
    out << "iter,lr,loss,val_miou\n";
    for (const auto& row : log) {
        out << row.iter << "," << row.lr << "," << row.loss << ",";
        if (row.val_miou) out << *row.val_miou;
        out << "\n";
    }
}

TrainResult train(ModelKind kind, MiniPsp<float>& model, const Dataset& train_set,
                  const Dataset* val_set, const TrainConfig& cfg) {
    cfg.validate();
    if (train_set.items.empty()) throw ConfigError("train: empty dataset");
    if (kind == ModelKind::Detailer && model.cfg.injection == InjectionPoint::None)
        throw ConfigError("train: detailer requires injection != none");
    if (kind == ModelKind::Classifier && model.cfg.injection != InjectionPoint::None)
        throw ConfigError("train: classifier requires injection = none");
    if (cfg.crop % model.cfg.encoder_downsample != 0)
        throw ConfigError("train: crop " + std::to_string(cfg.crop) +
                          " not divisible by encoder_downsample");

    const NormStats norm = compute_norm_stats(train_set);
    model.norm_mean = norm.mean;
    model.norm_std = norm.stddev;

    TrainResult result;
    SgdState sgd;
    std::mt19937 sampler(cfg.seed);
    std::uniform_int_distribution<std::size_t> pick(0, train_set.items.size() - 1);

    const int plane = cfg.crop * cfg.crop;
    for (int t = 0; t < cfg.total_iters; ++t) {
        // Assemble one augmented batch with per-sample derived seeds.
        Tensor4<float> images(cfg.batch_size, 3, cfg.crop, cfg.crop);
        std::vector<LabelMask> fine(cfg.batch_size), coarse(cfg.batch_size);
        for (int b = 0; b < cfg.batch_size; ++b) {
            const SampleTriplet& src = train_set.items[pick(sampler)];
            const std::uint32_t aug_seed =
                derive_seed(cfg.seed, (static_cast<std::uint64_t>(t) << 8) | b);
            SampleTriplet a = augment(src, cfg.crop, aug_seed, norm.mean, norm.stddev);
            std::copy_n(a.image.v.data(), 3 * plane, images.v.data() + images.index(b, 0, 0, 0));
            fine[b] = std::move(a.fine);
            coarse[b] = std::move(a.coarse);
        }

        ForwardCache<float> cache;
        Tensor4<float> logits = kind == ModelKind::Detailer
                                    ? model.forward_detailer(images, coarse, &cache)
                                    : model.forward_classifier(images, &cache);
        CeResult<float> ce = softmax_ce_ignore(logits, fine);
        if (!std::isfinite(ce.loss))
            throw TrainError("train: non-finite loss at iteration " + std::to_string(t));

        model.zero_grad();
        model.backward(cache, ce.grad_logits);
        auto params = model.params();
        const double lr = poly_lr(t, cfg);
        sgd_step(params, sgd, lr, cfg.momentum);

        MetricsRow row{t, lr, static_cast<double>(ce.loss), std::nullopt};
        if (val_set && cfg.eval_every > 0 &&
            ((t + 1) % cfg.eval_every == 0 || t + 1 == cfg.total_iters)) {
            row.val_miou = evaluate_model(model, *val_set,
                                          kind == ModelKind::Detailer, false)
                               .miou;
        }
        result.log.push_back(row);
    }
    return result;
}

}  // namespace segdetail
