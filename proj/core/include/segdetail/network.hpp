#pragma once

// Miniature PSP-style segmentation network: classifier baseline plus the
// detailer variant that injects an embedded coarse annotation and predicts a
// residual correction added to the coarse one-hot (identity skip).

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "segdetail/mask.hpp"
#include "segdetail/ops.hpp"
#include "segdetail/tensor.hpp"

namespace segdetail {

enum class InjectionPoint { None, BeforePool, AfterPool, AfterFinal };

inline std::string to_string(InjectionPoint p) {
    switch (p) {
        case InjectionPoint::None: return "none";
        case InjectionPoint::BeforePool: return "before-pool";
        case InjectionPoint::AfterPool: return "after-pool";
        case InjectionPoint::AfterFinal: return "after-final";
    }
    return "none";
}

inline InjectionPoint parse_injection(const std::string& s) {
    if (s == "none") return InjectionPoint::None;
    if (s == "before-pool") return InjectionPoint::BeforePool;
    if (s == "after-pool") return InjectionPoint::AfterPool;
    if (s == "after-final") return InjectionPoint::AfterFinal;
    throw ConfigError("unknown injection point '" + s + "'");
}

struct NetworkConfig {
    int num_classes = 5;
    InjectionPoint injection = InjectionPoint::None;
    int embed_width = 64;
    std::vector<int> encoder_channels = {16, 32, 64};
    std::vector<int> ppm_bins = {1, 2, 3, 6};
    int encoder_downsample = 4;
    std::uint32_t seed = 1;

    void validate() const {
        if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
        if (embed_width < 1) throw ConfigError("embed_width must be >= 1");
        if (encoder_channels.empty()) throw ConfigError("encoder_channels empty");
        if (ppm_bins.empty()) throw ConfigError("ppm_bins empty");
        for (int b : ppm_bins)
            if (b < 1) throw ConfigError("ppm_bins entries must be >= 1");
        int ds = encoder_downsample;
        for (std::size_t i = 0; i < encoder_channels.size() && ds > 1; ++i) ds /= 2;
        if (ds != 1)
            throw ConfigError("encoder_downsample " + std::to_string(encoder_downsample) +
                              " not reachable with " +
                              std::to_string(encoder_channels.size()) +
                              " stride-2 encoder layers");
    }
};

/// One-hot expansion of a batch of masks to (n, C, h, w); ignore pixels map
/// to the all-zero channel vector, keeping the skip connection neutral there.
template <typename T>
Tensor4<T> one_hot_encode(const std::vector<LabelMask>& masks, int num_classes,
                          int ignore_value = kIgnoreLabel) {
    if (masks.empty()) throw ArgumentError("one_hot_encode: empty batch");
    const int h = masks[0].h, w = masks[0].w;
    Tensor4<T> out(static_cast<int>(masks.size()), num_classes, h, w);
    for (std::size_t in = 0; in < masks.size(); ++in) {
        const LabelMask& m = masks[in];
        if (m.h != h || m.w != w)
            throw ShapeError("one_hot_encode: ragged batch");
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const int lab = m.at(y, x);
                if (lab == ignore_value) continue;
                if (lab >= num_classes)
                    throw DataError("one_hot_encode: class " + std::to_string(lab) +
                                    " out of [0," + std::to_string(num_classes) +
                                    ") at pixel (" + std::to_string(y) + "," +
                                    std::to_string(x) + ")");
                out.at(static_cast<int>(in), lab, y, x) = T(1);
            }
    }
    return out;
}

/// Argmax over channels with ties broken toward the lowest class index.
template <typename T>
LabelMask argmax_mask(const Tensor4<T>& logits, int sample) {
    LabelMask m(logits.h, logits.w);
    for (int y = 0; y < logits.h; ++y)
        for (int x = 0; x < logits.w; ++x) {
            int best = 0;
            T bv = logits.at(sample, 0, y, x);
            for (int c = 1; c < logits.c; ++c) {
                const T v = logits.at(sample, c, y, x);
                if (v > bv) { bv = v; best = c; }
            }
            m.at(y, x) = static_cast<std::uint8_t>(best);
        }
    return m;
}

/// Resamples the one-hot to the target resolution by nearest-neighbor
/// (preserving the binary structure), then applies the 1x1 embedding conv.
template <typename T>
Tensor4<T> embed_coarse(const Tensor4<T>& one_hot, int target_h, int target_w,
                        const ConvParams<T>& embed) {
    if (target_h < 1 || target_w < 1)
        throw ArgumentError("embed_coarse: target dims must be >= 1");
    if (embed.k() != 1)
        throw ArgumentError("embed_coarse: embedding kernel must be 1x1");
    Tensor4<T> small = (one_hot.h == target_h && one_hot.w == target_w)
                           ? one_hot
                           : nearest_resize(one_hot, target_h, target_w);
    return conv2d_forward(small, embed);
}

template <typename T>
struct ConvLayer {
    ConvParams<T> p;
    Tensor4<T> gw;
    std::vector<T> gb;

    void init(int c_out, int c_in, int k, int stride, int pad, std::mt19937& rng) {
        p.weight = Tensor4<T>(c_out, c_in, k, k);
        p.bias.assign(c_out, T(0));
        p.stride = stride;
        p.padding = pad;
        // He fan-in init; sampled in double so float and double builds of the
        // same seed agree up to rounding.
        std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / (c_in * k * k)));
        for (auto& x : p.weight.v) x = static_cast<T>(dist(rng));
        zero_grad();
    }
    void zero_grad() {
        gw = Tensor4<T>(p.weight.n, p.weight.c, p.weight.h, p.weight.w);
        gb.assign(p.bias.size(), T(0));
    }
    void accumulate(const ConvGrads<T>& g) {
        for (std::size_t i = 0; i < gw.v.size(); ++i) gw.v[i] += g.weight.v[i];
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g.bias[i];
    }
    std::size_t param_count() const { return p.weight.size() + p.bias.size(); }
};

template <typename T>
struct ParamRef {
    std::string path;
    std::vector<T>* value;
    std::vector<T>* grad;
};

template <typename T>
struct ForwardCache {
    bool detailer = false;
    int in_h = 0, in_w = 0;
    std::vector<Tensor4<T>> enc_in;   // input to each encoder conv
    std::vector<Tensor4<T>> enc_pre;  // encoder conv outputs, pre-ReLU
    Tensor4<T> onehot_small;          // nearest-resampled one-hot at feature res
    Tensor4<T> embed_out;
    Tensor4<T> ppm_in;
    std::vector<Tensor4<T>> pool_out;
    Tensor4<T> ppm_cat;
    Tensor4<T> head_in;
    Tensor4<T> head_pre;
    Tensor4<T> score_in;
    Tensor4<T> correction;            // p, at feature resolution
    Tensor4<T> logits;                // full resolution
};

template <typename T>
class MiniPsp {
public:
    NetworkConfig cfg;
    std::vector<ConvLayer<T>> encoder;
    std::vector<ConvLayer<T>> ppm;
    ConvLayer<T> embed;   // present iff cfg.injection != None
    ConvLayer<T> head;    // 3x3, first half of the final conv block
    ConvLayer<T> score;   // 1x1 to C, second half of the final conv block
    // Channel normalization carried alongside the weights so a checkpoint is
    // usable without the original dataset.
    std::array<float, 3> norm_mean{0.f, 0.f, 0.f};
    std::array<float, 3> norm_std{1.f, 1.f, 1.f};

    explicit MiniPsp(const NetworkConfig& config) : cfg(config) {
        cfg.validate();
        std::mt19937 rng(cfg.seed);
        int in_c = 3;
        int ds = cfg.encoder_downsample;
        encoder.resize(cfg.encoder_channels.size());
        for (std::size_t i = 0; i < encoder.size(); ++i) {
            const int stride = ds > 1 ? 2 : 1;
            ds /= stride == 2 ? 2 : 1;
            encoder[i].init(cfg.encoder_channels[i], in_c, 3, stride, 1, rng);
            in_c = cfg.encoder_channels[i];
        }
        const bool inject = cfg.injection != InjectionPoint::None;
        if (inject) embed.init(cfg.embed_width, cfg.num_classes, 1, 1, 0, rng);

        const int feat_c = cfg.encoder_channels.back();
        ppm_in_c_ = feat_c + (cfg.injection == InjectionPoint::BeforePool ? cfg.embed_width : 0);
        branch_c_ = std::max<int>(1, ppm_in_c_ / static_cast<int>(cfg.ppm_bins.size()));
        ppm.resize(cfg.ppm_bins.size());
        for (std::size_t i = 0; i < ppm.size(); ++i)
            ppm[i].init(branch_c_, ppm_in_c_, 1, 1, 0, rng);
        const int cat_c = ppm_in_c_ + branch_c_ * static_cast<int>(cfg.ppm_bins.size());
        const int head_in = cat_c + (cfg.injection == InjectionPoint::AfterPool ? cfg.embed_width : 0);
        head.init(feat_c, head_in, 3, 1, 1, rng);
        const int score_in = feat_c + (cfg.injection == InjectionPoint::AfterFinal ? cfg.embed_width : 0);
        score.init(cfg.num_classes, score_in, 1, 1, 0, rng);
    }

    std::vector<ParamRef<T>> params() {
        std::vector<ParamRef<T>> out;
        auto push = [&out](const std::string& path, ConvLayer<T>& l) {
            out.push_back({path + ".weight", &l.p.weight.v, &l.gw.v});
            out.push_back({path + ".bias", &l.p.bias, &l.gb});
        };
        for (std::size_t i = 0; i < encoder.size(); ++i)
            push("encoder" + std::to_string(i), encoder[i]);
        if (cfg.injection != InjectionPoint::None) push("embed", embed);
        for (std::size_t i = 0; i < ppm.size(); ++i)
            push("ppm" + std::to_string(i), ppm[i]);
        push("head", head);
        push("score", score);
        return out;
    }

    std::size_t param_count() const {
        std::size_t n = head.param_count() + score.param_count();
        for (const auto& l : encoder) n += l.param_count();
        for (const auto& l : ppm) n += l.param_count();
        if (cfg.injection != InjectionPoint::None) n += embed.param_count();
        return n;
    }

    void zero_grad() {
        for (auto& l : encoder) l.zero_grad();
        for (auto& l : ppm) l.zero_grad();
        if (cfg.injection != InjectionPoint::None) embed.zero_grad();
        head.zero_grad();
        score.zero_grad();
    }

    /// Zeroes the final conv block (head + score); the detailer's correction
    /// then vanishes and the output reduces to the coarse one-hot skip.
    void zero_final_block() {
        std::fill(head.p.weight.v.begin(), head.p.weight.v.end(), T(0));
        std::fill(head.p.bias.begin(), head.p.bias.end(), T(0));
        std::fill(score.p.weight.v.begin(), score.p.weight.v.end(), T(0));
        std::fill(score.p.bias.begin(), score.p.bias.end(), T(0));
    }

    /// Classifier forward. Requires cfg.injection == None.
    Tensor4<T> forward_classifier(const Tensor4<T>& image, ForwardCache<T>* cache = nullptr) const {
        if (cfg.injection != InjectionPoint::None)
            throw ConfigError("forward_classifier requires injection = none");
        return run(image, nullptr, cache);
    }

    /// Detailer forward: logits = upsample(correction) + one_hot(coarse).
    Tensor4<T> forward_detailer(const Tensor4<T>& image, const std::vector<LabelMask>& coarse,
                                ForwardCache<T>* cache = nullptr) const {
        if (cfg.injection == InjectionPoint::None)
            throw ConfigError("forward_detailer requires injection != none");
        if (static_cast<int>(coarse.size()) != image.n ||
            (image.n > 0 && (coarse[0].h != image.h || coarse[0].w != image.w)))
            throw ShapeError("forward_detailer: coarse mask batch does not match image " +
                             image.shape_str());
        return run(image, &coarse, cache);
    }

    /// Accumulates parameter gradients for d(sum(grad_logits * logits)).
    void backward(const ForwardCache<T>& cache, const Tensor4<T>& grad_logits) {
        // Identity skip is constant in the parameters; the upsample backward
        // alone carries the gradient to the correction tensor.
        Tensor4<T> grad_p = bilinear_upsample_backward(cache.correction, grad_logits);

        ConvGrads<T> gs = conv2d_backward(cache.score_in, score.p, grad_p);
        score.accumulate(gs);
        Tensor4<T> grad_head_act = std::move(gs.input);
        Tensor4<T> grad_embed(0, 0, 0, 0);
        if (cfg.injection == InjectionPoint::AfterFinal) {
            auto [ga, gb2] = concat_channels_backward(grad_head_act, head.p.weight.n);
            grad_head_act = std::move(ga);
            grad_embed = std::move(gb2);
        }

        Tensor4<T> grad_head_pre = relu_backward(cache.head_pre, grad_head_act);
        ConvGrads<T> gh = conv2d_backward(cache.head_in, head.p, grad_head_pre);
        head.accumulate(gh);
        Tensor4<T> grad_cat = std::move(gh.input);
        if (cfg.injection == InjectionPoint::AfterPool) {
            auto [ga, gb2] = concat_channels_backward(grad_cat, cache.ppm_cat.c);
            grad_cat = std::move(ga);
            add_into(grad_embed, std::move(gb2));
        }

        // PPM concat: [ppm_in, branch_0, ..., branch_k].
        Tensor4<T> grad_ppm_in(cache.ppm_in.n, cache.ppm_in.c, cache.ppm_in.h, cache.ppm_in.w);
        {
            auto [gfeat, gbranches] = concat_channels_backward(grad_cat, cache.ppm_in.c);
            grad_ppm_in = std::move(gfeat);
            for (std::size_t i = 0; i < ppm.size(); ++i) {
                auto [gb_i, rest] = concat_channels_backward(gbranches, branch_c_);
                gbranches = std::move(rest);
                Tensor4<T> g_conv_out = bilinear_upsample_backward(
                    Tensor4<T>(cache.pool_out[i].n, branch_c_, cache.pool_out[i].h,
                               cache.pool_out[i].w),
                    gb_i);
                ConvGrads<T> gp = conv2d_backward(cache.pool_out[i], ppm[i].p, g_conv_out);
                ppm[i].accumulate(gp);
                Tensor4<T> g_pool_in = adaptive_avg_pool_backward(cache.ppm_in, gp.input);
                for (std::size_t j = 0; j < grad_ppm_in.v.size(); ++j)
                    grad_ppm_in.v[j] += g_pool_in.v[j];
            }
        }

        Tensor4<T> grad_feat = std::move(grad_ppm_in);
        if (cfg.injection == InjectionPoint::BeforePool) {
            auto [ga, gb2] = concat_channels_backward(grad_feat, cache.enc_pre.back().c);
            grad_feat = std::move(ga);
            add_into(grad_embed, std::move(gb2));
        }

        if (cache.detailer && grad_embed.size() > 0) {
            ConvGrads<T> ge = conv2d_backward(cache.onehot_small, embed.p, grad_embed);
            embed.accumulate(ge);
        }

        Tensor4<T> g = std::move(grad_feat);
        for (int i = static_cast<int>(encoder.size()) - 1; i >= 0; --i) {
            g = relu_backward(cache.enc_pre[i], g);
            ConvGrads<T> ge = conv2d_backward(cache.enc_in[i], encoder[i].p, g);
            encoder[i].accumulate(ge);
            g = std::move(ge.input);
        }
    }

    int feature_h(int in_h) const { return in_h / cfg.encoder_downsample; }

private:
    int ppm_in_c_ = 0;
    int branch_c_ = 0;

    static void add_into(Tensor4<T>& acc, Tensor4<T>&& t) {
        if (acc.size() == 0) { acc = std::move(t); return; }
        for (std::size_t i = 0; i < acc.v.size(); ++i) acc.v[i] += t.v[i];
    }

    Tensor4<T> run(const Tensor4<T>& image, const std::vector<LabelMask>* coarse,
                   ForwardCache<T>* cache) const {
        if (image.c != 3)
            throw ShapeError("network input must have 3 channels, got " + image.shape_str());
        if (image.h % cfg.encoder_downsample != 0 || image.w % cfg.encoder_downsample != 0)
            throw ShapeError("input dims " + image.shape_str() + " not divisible by " +
                             std::to_string(cfg.encoder_downsample));
        ForwardCache<T> local;
        ForwardCache<T>& cc = cache ? *cache : local;
        cc = ForwardCache<T>{};
        cc.detailer = coarse != nullptr;
        cc.in_h = image.h;
        cc.in_w = image.w;

        Tensor4<T> x = image;
        for (const auto& layer : encoder) {
            cc.enc_in.push_back(x);
            Tensor4<T> pre = conv2d_forward(x, layer.p);
            cc.enc_pre.push_back(pre);
            x = relu(pre);
        }
        const int fh = x.h, fw = x.w;

        if (coarse) {
            Tensor4<T> onehot = one_hot_encode<T>(*coarse, cfg.num_classes);
            cc.onehot_small = (onehot.h == fh && onehot.w == fw)
                                  ? onehot
                                  : nearest_resize(onehot, fh, fw);
            cc.embed_out = conv2d_forward(cc.onehot_small, embed.p);
        }

        cc.ppm_in = (cfg.injection == InjectionPoint::BeforePool && coarse)
                        ? concat_channels(x, cc.embed_out)
                        : std::move(x);

        Tensor4<T> cat = cc.ppm_in;
        for (std::size_t i = 0; i < ppm.size(); ++i) {
            const int bin = std::min({cfg.ppm_bins[i], fh, fw});
            Tensor4<T> pooled = adaptive_avg_pool(cc.ppm_in, bin, bin);
            cc.pool_out.push_back(pooled);
            Tensor4<T> branch = bilinear_upsample(conv2d_forward(pooled, ppm[i].p), fh, fw);
            cat = concat_channels(cat, branch);
        }
        cc.ppm_cat = std::move(cat);

        cc.head_in = (cfg.injection == InjectionPoint::AfterPool && coarse)
                         ? concat_channels(cc.ppm_cat, cc.embed_out)
                         : cc.ppm_cat;
        cc.head_pre = conv2d_forward(cc.head_in, head.p);
        Tensor4<T> head_act = relu(cc.head_pre);
        cc.score_in = (cfg.injection == InjectionPoint::AfterFinal && coarse)
                          ? concat_channels(head_act, cc.embed_out)
                          : std::move(head_act);
        cc.correction = conv2d_forward(cc.score_in, score.p);

        Tensor4<T> logits = bilinear_upsample(cc.correction, image.h, image.w);
        if (coarse) {
            Tensor4<T> skip = one_hot_encode<T>(*coarse, cfg.num_classes);
            logits = add(logits, skip);
        }
        cc.logits = logits;
        return logits;
    }
};

}  // namespace segdetail
