#include "segdetail/eval.hpp"

#include <cmath>
#include <sstream>

namespace segdetail {

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& o) {
    if (o.num_classes != num_classes)
        throw ShapeError("ConfusionMatrix: class count " + std::to_string(num_classes) +
                         " vs " + std::to_string(o.num_classes));
    for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += o.counts[i];
    return *this;
}

void accumulate(ConfusionMatrix& cm, const LabelMask& pred, const LabelMask& gt) {
    if (pred.h != gt.h || pred.w != gt.w)
        throw ShapeError("accumulate: pred " + std::to_string(pred.h) + "x" +
                         std::to_string(pred.w) + " vs gt " + std::to_string(gt.h) + "x" +
                         std::to_string(gt.w));
    for (std::size_t i = 0; i < pred.v.size(); ++i) {
        const int g = gt.v[i];
        if (g == kIgnoreLabel) continue;
        const int p = pred.v[i];
        if (p == kIgnoreLabel)
            throw DataError("accumulate: prediction contains ignore pixels");
        if (g >= cm.num_classes || p >= cm.num_classes)
            throw DataError("accumulate: class out of range: gt=" + std::to_string(g) +
                            " pred=" + std::to_string(p));
        ++cm.at(g, p);
    }
}

EvalReport miou(const ConfusionMatrix& cm) {
    EvalReport report;
    report.per_class_iou.assign(cm.num_classes, std::nullopt);
    double sum = 0.0;
    int defined = 0;
    for (int c = 0; c < cm.num_classes; ++c) {
        std::uint64_t tp = cm.at(c, c), fp = 0, fn = 0;
        for (int o = 0; o < cm.num_classes; ++o) {
            if (o == c) continue;
            fp += cm.at(o, c);
            fn += cm.at(c, o);
        }
        const std::uint64_t uni = tp + fp + fn;
        if (uni == 0) continue;  // class absent from both pred and gt
        const double iou = static_cast<double>(tp) / static_cast<double>(uni);
        report.per_class_iou[c] = iou;
        sum += iou;
        ++defined;
    }
    if (defined == 0) throw EvalError("miou: no class has a defined IoU");
    report.miou = sum / defined;
    return report;
}

LabelMask composite(const LabelMask& coarse, const LabelMask& pred) {
    if (coarse.h != pred.h || coarse.w != pred.w)
        throw ShapeError("composite: dimension mismatch");
    LabelMask out = pred;
    for (std::size_t i = 0; i < out.v.size(); ++i)
        if (coarse.v[i] != kIgnoreLabel) out.v[i] = coarse.v[i];
    return out;
}

std::string EvalReport::to_kv() const {
    std::ostringstream out;
    out.precision(17);
    out << "miou=" << miou << "\n";
    out << "precision=" << precision << "\n";
    out << "coverage=" << coverage << "\n";
    for (std::size_t c = 0; c < per_class_iou.size(); ++c) {
        out << "iou_" << c << "=";
        if (per_class_iou[c]) out << *per_class_iou[c];
        else out << "undefined";
        out << "\n";
    }
    return out.str();
}

EvalReport EvalReport::from_kv(const std::string& text) {
    EvalReport r;
    std::istringstream in(text);
    std::string line;
    std::vector<std::pair<int, std::optional<double>>> ious;
    while (std::getline(in, line)) {
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = line.substr(0, eq);
        const std::string val = line.substr(eq + 1);
        if (key == "miou") r.miou = std::stod(val);
        else if (key == "precision") r.precision = std::stod(val);
        else if (key == "coverage") r.coverage = std::stod(val);
        else if (key.rfind("iou_", 0) == 0) {
            const int c = std::stoi(key.substr(4));
            ious.push_back({c, val == "undefined" ? std::nullopt
                                                  : std::optional<double>(std::stod(val))});
        }
    }
    int max_c = -1;
    for (const auto& [c, v] : ious) max_c = std::max(max_c, c);
    r.per_class_iou.assign(max_c + 1, std::nullopt);
    for (const auto& [c, v] : ious) r.per_class_iou[c] = v;
    return r;
}

std::string EvalReport::csv_header() const {
    std::string h = "miou,precision,coverage";
    for (std::size_t c = 0; c < per_class_iou.size(); ++c)
        h += ",iou_" + std::to_string(c);
    return h;
}

std::string EvalReport::csv_row() const {
    std::ostringstream out;
    out.precision(17);
    out << miou << "," << precision << "," << coverage;
    for (const auto& iou : per_class_iou) {
        out << ",";
        if (iou) out << *iou;
    }
    return out.str();
}

namespace {

LabelMask predict(const MiniPsp<float>& model, const SampleTriplet& t, bool use_coarse) {
    Tensor4<float> image = t.image;
    normalize_image(image, model.norm_mean, model.norm_std);
    const Tensor4<float> logits =
        use_coarse ? model.forward_detailer(image, {t.coarse})
                   : model.forward_classifier(image);
    return argmax_mask(logits, 0);
}

}  // namespace

EvalReport evaluate_model(const MiniPsp<float>& model, const Dataset& ds,
                          bool use_coarse_input, bool composite_mode) {
    if (ds.items.empty()) throw ConfigError("evaluate_model: empty dataset");
    if (use_coarse_input && model.cfg.injection == InjectionPoint::None)
        throw ConfigError("evaluate_model: coarse input requires a detailer model");
    if (!use_coarse_input && model.cfg.injection != InjectionPoint::None)
        throw ConfigError("evaluate_model: detailer models require use_coarse_input");
    ConfusionMatrix cm(model.cfg.num_classes);
    for (const auto& t : ds.items) {
        LabelMask pred = predict(model, t, use_coarse_input);
        if (composite_mode) pred = composite(t.coarse, pred);
        accumulate(cm, pred, t.fine);
    }
    EvalReport report = miou(cm);
    const CoarseStats stats = coarse_stats(ds);
    report.precision = stats.precision;
    report.coverage = stats.coverage;
    return report;
}

EvalReport evaluate_coarse_baseline(const Dataset& ds) {
    if (ds.items.empty()) throw ConfigError("evaluate_coarse_baseline: empty dataset");
    ConfusionMatrix cm(ds.num_classes);
    for (const auto& t : ds.items) {
        // Identity "model": argmax of the one-hot coarse encoding; ignore
        // pixels carry the all-zero vector and fall to class 0.
        LabelMask pred = t.coarse;
        for (auto& v : pred.v)
            if (v == kIgnoreLabel) v = 0;
        accumulate(cm, pred, t.fine);
    }
    EvalReport report = miou(cm);
    const CoarseStats stats = coarse_stats(ds);
    report.precision = stats.precision;
    report.coverage = stats.coverage;
    return report;
}

DistillResult distill(const MiniPsp<float>& teacher, const Dataset& train_set,
                      const Dataset& val_set, const NetworkConfig& student_cfg,
                      const TrainConfig& train_cfg) {
    if (teacher.cfg.injection == InjectionPoint::None)
        throw ConfigError("distill: teacher must be a detailer");
    if (student_cfg.injection != InjectionPoint::None)
        throw ConfigError("distill: student must be a plain classifier");

    DistillResult result;
    Dataset detailed = train_set;
    for (std::size_t i = 0; i < train_set.items.size(); ++i) {
        LabelMask m = predict(teacher, train_set.items[i], /*use_coarse=*/true);
        result.detailed_masks.push_back(m);
        detailed.items[i].fine = std::move(m);  // hard argmax labels, total
    }

    MiniPsp<float> student(student_cfg);
    train(ModelKind::Classifier, student, detailed, &val_set, train_cfg);
    result.student_report = evaluate_model(student, val_set, false, false);
    result.student = std::move(student);
    return result;
}

}  // namespace segdetail
