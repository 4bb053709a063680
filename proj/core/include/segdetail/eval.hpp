#pragma once

// mIoU evaluation, the composite prediction, and the teacher/student
// distillation pipeline.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "segdetail/data.hpp"
#include "segdetail/network.hpp"
#include "segdetail/train.hpp"

namespace segdetail {

/// C x C co-occurrence counts; entry (gt, pred) counts pixels. Ignore-labeled
/// ground-truth pixels are excluded.
struct ConfusionMatrix {
    int num_classes = 0;
    std::vector<std::uint64_t> counts;

    explicit ConfusionMatrix(int c)
        : num_classes(c), counts(static_cast<std::size_t>(c) * c, 0) {}

    std::uint64_t& at(int gt, int pred) {
        return counts[static_cast<std::size_t>(gt) * num_classes + pred];
    }
    std::uint64_t at(int gt, int pred) const {
        return counts[static_cast<std::size_t>(gt) * num_classes + pred];
    }
    ConfusionMatrix& operator+=(const ConfusionMatrix& o);
};

/// Predictions must be total (no ignore); ground truth may contain ignore.
void accumulate(ConfusionMatrix& cm, const LabelMask& pred, const LabelMask& gt);

struct EvalReport {
    std::vector<std::optional<double>> per_class_iou;
    double miou = 0.0;
    double precision = 0.0;  // labeled coarse-pixel precision of the dataset
    double coverage = 0.0;   // labeled fraction of the dataset's coarse pixels

    std::string to_kv() const;           // flat key/value text record
    static EvalReport from_kv(const std::string& text);
    std::string csv_header() const;
    std::string csv_row() const;
};

/// IoU_c = tp / (tp + fp + fn); classes with zero union are excluded from the
/// mean. Throws EvalError when no class has a defined IoU.
EvalReport miou(const ConfusionMatrix& cm);

/// coarse where labeled, pred elsewhere; the output is total.
LabelMask composite(const LabelMask& coarse, const LabelMask& pred);

/// Full-image forward + argmax over the dataset, optionally composited with
/// each coarse mask; one shared confusion matrix over the split.
EvalReport evaluate_model(const MiniPsp<float>& model, const Dataset& ds,
                          bool use_coarse_input, bool composite_mode);

/// mIoU of the coarse masks themselves, made total by argmax over the one-hot
/// (ignore pixels fall to class 0 via the tie-break).
EvalReport evaluate_coarse_baseline(const Dataset& ds);

struct DistillResult {
    std::vector<LabelMask> detailed_masks;   // teacher argmax per training triplet
    EvalReport student_report;               // student-on-detailed validation mIoU
    std::optional<MiniPsp<float>> student;   // the trained coarse-free student
};

/// Teacher (a detailer) labels every training triplet; the student (a plain
/// classifier) trains on (image, detailed mask) pairs and needs no coarse
/// masks at test time.
DistillResult distill(const MiniPsp<float>& teacher, const Dataset& train_set,
                      const Dataset& val_set, const NetworkConfig& student_cfg,
                      const TrainConfig& train_cfg);

}  // namespace segdetail
