#pragma once

#include <string>
#include <vector>

#include "ssc/ops.hpp"
#include "ssc/voxel_grid.hpp"

namespace ssc {

// Rows of `logits` tensors below correspond to output-resolution voxels in
// grid scan order; column 0 is the empty class, columns 1..M the semantic
// classes. Ignored cells (label 255) never contribute to losses or metrics.

// Inverse-frequency class weights over the training labels, normalized to
// mean 1. Classes absent from the data get the weight of a single-cell class.
Eigen::ArrayXd compute_class_weights(const std::vector<SemanticGrid>& grids, int class_count);

// Class-weighted cross entropy over non-ignored cells.
Tensor semantic_loss(const Tensor& logits, const SemanticGrid& gt,
                     const Eigen::ArrayXd& class_weights);

// Scene-class affinity: per class, the negated log of soft precision, recall
// and specificity derived from the softmax mass, averaged over the defined
// terms. Undefined terms (class absent / complement absent) are skipped.
Tensor affinity_semantic(const Tensor& logits, const SemanticGrid& gt);

// Same criterion on binary occupancy: the occupied mass is the softmax mass
// of all non-empty classes.
Tensor affinity_geometric(const Tensor& logits, const SemanticGrid& gt);

// Training loss: cross entropy plus, when enabled, both affinity terms.
Tensor scene_loss(const Tensor& logits, const SemanticGrid& gt,
                  const Eigen::ArrayXd& class_weights, bool with_affinity);

// Argmax decode of [N_out, classes] logits onto the output grid.
SemanticGrid labels_from_logits(const Tensor& logits, const VolumeSpec& spec);

// Square count matrix indexed [gt][pred] over classes 0..M.
struct ConfusionCounts {
    int classes = 0;
    std::vector<long> counts;

    ConfusionCounts() = default;
    explicit ConfusionCounts(int classes_)
        : classes(classes_), counts(static_cast<std::size_t>(classes_) * classes_, 0) {}
    long& at(int gt, int pred) { return counts[static_cast<std::size_t>(gt) * classes + pred]; }
    long at(int gt, int pred) const {
        return counts[static_cast<std::size_t>(gt) * classes + pred];
    }
    ConfusionCounts& operator+=(const ConfusionCounts& other);
};

// Counts over the voxels whose centers fall in the evaluation crop
// x in [0, range), y in [-range/2, range/2), all heights. The range must not
// exceed the volume extent. Ignored ground-truth cells are skipped.
ConfusionCounts range_confusion(const SemanticGrid& pred, const SemanticGrid& gt,
                                const VolumeSpec& spec, double range, int class_count);

// Metrics with pinned conventions for empty denominators: IoU with an empty
// union is 1; precision with no positive predictions is 1 when there are no
// positives at all, else 0; recall symmetrically. Classes absent from both
// grids are excluded from the mean IoU; if none remain the mean is 1.
struct SegMetrics {
    double occ_iou = 0, occ_precision = 0, occ_recall = 0;
    std::vector<double> class_iou;      // size classes; [0] unused
    std::vector<char> class_counted;    // participates in miou
    double miou = 0;
};
SegMetrics metrics_from_confusion(const ConfusionCounts& counts);

struct RangeReport {
    double range = 0;
    ConfusionCounts counts;
    SegMetrics metrics;
};

std::vector<RangeReport> evaluate(const SemanticGrid& pred, const SemanticGrid& gt,
                                  const VolumeSpec& spec, const std::vector<double>& ranges,
                                  int class_count);

// One line per range, percentages with two decimals.
std::string format_report(const std::vector<RangeReport>& reports);

}  // namespace ssc
