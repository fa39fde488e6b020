#include "ssc/loss_metrics.hpp"

#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace ssc {

namespace {

constexpr double kLogGuard = 1e-12;

void require_logit_grid(const Tensor& logits, const SemanticGrid& gt) {
    if (logits.rank() != 2)
        throw std::invalid_argument("loss: logits must be [cells, classes]");
    if (logits.dim(0) != gt.cell_count())
        throw std::invalid_argument("loss: logits rows must cover the label grid");
    if (logits.dim(1) < 2) throw std::invalid_argument("loss: need at least two classes");
}

void check_labels(const SemanticGrid& grid, int class_count, const char* who) {
    for (const std::uint8_t l : grid.labels)
        if (l != SemanticGrid::kIgnore && l >= class_count)
            throw std::invalid_argument(std::string(who) + ": label out of class range");
}

// Negated mean log of the collected ratio terms.
Tensor negated_log_mean(const std::vector<Tensor>& terms) {
    if (terms.empty()) return Tensor::scalar(0.0);
    Tensor acc;
    for (std::size_t i = 0; i < terms.size(); ++i) {
        Tensor t = log(add(terms[i], Tensor::scalar(kLogGuard)));
        acc = i == 0 ? t : add(acc, t);
    }
    return scale(acc, -1.0 / static_cast<double>(terms.size()));
}

}  // namespace

Eigen::ArrayXd compute_class_weights(const std::vector<SemanticGrid>& grids, int class_count) {
    if (class_count < 2) throw std::invalid_argument("class weights: need at least two classes");
    Eigen::ArrayXd counts = Eigen::ArrayXd::Zero(class_count);
    double total = 0;
    for (const auto& grid : grids) {
        check_labels(grid, class_count, "class weights");
        for (const std::uint8_t l : grid.labels) {
            if (l == SemanticGrid::kIgnore) continue;
            counts[l] += 1.0;
            total += 1.0;
        }
    }
    Eigen::ArrayXd weights(class_count);
    const double absent_freq = 1.0 / (total + class_count);
    for (int c = 0; c < class_count; ++c) {
        const double freq = counts[c] > 0 ? counts[c] / std::max(total, 1.0) : absent_freq;
        weights[c] = 1.0 / freq;
    }
    weights *= static_cast<double>(class_count) / weights.sum();  // mean 1
    return weights;
}

Tensor semantic_loss(const Tensor& logits, const SemanticGrid& gt,
                     const Eigen::ArrayXd& class_weights) {
    require_logit_grid(logits, gt);
    const int classes = logits.dim(1);
    check_labels(gt, classes, "semantic loss");
    if (class_weights.size() != classes)
        throw std::invalid_argument("semantic loss: one weight per class");

    const long n = gt.cell_count();
    std::vector<int> targets(static_cast<std::size_t>(n), 0);
    std::vector<std::uint8_t> valid(static_cast<std::size_t>(n), 0);
    for (long i = 0; i < n; ++i) {
        const std::uint8_t l = gt.labels[static_cast<std::size_t>(i)];
        if (l == SemanticGrid::kIgnore) continue;
        targets[static_cast<std::size_t>(i)] = l;
        valid[static_cast<std::size_t>(i)] = 1;
    }
    return cross_entropy_loss(logits, targets, class_weights, valid);
}

Tensor affinity_semantic(const Tensor& logits, const SemanticGrid& gt) {
    require_logit_grid(logits, gt);
    const int classes = logits.dim(1);
    check_labels(gt, classes, "affinity");
    const long n = gt.cell_count();
    const Tensor p = softmax_rows(logits);

    std::vector<Tensor> terms;
    for (int c = 0; c < classes; ++c) {
        Eigen::ArrayXd coeff_class = Eigen::ArrayXd::Zero(n * classes);
        Eigen::ArrayXd coeff_col = Eigen::ArrayXd::Zero(n * classes);
        long n_class = 0, n_other = 0;
        for (long i = 0; i < n; ++i) {
            const std::uint8_t l = gt.labels[static_cast<std::size_t>(i)];
            if (l == SemanticGrid::kIgnore) continue;
            coeff_col[i * classes + c] = 1.0;
            if (l == c) {
                coeff_class[i * classes + c] = 1.0;
                ++n_class;
            } else {
                ++n_other;
            }
        }
        const Tensor mass_class = weighted_sum(p, coeff_class);  // mass of c on its own cells
        const Tensor mass_all = weighted_sum(p, coeff_col);      // mass of c on all valid cells
        if (n_class > 0) {
            terms.push_back(div(mass_class, mass_all));                      // precision
            terms.push_back(scale(mass_class, 1.0 / static_cast<double>(n_class)));  // recall
        }
        if (n_other > 0) {
            // Sum of (1 - p_c) over cells of other classes.
            const Tensor off_mass = sub(mass_all, mass_class);
            terms.push_back(scale(sub(Tensor::scalar(static_cast<double>(n_other)), off_mass),
                                  1.0 / static_cast<double>(n_other)));      // specificity
        }
    }
    return negated_log_mean(terms);
}

Tensor affinity_geometric(const Tensor& logits, const SemanticGrid& gt) {
    require_logit_grid(logits, gt);
    const int classes = logits.dim(1);
    check_labels(gt, classes, "affinity");
    const long n = gt.cell_count();
    const Tensor p = softmax_rows(logits);
    const Tensor occupied_mass = row_sum(slice_cols(p, 1, classes - 1));  // [n]

    Eigen::ArrayXd coeff_occ = Eigen::ArrayXd::Zero(n);
    Eigen::ArrayXd coeff_valid = Eigen::ArrayXd::Zero(n);
    long n_occ = 0, n_empty = 0;
    for (long i = 0; i < n; ++i) {
        const std::uint8_t l = gt.labels[static_cast<std::size_t>(i)];
        if (l == SemanticGrid::kIgnore) continue;
        coeff_valid[i] = 1.0;
        if (l >= 1) {
            coeff_occ[i] = 1.0;
            ++n_occ;
        } else {
            ++n_empty;
        }
    }
    const Tensor mass_occ = weighted_sum(occupied_mass, coeff_occ);
    const Tensor mass_all = weighted_sum(occupied_mass, coeff_valid);

    std::vector<Tensor> terms;
    if (n_occ > 0) {
        terms.push_back(div(mass_occ, mass_all));
        terms.push_back(scale(mass_occ, 1.0 / static_cast<double>(n_occ)));
    }
    if (n_empty > 0) {
        const Tensor off_mass = sub(mass_all, mass_occ);
        terms.push_back(scale(sub(Tensor::scalar(static_cast<double>(n_empty)), off_mass),
                              1.0 / static_cast<double>(n_empty)));
    }
    return negated_log_mean(terms);
}

Tensor scene_loss(const Tensor& logits, const SemanticGrid& gt,
                  const Eigen::ArrayXd& class_weights, bool with_affinity) {
    Tensor loss = semantic_loss(logits, gt, class_weights);
    if (with_affinity)
        loss = add(loss, add(affinity_semantic(logits, gt), affinity_geometric(logits, gt)));
    return loss;
}

SemanticGrid labels_from_logits(const Tensor& logits, const VolumeSpec& spec) {
    spec.validate();
    if (logits.rank() != 2 || logits.dim(0) != spec.cell_count(Resolution::output))
        throw std::invalid_argument("decode: logits must be [output cells, classes]");
    const int classes = logits.dim(1);
    if (classes < 2 || classes > 255)
        throw std::invalid_argument("decode: unsupported class count");
    SemanticGrid out = SemanticGrid::filled(spec.dims, 0);
    const Eigen::ArrayXd& v = logits.values();
    for (long i = 0; i < logits.dim(0); ++i) {
        int best = 0;
        double best_v = v[i * classes];
        for (int c = 1; c < classes; ++c)
            if (v[i * classes + c] > best_v) {
                best_v = v[i * classes + c];
                best = c;
            }
        out.labels[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(best);
    }
    return out;
}

ConfusionCounts& ConfusionCounts::operator+=(const ConfusionCounts& other) {
    if (classes == 0) {
        *this = other;
        return *this;
    }
    if (other.classes != classes)
        throw std::invalid_argument("confusion counts: class count mismatch");
    for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
    return *this;
}

ConfusionCounts range_confusion(const SemanticGrid& pred, const SemanticGrid& gt,
                                const VolumeSpec& spec, double range, int class_count) {
    spec.validate();
    if (pred.dims != spec.dims || gt.dims != spec.dims)
        throw std::invalid_argument("confusion: grids must be at output resolution");
    check_labels(gt, class_count, "confusion ground truth");
    for (const std::uint8_t l : pred.labels)
        if (l >= class_count)
            throw std::invalid_argument("confusion: prediction label out of class range");
    const Eigen::Vector3d extent = spec.extent();
    if (!(range > 0) || range > extent.x() || range > extent.y())
        throw std::invalid_argument("confusion: range must be positive and within the volume");

    ConfusionCounts counts(class_count);
    for (int i = 0; i < spec.dims[0]; ++i)
        for (int j = 0; j < spec.dims[1]; ++j)
            for (int k = 0; k < spec.dims[2]; ++k) {
                const Eigen::Vector3d c = voxel_center({i, j, k}, spec, Resolution::output);
                if (c.x() < 0 || c.x() >= range) continue;
                if (c.y() < -range / 2 || c.y() >= range / 2) continue;
                const long f = gt.index(i, j, k);
                const std::uint8_t g = gt.labels[static_cast<std::size_t>(f)];
                if (g == SemanticGrid::kIgnore) continue;
                ++counts.at(g, pred.labels[static_cast<std::size_t>(f)]);
            }
    return counts;
}

SegMetrics metrics_from_confusion(const ConfusionCounts& counts) {
    if (counts.classes < 2) throw std::invalid_argument("metrics: need at least two classes");
    const int m = counts.classes;
    SegMetrics out;

    long tp = 0, fp = 0, fn = 0;
    for (int g = 0; g < m; ++g)
        for (int p = 0; p < m; ++p) {
            if (g >= 1 && p >= 1) tp += counts.at(g, p);
            if (g == 0 && p >= 1) fp += counts.at(g, p);
            if (g >= 1 && p == 0) fn += counts.at(g, p);
        }
    out.occ_iou = tp + fp + fn == 0 ? 1.0 : static_cast<double>(tp) / (tp + fp + fn);
    out.occ_precision = tp + fp == 0 ? (tp + fn == 0 ? 1.0 : 0.0)
                                     : static_cast<double>(tp) / (tp + fp);
    out.occ_recall = tp + fn == 0 ? (tp + fp == 0 ? 1.0 : 0.0)
                                  : static_cast<double>(tp) / (tp + fn);

    out.class_iou.assign(static_cast<std::size_t>(m), std::nan(""));
    out.class_counted.assign(static_cast<std::size_t>(m), 0);
    double iou_sum = 0;
    int iou_n = 0;
    for (int c = 1; c < m; ++c) {
        long ctp = counts.at(c, c), cfp = 0, cfn = 0;
        for (int o = 0; o < m; ++o) {
            if (o == c) continue;
            cfp += counts.at(o, c);
            cfn += counts.at(c, o);
        }
        if (ctp + cfp + cfn == 0) continue;  // absent from both grids in this crop
        const double iou = static_cast<double>(ctp) / (ctp + cfp + cfn);
        out.class_iou[static_cast<std::size_t>(c)] = iou;
        out.class_counted[static_cast<std::size_t>(c)] = 1;
        iou_sum += iou;
        ++iou_n;
    }
    out.miou = iou_n == 0 ? 1.0 : iou_sum / iou_n;
    return out;
}

std::vector<RangeReport> evaluate(const SemanticGrid& pred, const SemanticGrid& gt,
                                  const VolumeSpec& spec, const std::vector<double>& ranges,
                                  int class_count) {
    if (ranges.empty()) throw std::invalid_argument("evaluate: need at least one range");
    std::vector<RangeReport> out;
    for (const double r : ranges) {
        RangeReport report;
        report.range = r;
        report.counts = range_confusion(pred, gt, spec, r, class_count);
        report.metrics = metrics_from_confusion(report.counts);
        out.push_back(std::move(report));
    }
    return out;
}

std::string format_report(const std::vector<RangeReport>& reports) {
    std::string out;
    char buf[128];
    for (const auto& r : reports) {
        std::snprintf(buf, sizeof buf,
                      "range %5.2f m | occ IoU %6.2f%% P %6.2f%% R %6.2f%% | mIoU %6.2f%% |",
                      r.range, 100 * r.metrics.occ_iou, 100 * r.metrics.occ_precision,
                      100 * r.metrics.occ_recall, 100 * r.metrics.miou);
        out += buf;
        for (int c = 1; c < r.counts.classes; ++c) {
            if (r.metrics.class_counted[static_cast<std::size_t>(c)])
                std::snprintf(buf, sizeof buf, " %d:%.2f%%", c,
                              100 * r.metrics.class_iou[static_cast<std::size_t>(c)]);
            else
                std::snprintf(buf, sizeof buf, " %d:--", c);
            out += buf;
        }
        out += '\n';
    }
    return out;
}

}  // namespace ssc
