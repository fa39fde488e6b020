#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "ssc/grad_check.hpp"
#include "ssc/loss_metrics.hpp"
#include "testutil.hpp"

using namespace ssc;

namespace {

VolumeSpec tiny_volume() {
    VolumeSpec spec;
    spec.origin = Eigen::Vector3d(0.0, -0.8, -0.4);
    spec.voxel_size = 0.4;
    spec.dims = {4, 4, 2};
    spec.query_dims = {2, 2, 1};
    return spec;
}

SemanticGrid random_labels(Rng& rng, const std::array<int, 3>& dims, int class_count,
                           double ignore_rate = 0.0) {
    SemanticGrid g = SemanticGrid::filled(dims, 0);
    for (auto& l : g.labels) {
        if (rng.uniform() < ignore_rate) {
            l = SemanticGrid::kIgnore;
            continue;
        }
        l = static_cast<std::uint8_t>(rng.uniform_int(0, class_count - 1));
    }
    return g;
}

}  // namespace

TEST_CASE("class weights follow inverse frequency with mean one") {
    SemanticGrid a = SemanticGrid::filled({2, 2, 1}, 0);
    a.labels = {0, 0, 1, 2};
    SemanticGrid b = SemanticGrid::filled({2, 2, 1}, 0);
    b.labels = {1, 1, SemanticGrid::kIgnore, 0};

    // Counts over non-ignored cells: class0 3, class1 3, class2 1, class3 0; total 7.
    const Eigen::ArrayXd w = compute_class_weights({a, b}, 4);
    REQUIRE(w.size() == 4);
    Eigen::ArrayXd expect(4);
    expect << 7.0 / 3, 7.0 / 3, 7.0 / 1, 1.0 / (1.0 / (7 + 4));
    expect *= 4.0 / expect.sum();
    for (int c = 0; c < 4; ++c) CHECK(w[c] == doctest::Approx(expect[c]).epsilon(1e-12));
    CHECK(w.mean() == doctest::Approx(1.0).epsilon(1e-12));

    // All cells ignored: every class is "absent", weights all equal 1.
    SemanticGrid empty = SemanticGrid::filled({2, 2, 1}, SemanticGrid::kIgnore);
    const Eigen::ArrayXd uniform = compute_class_weights({empty}, 4);
    for (int c = 0; c < 4; ++c) CHECK(uniform[c] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("semantic loss equals a direct weighted cross entropy") {
    Rng rng(5);
    const int classes = 4;
    SemanticGrid gt = random_labels(rng, {2, 2, 2}, classes, 0.2);
    Tensor logits = testutil::rand_uniform(rng, {8, classes}, -2.0, 2.0, true);
    Eigen::ArrayXd weights(classes);
    weights << 0.5, 1.5, 1.0, 2.0;

    const Tensor loss = semantic_loss(logits, gt, weights);

    double expect = 0;
    long n_valid = 0;
    const Eigen::ArrayXd& x = logits.values();
    for (long i = 0; i < 8; ++i) {
        const std::uint8_t t = gt.labels[static_cast<std::size_t>(i)];
        if (t == SemanticGrid::kIgnore) continue;
        double mx = x[i * classes];
        for (int c = 1; c < classes; ++c) mx = std::max(mx, x[i * classes + c]);
        double lse = 0;
        for (int c = 0; c < classes; ++c) lse += std::exp(x[i * classes + c] - mx);
        lse = mx + std::log(lse);
        expect += weights[t] * (lse - x[i * classes + t]);
        ++n_valid;
    }
    REQUIRE(n_valid > 0);
    expect /= static_cast<double>(n_valid);
    CHECK(loss.value() == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("affinity losses on uniform logits reduce to log 2") {
    // Two cells, two classes, all logits equal: every softmax entry is 1/2,
    // and with one cell per class every precision/recall/specificity is 1/2.
    SemanticGrid gt = SemanticGrid::filled({2, 1, 1}, 0);
    gt.labels = {0, 1};
    Tensor logits = Tensor::zeros({2, 2}, true);

    CHECK(affinity_semantic(logits, gt).value() ==
          doctest::Approx(std::log(2.0)).epsilon(1e-9));
    CHECK(affinity_geometric(logits, gt).value() ==
          doctest::Approx(std::log(2.0)).epsilon(1e-9));
}

TEST_CASE("affinity vanishes for a confident correct prediction") {
    SemanticGrid gt = SemanticGrid::filled({2, 2, 1}, 0);
    gt.labels = {0, 1, 2, 1};
    Eigen::ArrayXd v = Eigen::ArrayXd::Constant(4 * 3, -40.0);
    for (int i = 0; i < 4; ++i) v[i * 3 + gt.labels[static_cast<std::size_t>(i)]] = 40.0;
    Tensor logits = Tensor::from_array({4, 3}, v, true);

    CHECK(std::abs(affinity_semantic(logits, gt).value()) < 1e-8);
    CHECK(std::abs(affinity_geometric(logits, gt).value()) < 1e-8);
}

TEST_CASE("affinity skips undefined terms") {
    // Single class present (all occupied): the geometric specificity and the
    // empty-class precision/recall are undefined and must be skipped, not NaN.
    SemanticGrid gt = SemanticGrid::filled({2, 1, 1}, 1);
    Rng rng(3);
    Tensor logits = testutil::rand_uniform(rng, {2, 3}, -1.0, 1.0, true);
    CHECK(std::isfinite(affinity_semantic(logits, gt).value()));
    CHECK(std::isfinite(affinity_geometric(logits, gt).value()));

    // Everything ignored: the losses are defined and zero.
    SemanticGrid ignored = SemanticGrid::filled({2, 1, 1}, SemanticGrid::kIgnore);
    CHECK(affinity_semantic(logits, ignored).value() == 0.0);
    CHECK(affinity_geometric(logits, ignored).value() == 0.0);
}

TEST_CASE("loss gradients match finite differences") {
    Rng rng(11);
    const int classes = 3;
    SemanticGrid gt = random_labels(rng, {2, 2, 2}, classes, 0.15);
    Tensor logits = testutil::rand_uniform(rng, {8, classes}, -1.5, 1.5, true);
    const Eigen::ArrayXd weights = compute_class_weights({gt}, classes);

    for (const bool with_affinity : {false, true}) {
        const auto loss_fn = [&]() { return scene_loss(logits, gt, weights, with_affinity); };
        const GradCheckReport report = check_gradients(loss_fn, {{"logits", logits}});
        INFO("with_affinity=" << with_affinity << " " << report.worst);
        CHECK(report.passed);
        CHECK(report.max_rel_error < 1e-4);
    }
}

TEST_CASE("argmax decode") {
    const VolumeSpec spec = tiny_volume();
    Rng rng(13);
    Tensor logits = testutil::rand_uniform(rng, {32, 3}, -1.0, 1.0, false);
    const SemanticGrid decoded = labels_from_logits(logits, spec);
    const Eigen::ArrayXd& v = logits.values();
    for (long i = 0; i < 32; ++i) {
        int best = 0;
        for (int c = 1; c < 3; ++c)
            if (v[i * 3 + c] > v[i * 3 + best]) best = c;
        CHECK(decoded.labels[static_cast<std::size_t>(i)] == best);
    }
}

TEST_CASE("perfect prediction scores 100 percent everywhere") {
    const VolumeSpec spec = tiny_volume();
    Rng rng(17);
    const SemanticGrid gt = random_labels(rng, spec.dims, 4);
    const auto reports = evaluate(gt, gt, spec, {0.8, 1.6}, 4);
    REQUIRE(reports.size() == 2);
    for (const auto& r : reports) {
        CHECK(r.metrics.occ_iou == 1.0);
        CHECK(r.metrics.occ_precision == 1.0);
        CHECK(r.metrics.occ_recall == 1.0);
        CHECK(r.metrics.miou == 1.0);
    }
}

TEST_CASE("three-of-four overlap gives IoU one half") {
    // Ground truth occupies cells {a, b, c}; the prediction {b, c, d}.
    VolumeSpec spec;
    spec.origin = Eigen::Vector3d(0.0, -0.4, 0.0);
    spec.voxel_size = 0.4;
    spec.dims = {2, 2, 1};
    spec.query_dims = {2, 2, 1};
    SemanticGrid gt = SemanticGrid::filled(spec.dims, 0);
    SemanticGrid pred = SemanticGrid::filled(spec.dims, 0);
    gt.labels = {1, 1, 1, 0};
    pred.labels = {0, 1, 1, 1};

    const auto reports = evaluate(pred, gt, spec, {0.8}, 2);
    REQUIRE(reports.size() == 1);
    CHECK(reports[0].metrics.occ_iou == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(reports[0].metrics.occ_precision == doctest::Approx(2.0 / 3).epsilon(1e-12));
    CHECK(reports[0].metrics.occ_recall == doctest::Approx(2.0 / 3).epsilon(1e-12));
}

TEST_CASE("confusion counts match a brute-force oracle") {
    const VolumeSpec spec = tiny_volume();
    Rng rng(19);
    const std::vector<double> ranges = {0.4, 0.8, 1.6};
    for (int trial = 0; trial < 20; ++trial) {
        const SemanticGrid gt = random_labels(rng, spec.dims, 4, 0.1);
        const SemanticGrid pred = random_labels(rng, spec.dims, 4);
        for (const double range : ranges) {
            const ConfusionCounts counts = range_confusion(pred, gt, spec, range, 4);
            ConfusionCounts oracle(4);
            for (long f = 0; f < gt.cell_count(); ++f) {
                const int k = static_cast<int>(f % spec.dims[2]);
                const int j = static_cast<int>((f / spec.dims[2]) % spec.dims[1]);
                const int i = static_cast<int>(f / (spec.dims[2] * spec.dims[1]));
                const double cx = spec.origin.x() + (i + 0.5) * spec.voxel_size;
                const double cy = spec.origin.y() + (j + 0.5) * spec.voxel_size;
                if (cx < 0 || cx >= range || cy < -range / 2 || cy >= range / 2) continue;
                const std::uint8_t g = gt.labels[static_cast<std::size_t>(f)];
                if (g == SemanticGrid::kIgnore) continue;
                ++oracle.at(g, pred.labels[static_cast<std::size_t>(f)]);
            }
            REQUIRE(counts.counts == oracle.counts);
        }
    }
}

TEST_CASE("range validation and cropping") {
    const VolumeSpec spec = tiny_volume();
    Rng rng(23);
    const SemanticGrid gt = random_labels(rng, spec.dims, 3);
    const SemanticGrid pred = random_labels(rng, spec.dims, 3);

    CHECK_THROWS_AS((void)range_confusion(pred, gt, spec, 3.2, 3), std::invalid_argument);
    CHECK_THROWS_AS((void)range_confusion(pred, gt, spec, 0.0, 3), std::invalid_argument);
    CHECK_THROWS_AS((void)range_confusion(pred, gt, spec, -1.0, 3), std::invalid_argument);

    // Cells outside the crop cannot influence the counts.
    SemanticGrid gt_dirty = gt;
    SemanticGrid pred_dirty = pred;
    for (int i = 2; i < 4; ++i)  // x >= 0.8, outside range 0.8
        for (int j = 0; j < 4; ++j)
            for (int k = 0; k < 2; ++k) {
                gt_dirty.labels[static_cast<std::size_t>(gt.index(i, j, k))] = 2;
                pred_dirty.labels[static_cast<std::size_t>(gt.index(i, j, k))] = 1;
            }
    const ConfusionCounts a = range_confusion(pred, gt, spec, 0.8, 3);
    const ConfusionCounts b = range_confusion(pred_dirty, gt_dirty, spec, 0.8, 3);
    CHECK(a.counts == b.counts);
}

TEST_CASE("metrics conventions for empty denominators") {
    // Both grids entirely empty-class: nothing occupied, nothing present.
    ConfusionCounts counts(3);
    counts.at(0, 0) = 10;
    const SegMetrics m = metrics_from_confusion(counts);
    CHECK(m.occ_iou == 1.0);
    CHECK(m.occ_precision == 1.0);
    CHECK(m.occ_recall == 1.0);
    CHECK(m.miou == 1.0);
    CHECK_FALSE(m.class_counted[1]);
    CHECK_FALSE(m.class_counted[2]);

    // Prediction occupies, ground truth does not: precision 0, recall 0.
    ConfusionCounts fp_only(3);
    fp_only.at(0, 1) = 4;
    const SegMetrics mfp = metrics_from_confusion(fp_only);
    CHECK(mfp.occ_iou == 0.0);
    CHECK(mfp.occ_precision == 0.0);
    CHECK(mfp.occ_recall == 0.0);

    // A class absent from both grids is excluded; present classes average.
    ConfusionCounts mixed(4);
    mixed.at(1, 1) = 3;
    mixed.at(1, 0) = 1;  // class 1 IoU = 3/4
    mixed.at(2, 2) = 1;  // class 2 IoU = 1
    const SegMetrics mm = metrics_from_confusion(mixed);
    CHECK(mm.class_counted[1]);
    CHECK(mm.class_counted[2]);
    CHECK_FALSE(mm.class_counted[3]);
    CHECK(mm.miou == doctest::Approx((0.75 + 1.0) / 2).epsilon(1e-12));
}

TEST_CASE("scene loss toggles the affinity terms") {
    Rng rng(29);
    SemanticGrid gt = random_labels(rng, {2, 2, 1}, 3);
    Tensor logits = testutil::rand_uniform(rng, {4, 3}, -1.0, 1.0, true);
    const Eigen::ArrayXd weights = compute_class_weights({gt}, 3);

    const double ce = scene_loss(logits, gt, weights, false).value();
    const double full = scene_loss(logits, gt, weights, true).value();
    const double sem = affinity_semantic(logits, gt).value();
    const double geo = affinity_geometric(logits, gt).value();
    CHECK(ce == doctest::Approx(semantic_loss(logits, gt, weights).value()).epsilon(1e-15));
    CHECK(full == doctest::Approx(ce + sem + geo).epsilon(1e-12));
}

TEST_CASE("report formatting") {
    const VolumeSpec spec = tiny_volume();
    Rng rng(31);
    const SemanticGrid gt = random_labels(rng, spec.dims, 3);
    const auto reports = evaluate(gt, gt, spec, {0.8, 1.6}, 3);
    const std::string text = format_report(reports);
    CHECK(text.find("range  0.80 m") != std::string::npos);
    CHECK(text.find("range  1.60 m") != std::string::npos);
    CHECK(text.find("occ IoU 100.00%") != std::string::npos);
    CHECK(text.find("mIoU 100.00%") != std::string::npos);
}
