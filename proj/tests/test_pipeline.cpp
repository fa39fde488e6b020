#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "ssc/pipeline.hpp"
#include "testutil.hpp"

using ssc::LoadedScene;
using ssc::OccupancyGrid;
using ssc::RunConfig;
using ssc::Tensor;

namespace {

namespace fs = std::filesystem;

RunConfig tiny_config() {
    RunConfig c = RunConfig::desk_default();
    c.volume.origin = Eigen::Vector3d(0.0, -1.6, -0.4);
    c.volume.voxel_size = 0.4;
    c.volume.dims = {8, 8, 4};
    c.volume.query_dims = {4, 4, 2};
    c.d = 8;
    c.n_samples = 2;
    c.cross_layers = 1;
    c.self_layers = 1;
    c.feature_scale_div = 2;
    c.class_count = 3;
    c.camera.fu = c.camera.fv = 16.0;
    c.camera.cu = c.camera.cv = 16.0;
    c.camera.width = c.camera.height = 32;
    c.min_objects = 1;
    c.max_objects = 3;
    c.lr = 1e-3;
    c.eval_ranges = {1.6, 3.2};
    c.seed = 5;
    c.validate();
    return c;
}

fs::path temp_dir(const char* name) {
    const fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p, std::ios::binary);
    REQUIRE(f);
    return std::string((std::istreambuf_iterator<char>(f)), {});
}

std::vector<fs::path> relative_files(const fs::path& root) {
    std::vector<fs::path> out;
    for (const auto& e : fs::recursive_directory_iterator(root))
        if (e.is_regular_file()) out.push_back(fs::relative(e.path(), root));
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<LoadedScene> make_dataset(const RunConfig& cfg, const char* name, int scenes,
                                      std::uint64_t base_seed) {
    const fs::path dir = temp_dir(name);
    const auto entries = ssc::synthesize_dataset(cfg, dir.string(), scenes, base_seed);
    std::vector<LoadedScene> out;
    for (const auto& e : entries) out.push_back(ssc::load_scene_sample(e, cfg));
    return out;
}

}  // namespace

TEST_CASE("frame poses look forward from increasing standoff") {
    const RunConfig cfg = tiny_config();
    const ssc::CameraPose p0 = ssc::frame_pose(cfg, 0);
    p0.validate();
    CHECK((p0.center_in_ego() - Eigen::Vector3d(0, 0, cfg.camera_height)).norm() < 1e-12);

    RunConfig three = cfg;
    three.frames = 3;
    const ssc::CameraPose p2 = ssc::frame_pose(three, 2);
    CHECK((p2.center_in_ego() -
           Eigen::Vector3d(-2 * cfg.frame_spacing, 0, cfg.camera_height)).norm() < 1e-12);

    // a point straight ahead sits on the optical axis
    const Eigen::Vector3d ahead(2.0, 0.0, cfg.camera_height);
    const Eigen::Vector3d cam = p0.to_camera(ahead);
    CHECK(cam.z() == doctest::Approx(2.0));
    CHECK(std::abs(cam.x()) < 1e-12);
    CHECK(std::abs(cam.y()) < 1e-12);

    CHECK_THROWS_AS(ssc::frame_pose(cfg, -1), std::invalid_argument);
    CHECK_THROWS_AS(ssc::frame_pose(cfg, cfg.frames), std::invalid_argument);
}

TEST_CASE("dataset synthesis is deterministic and byte-identical") {
    const RunConfig cfg = tiny_config();
    const fs::path a = temp_dir("ssc_test_ds_a");
    const fs::path b = temp_dir("ssc_test_ds_b");
    const auto ea = ssc::synthesize_dataset(cfg, a.string(), 2, 9);
    const auto eb = ssc::synthesize_dataset(cfg, b.string(), 2, 9);
    REQUIRE(ea.size() == 2);
    CHECK(ea[0].seed == eb[0].seed);

    const auto fa = relative_files(a);
    const auto fb = relative_files(b);
    REQUIRE(fa == fb);
    CHECK(fa.size() == 2 * 5 + 1);  // per scene: scene, gt, depth, image, camera; plus manifest
    for (const auto& rel : fa) CHECK(slurp(a / rel) == slurp(b / rel));

    // a different dataset seed actually changes the data
    const fs::path c = temp_dir("ssc_test_ds_c");
    ssc::synthesize_dataset(cfg, c.string(), 2, 10);
    CHECK(slurp(a / "scene_000" / "gt.bin") != slurp(c / "scene_000" / "gt.bin"));
}

TEST_CASE("manifest round trips and resolves paths against its directory") {
    const RunConfig cfg = tiny_config();
    const fs::path dir = temp_dir("ssc_test_ds_manifest");
    const auto entries = ssc::synthesize_dataset(cfg, dir.string(), 2, 3);
    REQUIRE(entries.size() == 2);
    for (const auto& e : entries) {
        CHECK(fs::exists(e.scene));
        CHECK(fs::exists(e.gt));
        REQUIRE(e.depths.size() == static_cast<std::size_t>(cfg.frames));
        for (const auto& p : e.depths) CHECK(fs::exists(p));
        for (const auto& p : e.images) CHECK(fs::exists(p));
        for (const auto& p : e.cameras) CHECK(fs::exists(p));
    }

    CHECK_THROWS_AS(ssc::load_manifest("/nonexistent/manifest.txt"), std::runtime_error);
    const fs::path bogus = fs::temp_directory_path() / "ssc_test_bad_manifest.txt";
    std::ofstream(bogus) << "something else\n";
    CHECK_THROWS_AS(ssc::load_manifest(bogus.string()), std::runtime_error);
    std::ofstream(bogus) << "manifest v1\nscenes 2\nscene 1 a b 0\n";  // second scene missing
    CHECK_THROWS_AS(ssc::load_manifest(bogus.string()), std::runtime_error);
}

TEST_CASE("loaded scenes carry aligned grids") {
    const RunConfig cfg = tiny_config();
    const auto scenes = make_dataset(cfg, "ssc_test_ds_load", 2, 9);
    for (const auto& s : scenes) {
        CHECK(s.gt.dims == cfg.volume.dims);
        CHECK(s.voxelized_depth.dims == cfg.volume.dims);
        CHECK(s.pooled_depth.dims == cfg.volume.query_dims);
        CHECK(s.pooled_gt.dims == cfg.volume.query_dims);
        CHECK(s.voxelized_depth.popcount() > 0);
        CHECK(s.pooled_gt.popcount() > 0);
        REQUIRE(s.images.size() == static_cast<std::size_t>(cfg.frames));
        CHECK(s.images[0].intrinsics.width == cfg.camera.width);
        CHECK(s.images[0].frame_index == 0);
        CHECK(s.depths[0].width == cfg.camera.width);
    }

    // a config with another volume rejects the dataset
    const fs::path dir = fs::temp_directory_path() / "ssc_test_ds_load";
    const auto entries = ssc::load_manifest((dir / "manifest.txt").string());
    RunConfig other = cfg;
    other.volume.dims = {16, 16, 4};
    other.volume.query_dims = {8, 8, 2};
    other.eval_ranges = {1.6};
    CHECK_THROWS_AS(ssc::load_scene_sample(entries[0], other), std::runtime_error);
}

TEST_CASE("adam matches a hand-stepped reference on a quadratic") {
    Tensor w = Tensor::from_values({2}, {1.0, -2.0}, true);
    const std::vector<std::pair<std::string, Tensor>> params = {{"w", w}};
    ssc::AdamOptimizer adam(0.1);

    Eigen::ArrayXd ref = w.values();
    Eigen::ArrayXd m = Eigen::ArrayXd::Zero(2), v = Eigen::ArrayXd::Zero(2);
    for (int t = 1; t <= 3; ++t) {
        w.zero_grad();
        Tensor loss = ssc::sum(ssc::mul(w, w));
        loss.backward();

        const Eigen::ArrayXd g = 2.0 * ref;
        m = 0.9 * m + 0.1 * g;
        v = 0.999 * v + 0.001 * g.square();
        const Eigen::ArrayXd mhat = m / (1.0 - std::pow(0.9, t));
        const Eigen::ArrayXd vhat = v / (1.0 - std::pow(0.999, t));
        ref -= 0.1 * mhat / (vhat.sqrt() + 1e-8);

        adam.update(params);
        CHECK((w.values() - ref).abs().maxCoeff() < 1e-14);
    }
    CHECK(adam.step == 3);
}

TEST_CASE("adam state restores through its arrays") {
    const auto run_steps = [](ssc::AdamOptimizer& adam, Tensor& w, int n) {
        const std::vector<std::pair<std::string, Tensor>> params = {{"w", w}};
        for (int i = 0; i < n; ++i) {
            w.zero_grad();
            ssc::sum(ssc::mul(w, ssc::mul(w, w))).backward();
            adam.update(params);
        }
    };
    Tensor wa = Tensor::from_values({3}, {0.4, -0.7, 1.1}, true);
    ssc::AdamOptimizer a(0.05);
    run_steps(a, wa, 4);

    Tensor wb = Tensor::from_values({3}, {0.0, 0.0, 0.0}, true);
    wb.leaf_values() = wa.values();
    ssc::AdamOptimizer b(0.05);
    b.load_state(a.state_arrays());
    CHECK(b.step == 4);

    run_steps(a, wa, 3);
    run_steps(b, wb, 3);
    CHECK((wa.values() == wb.values()).all());
}

TEST_CASE("query masks cover every mode") {
    RunConfig cfg = tiny_config();
    const auto scenes = make_dataset(cfg, "ssc_test_ds_mask", 1, 21);
    const LoadedScene& s = scenes[0];
    const long n_q = cfg.volume.cell_count(ssc::Resolution::query);

    cfg.query_mode = ssc::QueryMode::dense;
    CHECK(ssc::select_query_mask(cfg, s, nullptr, 1).popcount() == n_q);

    cfg.query_mode = ssc::QueryMode::random;
    cfg.random_query_fraction = 0.25;
    const OccupancyGrid r1 = ssc::select_query_mask(cfg, s, nullptr, 1);
    CHECK(r1.popcount() == (n_q + 3) / 4);
    const OccupancyGrid r1b = ssc::select_query_mask(cfg, s, nullptr, 1);
    CHECK(r1.bits == r1b.bits);
    const OccupancyGrid r2 = ssc::select_query_mask(cfg, s, nullptr, 2);
    CHECK(r2.popcount() == r1.popcount());
    CHECK(r1.bits != r2.bits);

    cfg.query_mode = ssc::QueryMode::occupancy;
    cfg.occupancy_source = ssc::OccupancySource::oracle;
    CHECK(ssc::select_query_mask(cfg, s, nullptr, 1).bits == s.pooled_gt.bits);
    cfg.occupancy_source = ssc::OccupancySource::raw_depth;
    CHECK(ssc::select_query_mask(cfg, s, nullptr, 1).bits == s.pooled_depth.bits);

    cfg.occupancy_source = ssc::OccupancySource::net;
    CHECK_THROWS_AS(ssc::select_query_mask(cfg, s, nullptr, 1), std::invalid_argument);
    const ssc::Stage1Model stage1 = ssc::Stage1Model::init(cfg);
    const OccupancyGrid from_net = ssc::select_query_mask(cfg, s, &stage1, 1);
    CHECK(from_net.bits == ssc::predict_occupancy(s.voxelized_depth, stage1.net).second.bits);
}

TEST_CASE("the full second stage produces finite logits of the right shape") {
    RunConfig cfg = tiny_config();
    const auto scenes = make_dataset(cfg, "ssc_test_ds_fwd", 1, 31);
    const LoadedScene& s = scenes[0];
    const ssc::Stage2Model model = ssc::Stage2Model::init(cfg);

    ssc::AttentionTrace trace;
    const Tensor logits = ssc::stage2_forward(cfg, model, s, s.pooled_gt, &trace);
    REQUIRE(logits.shape() ==
            std::vector<int>{static_cast<int>(cfg.volume.cell_count(ssc::Resolution::output)),
                             cfg.class_count + 1});
    CHECK(logits.values().isFinite().all());
    CHECK(trace.entries.size() ==
          static_cast<std::size_t>(cfg.cross_layers * cfg.frames + cfg.self_layers));

    // ablations bypass their stages and change the output
    RunConfig no_cross = cfg;
    no_cross.disable_cross_attention = true;
    const Tensor without_cross = ssc::stage2_forward(no_cross, model, s, s.pooled_gt);
    CHECK((without_cross.values() != logits.values()).any());

    RunConfig no_self = cfg;
    no_self.disable_self_attention = true;
    ssc::AttentionTrace self_off;
    const Tensor without_self = ssc::stage2_forward(no_self, model, s, s.pooled_gt, &self_off);
    CHECK(self_off.entries.size() == static_cast<std::size_t>(cfg.cross_layers * cfg.frames));
    CHECK((without_self.values() != logits.values()).any());
}

TEST_CASE("degenerate inputs keep the forward pass finite") {
    RunConfig cfg = tiny_config();
    const auto scenes = make_dataset(cfg, "ssc_test_ds_degen", 1, 41);
    const ssc::Stage2Model model = ssc::Stage2Model::init(cfg);

    // an all-zero query mask: pure mask-token path
    LoadedScene s = scenes[0];
    const Tensor empty_mask =
        ssc::stage2_forward(cfg, model, s, OccupancyGrid::zeros(cfg.volume.query_dims));
    CHECK(empty_mask.values().isFinite().all());

    // a depth raster with no valid pixel
    s.depths[0] = ssc::DepthRaster::invalid_raster(cfg.camera.width, cfg.camera.height);
    s.voxelized_depth = ssc::voxelize_points({}, cfg.volume);
    s.pooled_depth = ssc::downsample_occupancy(s.voxelized_depth, cfg.volume);
    RunConfig raw = cfg;
    raw.query_mode = ssc::QueryMode::occupancy;
    raw.occupancy_source = ssc::OccupancySource::raw_depth;
    const OccupancyGrid mask = ssc::select_query_mask(raw, s, nullptr, 1);
    CHECK(mask.popcount() == 0);
    CHECK(ssc::stage2_forward(raw, model, s, mask).values().isFinite().all());

    // a scene with no objects still trains the first stage's input path
    RunConfig bare = cfg;
    bare.min_objects = bare.max_objects = 0;
    const auto empty_scenes = make_dataset(bare, "ssc_test_ds_bare", 1, 43);
    CHECK(ssc::stage2_forward(bare, model, empty_scenes[0], empty_scenes[0].pooled_gt)
              .values()
              .isFinite()
              .all());
}

TEST_CASE("a short first-stage run reduces the loss and reproduces bitwise") {
    const RunConfig cfg = tiny_config();
    const auto scenes = make_dataset(cfg, "ssc_test_ds_train1", 2, 51);

    ssc::Stage1Model m1 = ssc::Stage1Model::init(cfg);
    ssc::AdamOptimizer a1(1e-2);
    const auto l1 = ssc::train_stage1(cfg, m1, scenes, 30, a1);
    REQUIRE(l1.size() == 30);
    CHECK(l1.back() < l1.front());
    for (const double l : l1) CHECK(std::isfinite(l));
    CHECK(a1.step == 30);

    ssc::Stage1Model m2 = ssc::Stage1Model::init(cfg);
    ssc::AdamOptimizer a2(1e-2);
    const auto l2 = ssc::train_stage1(cfg, m2, scenes, 30, a2);
    CHECK(l1 == l2);
}

TEST_CASE("a short second-stage run reduces the loss") {
    RunConfig cfg = tiny_config();
    cfg.occupancy_source = ssc::OccupancySource::oracle;
    const auto scenes = make_dataset(cfg, "ssc_test_ds_train2", 2, 61);

    ssc::Stage2Model model = ssc::Stage2Model::init(cfg);
    ssc::AdamOptimizer adam(3e-3);
    const auto losses = ssc::train_stage2(cfg, model, nullptr, scenes, 25, adam);
    REQUIRE(losses.size() == 25);
    CHECK(losses.back() < losses.front());
    for (const double l : losses) CHECK(std::isfinite(l));

    // fresh second run reproduces the loss curve bitwise
    ssc::Stage2Model again = ssc::Stage2Model::init(cfg);
    ssc::AdamOptimizer adam2(3e-3);
    CHECK(ssc::train_stage2(cfg, again, nullptr, scenes, 25, adam2) == losses);
}

TEST_CASE("a poisoned parameter aborts training with a numeric failure") {
    RunConfig cfg = tiny_config();
    cfg.occupancy_source = ssc::OccupancySource::oracle;
    const auto scenes = make_dataset(cfg, "ssc_test_ds_poison", 1, 71);

    ssc::Stage1Model s1 = ssc::Stage1Model::init(cfg);
    Tensor(s1.named_params()[0].second).leaf_values()[0] =
        std::numeric_limits<double>::quiet_NaN();
    ssc::AdamOptimizer a(1e-3);
    CHECK_THROWS_AS(ssc::train_stage1(cfg, s1, scenes, 3, a), ssc::NumericFailure);

    ssc::Stage2Model s2 = ssc::Stage2Model::init(cfg);
    Tensor(s2.named_params()[0].second).leaf_values()[0] =
        std::numeric_limits<double>::quiet_NaN();
    ssc::AdamOptimizer b(1e-3);
    CHECK_THROWS_AS(ssc::train_stage2(cfg, s2, nullptr, scenes, 3, b), ssc::NumericFailure);
}

TEST_CASE("models restore bit-exactly and resume training seamlessly") {
    RunConfig cfg = tiny_config();
    cfg.occupancy_source = ssc::OccupancySource::oracle;
    const auto scenes = make_dataset(cfg, "ssc_test_ds_resume", 2, 81);
    const fs::path path = fs::temp_directory_path() / "ssc_test_model_resume.bin";

    ssc::Stage2Model a = ssc::Stage2Model::init(cfg);
    ssc::AdamOptimizer adam_a(2e-3);
    ssc::train_stage2(cfg, a, nullptr, scenes, 6, adam_a);
    a.save(path.string(), &adam_a);

    RunConfig other = cfg;
    other.seed = 999;  // different init, fully overwritten by the load
    ssc::Stage2Model b = ssc::Stage2Model::init(other);
    ssc::AdamOptimizer adam_b(2e-3);
    b.load(path.string(), &adam_b);
    CHECK(adam_b.step == 6);
    const auto pa = a.named_params();
    const auto pb = b.named_params();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i].first == pb[i].first);
        CHECK((pa[i].second.values() == pb[i].second.values()).all());
    }

    // continuing either model yields the same losses
    const auto la = ssc::train_stage2(cfg, a, nullptr, scenes, 4, adam_a);
    const auto lb = ssc::train_stage2(cfg, b, nullptr, scenes, 4, adam_b);
    CHECK(la == lb);

    // a first-stage file does not fit the second-stage model
    ssc::Stage1Model s1 = ssc::Stage1Model::init(cfg);
    const fs::path p1 = fs::temp_directory_path() / "ssc_test_model_s1.bin";
    s1.save(p1.string());
    ssc::Stage2Model c = ssc::Stage2Model::init(cfg);
    CHECK_THROWS_AS(c.load(p1.string()), ssc::CheckpointMismatch);
}

TEST_CASE("class weights span every label value") {
    const RunConfig cfg = tiny_config();
    const auto scenes = make_dataset(cfg, "ssc_test_ds_weights", 2, 91);
    const Eigen::ArrayXd w = ssc::dataset_class_weights(cfg, scenes);
    REQUIRE(w.size() == cfg.class_count + 1);
    CHECK((w > 0).all());
    CHECK(w.mean() == doctest::Approx(1.0).epsilon(1e-12));
    // empty dominates the synthetic scenes, so it gets the smallest weight
    CHECK(w[0] == w.minCoeff());
}

TEST_CASE("prediction decodes to an output-resolution labeling") {
    RunConfig cfg = tiny_config();
    cfg.occupancy_source = ssc::OccupancySource::oracle;
    const auto scenes = make_dataset(cfg, "ssc_test_ds_pred", 1, 101);
    const ssc::Stage2Model model = ssc::Stage2Model::init(cfg);

    const ssc::SemanticGrid pred = ssc::predict_scene(cfg, model, nullptr, scenes[0]);
    CHECK(pred.dims == cfg.volume.dims);
    for (const auto label : pred.labels) CHECK(label <= cfg.class_count);
    const ssc::SemanticGrid again = ssc::predict_scene(cfg, model, nullptr, scenes[0]);
    CHECK(pred.labels == again.labels);
}

TEST_CASE("evaluation aggregates confusion counts and ignores thread count") {
    RunConfig cfg = tiny_config();
    cfg.occupancy_source = ssc::OccupancySource::oracle;
    const auto scenes = make_dataset(cfg, "ssc_test_ds_eval", 3, 111);
    const ssc::Stage2Model model = ssc::Stage2Model::init(cfg);

    unsetenv("SSC_THREADS");
    const ssc::EvalResult serial = ssc::evaluate_scenes(cfg, model, nullptr, scenes);
    REQUIRE(serial.per_scene.size() == 3);
    REQUIRE(serial.aggregate.size() == cfg.eval_ranges.size());

    for (std::size_t r = 0; r < cfg.eval_ranges.size(); ++r) {
        ssc::ConfusionCounts sum;
        for (const auto& reports : serial.per_scene) sum += reports[r].counts;
        CHECK(sum.counts == serial.aggregate[r].counts.counts);
        const ssc::SegMetrics m = ssc::metrics_from_confusion(sum);
        CHECK(m.miou == serial.aggregate[r].metrics.miou);
        CHECK(m.occ_iou == serial.aggregate[r].metrics.occ_iou);
    }

    setenv("SSC_THREADS", "3", 1);
    const ssc::EvalResult parallel = ssc::evaluate_scenes(cfg, model, nullptr, scenes);
    unsetenv("SSC_THREADS");
    for (std::size_t i = 0; i < 3; ++i)
        for (std::size_t r = 0; r < cfg.eval_ranges.size(); ++r)
            CHECK(serial.per_scene[i][r].counts.counts == parallel.per_scene[i][r].counts.counts);
    for (std::size_t r = 0; r < cfg.eval_ranges.size(); ++r)
        CHECK(serial.aggregate[r].counts.counts == parallel.aggregate[r].counts.counts);
}
