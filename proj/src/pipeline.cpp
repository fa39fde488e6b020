#include "ssc/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <thread>

namespace ssc {

namespace {

namespace fs = std::filesystem;

// Fixed salts so every consumer of the run seed draws an independent stream.
constexpr std::uint64_t kSaltStage1Init = 0x51a6e101;
constexpr std::uint64_t kSaltStage2Init = 0x51a6e202;
constexpr std::uint64_t kSaltScenePick1 = 0x9c42a11;
constexpr std::uint64_t kSaltScenePick2 = 0x9c42a22;
constexpr std::uint64_t kSaltQueryMask = 0x3a50c1;
constexpr std::uint64_t kSaltDepthNoise = 0xd09a;
constexpr std::uint64_t kSaltEvalMask = 0xe7a1;

std::string index_name(const char* prefix, int i) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s%03d", prefix, i);
    return buf;
}

}  // namespace

void AdamOptimizer::update(const std::vector<std::pair<std::string, Tensor>>& params) {
    ++step;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
    for (const auto& [name, t] : params) {
        const Eigen::ArrayXd& g = t.grad();
        auto mi = m.find(name);
        if (mi == m.end()) {
            mi = m.emplace(name, Eigen::ArrayXd::Zero(g.size())).first;
            v.emplace(name, Eigen::ArrayXd::Zero(g.size()));
        }
        Eigen::ArrayXd& mv = mi->second;
        Eigen::ArrayXd& vv = v.at(name);
        if (mv.size() != g.size())
            throw std::invalid_argument("optimizer: parameter size changed: " + name);
        mv = beta1 * mv + (1.0 - beta1) * g;
        vv = beta2 * vv + (1.0 - beta2) * g.square();
        Tensor handle = t;
        handle.leaf_values() -= lr * (mv / bc1) / ((vv / bc2).sqrt() + eps);
    }
}

std::vector<NamedArray> AdamOptimizer::state_arrays() const {
    std::vector<NamedArray> out;
    out.push_back({"adam.step", {1}, Eigen::ArrayXd::Constant(1, static_cast<double>(step))});
    for (const auto& [name, arr] : m)
        out.push_back({"adam.m." + name, {static_cast<int>(arr.size())}, arr});
    for (const auto& [name, arr] : v)
        out.push_back({"adam.v." + name, {static_cast<int>(arr.size())}, arr});
    return out;
}

void AdamOptimizer::load_state(const std::vector<NamedArray>& arrays) {
    for (const auto& a : arrays) {
        if (a.name == "adam.step") {
            step = static_cast<long>(a.data[0]);
        } else if (a.name.rfind("adam.m.", 0) == 0) {
            m[a.name.substr(7)] = a.data;
        } else if (a.name.rfind("adam.v.", 0) == 0) {
            v[a.name.substr(7)] = a.data;
        }
    }
}

CameraPose frame_pose(const RunConfig& config, int frame) {
    if (frame < 0 || frame >= config.frames)
        throw std::invalid_argument("frame index outside the configured rig");
    CameraPose pose;
    // Camera x right = ego -y, camera y down = ego -z, camera z forward = ego x.
    pose.rotation << 0, -1, 0, 0, 0, -1, 1, 0, 0;
    const Eigen::Vector3d center(-config.frame_spacing * frame, 0.0, config.camera_height);
    pose.translation = -pose.rotation * center;
    return pose;
}

std::vector<SceneSample> synthesize_dataset(const RunConfig& config, const std::string& dir,
                                            int scene_count, std::uint64_t base_seed) {
    config.validate();
    if (scene_count <= 0) throw std::invalid_argument("dataset: scene count must be positive");
    fs::create_directories(dir);

    std::vector<SceneSample> entries;
    for (int i = 0; i < scene_count; ++i) {
        const std::string scene_dir = index_name("scene_", i);
        fs::create_directories(fs::path(dir) / scene_dir);
        SceneSample sample;
        sample.seed = Rng::derive(base_seed, static_cast<std::uint64_t>(i));

        const auto [scene, gt] = generate_scene(sample.seed, config.volume, config.class_count,
                                                config.min_objects, config.max_objects);
        sample.scene = scene_dir + "/scene.txt";
        sample.gt = scene_dir + "/gt.bin";
        save_scene((fs::path(dir) / sample.scene).string(), scene);
        save_semantic_grid((fs::path(dir) / sample.gt).string(), gt, config.volume);

        for (int f = 0; f < config.frames; ++f) {
            const CameraPose pose = frame_pose(config, f);
            const DepthRaster depth =
                render_depth(scene, config.camera, pose, config.depth_noise_sigma,
                             Rng::derive(sample.seed, kSaltDepthNoise + static_cast<std::uint64_t>(f)));
            ImageFrame image = render_image(scene, config.camera, pose);
            image.frame_index = f;

            const std::string stem = scene_dir + "/" + index_name("frame_", f);
            sample.depths.push_back(stem + ".depth");
            sample.images.push_back(stem + ".ppm");
            sample.cameras.push_back(stem + ".camera");
            save_depth_raster((fs::path(dir) / sample.depths.back()).string(), depth);
            save_ppm((fs::path(dir) / sample.images.back()).string(), image);
            save_camera((fs::path(dir) / sample.cameras.back()).string(), config.camera, pose);
        }
        entries.push_back(std::move(sample));
    }
    save_manifest((fs::path(dir) / "manifest.txt").string(), entries);
    return load_manifest((fs::path(dir) / "manifest.txt").string());
}

void save_manifest(const std::string& path, const std::vector<SceneSample>& entries) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write manifest: " + path);
    f << "manifest v1\n";
    f << "scenes " << entries.size() << '\n';
    for (const auto& e : entries) {
        if (e.depths.size() != e.images.size() || e.depths.size() != e.cameras.size())
            throw std::invalid_argument("manifest: frame lists must align");
        f << "scene " << e.seed << ' ' << e.scene << ' ' << e.gt << ' ' << e.depths.size()
          << '\n';
        for (std::size_t i = 0; i < e.depths.size(); ++i)
            f << "frame " << e.depths[i] << ' ' << e.images[i] << ' ' << e.cameras[i] << '\n';
    }
    if (!f) throw std::runtime_error("write failed: " + path);
}

std::vector<SceneSample> load_manifest(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot read manifest: " + path);
    const fs::path base = fs::path(path).parent_path();
    const auto resolve = [&](const std::string& rel) { return (base / rel).string(); };

    std::string header;
    std::getline(f, header);
    if (header != "manifest v1") throw std::runtime_error("not a manifest: " + path);
    std::string word;
    std::size_t count = 0;
    if (!(f >> word >> count) || word != "scenes")
        throw std::runtime_error("manifest missing scene count: " + path);

    std::vector<SceneSample> entries;
    for (std::size_t i = 0; i < count; ++i) {
        SceneSample e;
        std::size_t frames = 0;
        std::string scene_rel, gt_rel;
        if (!(f >> word >> e.seed >> scene_rel >> gt_rel >> frames) || word != "scene")
            throw std::runtime_error("manifest truncated: " + path);
        e.scene = resolve(scene_rel);
        e.gt = resolve(gt_rel);
        for (std::size_t j = 0; j < frames; ++j) {
            std::string d, im, cam;
            if (!(f >> word >> d >> im >> cam) || word != "frame")
                throw std::runtime_error("manifest truncated: " + path);
            e.depths.push_back(resolve(d));
            e.images.push_back(resolve(im));
            e.cameras.push_back(resolve(cam));
        }
        entries.push_back(std::move(e));
    }
    return entries;
}

LoadedScene load_scene_sample(const SceneSample& sample, const RunConfig& config) {
    LoadedScene out;
    out.scene = load_scene(sample.scene);
    out.gt = load_semantic_grid(sample.gt);
    if (out.gt.dims != config.volume.dims)
        throw std::runtime_error("scene labels do not match the configured volume: " +
                                 sample.gt);
    if (sample.depths.empty() || sample.depths.size() != sample.images.size() ||
        sample.depths.size() != sample.cameras.size())
        throw std::runtime_error("scene sample needs aligned frame files: " + sample.scene);

    for (std::size_t f = 0; f < sample.depths.size(); ++f) {
        out.depths.push_back(load_depth_raster(sample.depths[f]));
        ImageFrame image = load_ppm(sample.images[f]);
        const auto [intr, pose] = load_camera(sample.cameras[f]);
        image.intrinsics = intr;
        image.pose = pose;
        image.frame_index = static_cast<int>(f);
        image.validate();
        if (out.depths.back().width != intr.width || out.depths.back().height != intr.height)
            throw std::runtime_error("depth extents disagree with the camera: " +
                                     sample.depths[f]);
        out.images.push_back(std::move(image));
    }

    // Query proposal sees the current frame's depth.
    const auto points =
        back_project(out.depths[0], out.images[0].intrinsics, out.images[0].pose);
    out.voxelized_depth = voxelize_points(points, config.volume);
    out.pooled_depth = downsample_occupancy(out.voxelized_depth, config.volume);
    out.pooled_gt = downsample_occupancy(out.gt.occupancy(), config.volume);
    return out;
}

Stage1Model Stage1Model::init(const RunConfig& config) {
    config.validate();
    Rng rng(Rng::derive(config.seed, kSaltStage1Init));
    Stage1Model model;
    model.net = OccupancyNet::init(rng, config.volume);
    return model;
}

std::vector<std::pair<std::string, Tensor>> Stage1Model::named_params() const {
    return net.named_params("stage1");
}

Stage2Model Stage2Model::init(const RunConfig& config) {
    config.validate();
    Rng rng(Rng::derive(config.seed, kSaltStage2Init));
    Stage2Model model;
    model.backbone = FeatureExtractor::init(rng, config.d, config.feature_scale_div);
    model.queries = VoxelQuerySet::init(rng, config.volume.query_dims, config.d);
    for (int l = 0; l < config.cross_layers; ++l)
        model.cross_layers.push_back(AttentionLayerParams::init(rng, config.d, config.n_samples));
    for (int l = 0; l < config.self_layers; ++l)
        model.self_layers.push_back(AttentionLayerParams::init(rng, config.d, config.n_samples));
    model.head = OutputHeadParams::init(rng, config.d, config.class_count + 1);
    return model;
}

std::vector<std::pair<std::string, Tensor>> Stage2Model::named_params() const {
    std::vector<std::pair<std::string, Tensor>> out = backbone.named_params("backbone");
    const auto append = [&](std::vector<std::pair<std::string, Tensor>> more) {
        out.insert(out.end(), more.begin(), more.end());
    };
    append(queries.named_params("queries"));
    for (std::size_t l = 0; l < cross_layers.size(); ++l)
        append(cross_layers[l].named_params("cross" + std::to_string(l)));
    for (std::size_t l = 0; l < self_layers.size(); ++l)
        append(self_layers[l].named_params("self" + std::to_string(l)));
    append(head.named_params("head"));
    return out;
}

namespace {

void save_model(const std::string& path,
                const std::vector<std::pair<std::string, Tensor>>& params,
                const AdamOptimizer* adam) {
    std::vector<NamedArray> arrays = arrays_from_params(params);
    if (adam) {
        const auto state = adam->state_arrays();
        arrays.insert(arrays.end(), state.begin(), state.end());
    }
    save_arrays(path, arrays);
}

void load_model(const std::string& path,
                const std::vector<std::pair<std::string, Tensor>>& params,
                AdamOptimizer* adam) {
    const auto arrays = load_arrays(path);
    apply_arrays_to_params(arrays, params);
    if (adam) adam->load_state(arrays);
}

}  // namespace

void Stage1Model::save(const std::string& path, const AdamOptimizer* adam) const {
    save_model(path, named_params(), adam);
}
void Stage1Model::load(const std::string& path, AdamOptimizer* adam) {
    load_model(path, named_params(), adam);
}
void Stage2Model::save(const std::string& path, const AdamOptimizer* adam) const {
    save_model(path, named_params(), adam);
}
void Stage2Model::load(const std::string& path, AdamOptimizer* adam) {
    load_model(path, named_params(), adam);
}

OccupancyGrid select_query_mask(const RunConfig& config, const LoadedScene& scene,
                                const Stage1Model* stage1, std::uint64_t seed) {
    switch (config.query_mode) {
        case QueryMode::dense: {
            OccupancyGrid mask = OccupancyGrid::zeros(config.volume.query_dims);
            std::fill(mask.bits.begin(), mask.bits.end(), 1);
            return mask;
        }
        case QueryMode::random: {
            OccupancyGrid mask = OccupancyGrid::zeros(config.volume.query_dims);
            const long n = mask.cell_count();
            const long k = static_cast<long>(
                std::ceil(config.random_query_fraction * static_cast<double>(n)));
            std::vector<long> cells(static_cast<std::size_t>(n));
            std::iota(cells.begin(), cells.end(), 0);
            Rng rng(Rng::derive(seed, kSaltQueryMask));
            for (long i = 0; i < k; ++i) {
                const long j = i + static_cast<long>(rng.uniform_int(0, n - 1 - i));
                std::swap(cells[static_cast<std::size_t>(i)], cells[static_cast<std::size_t>(j)]);
            }
            for (long i = 0; i < k; ++i) mask.bits[static_cast<std::size_t>(cells[i])] = 1;
            return mask;
        }
        case QueryMode::occupancy:
            switch (config.occupancy_source) {
                case OccupancySource::oracle: return scene.pooled_gt;
                case OccupancySource::raw_depth: return scene.pooled_depth;
                case OccupancySource::net:
                    if (!stage1)
                        throw std::invalid_argument(
                            "query selection from the net needs a first-stage model");
                    return predict_occupancy(scene.voxelized_depth, stage1->net).second;
            }
    }
    throw std::logic_error("unreachable query mode");
}

Tensor stage2_forward(const RunConfig& config, const Stage2Model& model,
                      const LoadedScene& scene, const OccupancyGrid& query_mask,
                      AttentionTrace* trace) {
    std::vector<CameraViewFeatures> views;
    views.reserve(scene.images.size());
    for (const ImageFrame& image : scene.images)
        views.push_back({extract_features(image, model.backbone), image.intrinsics, image.pose});

    const auto [q_p, proposal] = propose_queries(model.queries, query_mask);
    std::optional<Tensor> refined;
    if (q_p)
        refined = config.disable_cross_attention
                      ? *q_p
                      : cross_attend(*q_p, proposal, views, config.volume, model.cross_layers,
                                     trace);
    Tensor f3d = scatter_with_mask_tokens(refined, proposal, model.queries);
    if (!config.disable_self_attention)
        f3d = self_attend(f3d, config.volume, model.self_layers, trace);
    return output_head(f3d, config.volume, model.head);
}

namespace {

void require_finite_loss(double loss, int step) {
    if (!std::isfinite(loss))
        throw NumericFailure("non-finite loss at step " + std::to_string(step));
}

void log_step(std::ostream* log, const char* stage, int step, int steps, double loss) {
    if (!log) return;
    if (step % 50 == 0 || step == steps - 1)
        *log << stage << " step " << step << '/' << steps << " loss " << loss << '\n';
}

}  // namespace

std::vector<double> train_stage1(const RunConfig& config, Stage1Model& model,
                                 const std::vector<LoadedScene>& scenes, int steps,
                                 AdamOptimizer& adam, std::ostream* log) {
    if (scenes.empty()) throw std::invalid_argument("training needs at least one scene");
    const auto params = model.named_params();
    std::vector<Tensor> inputs;
    inputs.reserve(scenes.size());
    for (const auto& s : scenes) inputs.push_back(grid_tensor(s.voxelized_depth));

    Rng pick(Rng::derive(config.seed, kSaltScenePick1));
    std::vector<double> losses;
    losses.reserve(static_cast<std::size_t>(steps));
    for (int step = 0; step < steps; ++step) {
        const std::size_t idx =
            static_cast<std::size_t>(pick.uniform_int(0, static_cast<long>(scenes.size()) - 1));
        for (const auto& [name, t] : params) Tensor(t).zero_grad();
        Tensor loss = stage1_loss(model.net.forward(inputs[idx]), scenes[idx].pooled_gt);
        require_finite_loss(loss.value(), step);
        losses.push_back(loss.value());
        loss.backward();
        adam.update(params);
        log_step(log, "stage1", step, steps, losses.back());
    }
    return losses;
}

Eigen::ArrayXd dataset_class_weights(const RunConfig& config,
                                     const std::vector<LoadedScene>& scenes) {
    std::vector<SemanticGrid> grids;
    grids.reserve(scenes.size());
    for (const auto& s : scenes) grids.push_back(s.gt);
    return compute_class_weights(grids, config.class_count + 1);
}

std::vector<double> train_stage2(const RunConfig& config, Stage2Model& model,
                                 const Stage1Model* stage1,
                                 const std::vector<LoadedScene>& scenes, int steps,
                                 AdamOptimizer& adam, std::ostream* log) {
    if (scenes.empty()) throw std::invalid_argument("training needs at least one scene");
    const auto params = model.named_params();
    const Eigen::ArrayXd weights = dataset_class_weights(config, scenes);

    Rng pick(Rng::derive(config.seed, kSaltScenePick2));
    std::vector<double> losses;
    losses.reserve(static_cast<std::size_t>(steps));
    for (int step = 0; step < steps; ++step) {
        const std::size_t idx =
            static_cast<std::size_t>(pick.uniform_int(0, static_cast<long>(scenes.size()) - 1));
        const OccupancyGrid mask =
            select_query_mask(config, scenes[idx], stage1,
                              Rng::derive(config.seed, kSaltQueryMask + static_cast<std::uint64_t>(step)));
        for (const auto& [name, t] : params) Tensor(t).zero_grad();
        Tensor logits = stage2_forward(config, model, scenes[idx], mask);
        Tensor loss = scene_loss(logits, scenes[idx].gt, weights, config.with_affinity);
        require_finite_loss(loss.value(), step);
        losses.push_back(loss.value());
        loss.backward();
        adam.update(params);
        log_step(log, "stage2", step, steps, losses.back());
    }
    return losses;
}

SemanticGrid predict_scene(const RunConfig& config, const Stage2Model& model,
                           const Stage1Model* stage1, const LoadedScene& scene) {
    const OccupancyGrid mask =
        select_query_mask(config, scene, stage1, Rng::derive(config.seed, kSaltEvalMask));
    const Tensor logits = stage2_forward(config, model, scene, mask);
    return labels_from_logits(logits, config.volume);
}

namespace {

int eval_thread_count(std::size_t jobs) {
    const char* env = std::getenv("SSC_THREADS");
    long n = 1;
    if (env && *env) {
        char* end = nullptr;
        n = std::strtol(env, &end, 10);
        if (!end || *end != '\0' || n < 1) n = 1;
    }
    n = std::min<long>(n, 64);
    return static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(n), jobs));
}

}  // namespace

EvalResult evaluate_scenes(const RunConfig& config, const Stage2Model& model,
                           const Stage1Model* stage1, const std::vector<LoadedScene>& scenes) {
    if (scenes.empty()) throw std::invalid_argument("evaluation needs at least one scene");
    EvalResult result;
    result.per_scene.resize(scenes.size());

    const auto run_one = [&](std::size_t i) {
        const SemanticGrid pred = predict_scene(config, model, stage1, scenes[i]);
        result.per_scene[i] = evaluate(pred, scenes[i].gt, config.volume, config.eval_ranges,
                                       config.class_count + 1);
    };

    const int threads = eval_thread_count(scenes.size());
    if (threads <= 1) {
        for (std::size_t i = 0; i < scenes.size(); ++i) run_one(i);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::thread> pool;
        pool.reserve(static_cast<std::size_t>(threads));
        for (int t = 0; t < threads; ++t)
            pool.emplace_back([&] {
                for (std::size_t i = next.fetch_add(1); i < scenes.size();
                     i = next.fetch_add(1))
                    run_one(i);
            });
        for (auto& th : pool) th.join();
    }

    // Aggregate in scene order so the result is independent of scheduling.
    for (std::size_t r = 0; r < config.eval_ranges.size(); ++r) {
        RangeReport agg;
        agg.range = config.eval_ranges[r];
        for (const auto& scene_reports : result.per_scene) agg.counts += scene_reports[r].counts;
        agg.metrics = metrics_from_confusion(agg.counts);
        result.aggregate.push_back(std::move(agg));
    }
    return result;
}

}  // namespace ssc
