#pragma once

#include <map>
#include <ostream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ssc/checkpoint.hpp"
#include "ssc/config.hpp"
#include "ssc/features.hpp"
#include "ssc/loss_metrics.hpp"
#include "ssc/queries.hpp"
#include "ssc/scene_synth.hpp"
#include "ssc/stage1.hpp"
#include "ssc/stage2.hpp"

namespace ssc {

// Adam with bias correction over named parameter tensors. Moment buffers are
// keyed by name so optimizer state can travel inside parameter files.
struct AdamOptimizer {
    double lr;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    long step = 0;
    std::map<std::string, Eigen::ArrayXd> m, v;

    explicit AdamOptimizer(double lr_) : lr(lr_) {}
    // One descent step from the gradients currently on the tensors.
    void update(const std::vector<std::pair<std::string, Tensor>>& params);
    std::vector<NamedArray> state_arrays() const;
    // Restores moments from "adam.*" entries; absent state leaves a fresh
    // optimizer.
    void load_state(const std::vector<NamedArray>& arrays);
};

// Ego-frame camera rig: every frame looks along +x from height
// `camera_height`, frame f displaced frame_spacing * f behind the first.
CameraPose frame_pose(const RunConfig& config, int frame);

// File paths for one synthesized scene; frames are indexed together.
struct SceneSample {
    std::uint64_t seed = 0;
    std::string scene, gt;
    std::vector<std::string> depths, images, cameras;
};

// Writes scenes, ground truth, depth rasters, rendered images and camera
// files under `dir`, plus a manifest listing them. Deterministic in
// (config, scene_count, base_seed): regeneration is byte-identical.
std::vector<SceneSample> synthesize_dataset(const RunConfig& config, const std::string& dir,
                                            int scene_count, std::uint64_t base_seed);

void save_manifest(const std::string& path, const std::vector<SceneSample>& entries);
std::vector<SceneSample> load_manifest(const std::string& path);

// A scene pulled into memory with the derived grids both stages consume.
struct LoadedScene {
    Scene scene;
    SemanticGrid gt;
    std::vector<DepthRaster> depths;
    std::vector<ImageFrame> images;   // camera attached to each frame
    OccupancyGrid voxelized_depth;    // back-projected depth, output resolution
    OccupancyGrid pooled_depth;       // ... at query resolution
    OccupancyGrid pooled_gt;          // ground-truth occupancy at query resolution
};
LoadedScene load_scene_sample(const SceneSample& sample, const RunConfig& config);

struct Stage1Model {
    OccupancyNet net;

    static Stage1Model init(const RunConfig& config);
    std::vector<std::pair<std::string, Tensor>> named_params() const;
    void save(const std::string& path, const AdamOptimizer* adam = nullptr) const;
    void load(const std::string& path, AdamOptimizer* adam = nullptr);
};

struct Stage2Model {
    FeatureExtractor backbone;
    VoxelQuerySet queries;
    std::vector<AttentionLayerParams> cross_layers;
    std::vector<AttentionLayerParams> self_layers;
    OutputHeadParams head;

    static Stage2Model init(const RunConfig& config);
    std::vector<std::pair<std::string, Tensor>> named_params() const;
    void save(const std::string& path, const AdamOptimizer* adam = nullptr) const;
    void load(const std::string& path, AdamOptimizer* adam = nullptr);
};

// Coarse cells selected for refinement. `stage1` is only consulted in
// occupancy mode with the net as source; `seed` only in random mode.
OccupancyGrid select_query_mask(const RunConfig& config, const LoadedScene& scene,
                                const Stage1Model* stage1, std::uint64_t seed);

// Full second stage on one scene: per-frame features, query proposal,
// image cross attention, mask-token fill, volume self attention, output head.
// Returns [N_out, class_count + 1] logits.
Tensor stage2_forward(const RunConfig& config, const Stage2Model& model,
                      const LoadedScene& scene, const OccupancyGrid& query_mask,
                      AttentionTrace* trace = nullptr);

// Training loops. Per step a scene is drawn by seeded index; gradients step
// through Adam. A non-finite loss aborts with NumericFailure. Returns the
// per-step losses. `log` (when given) receives one line every 50 steps.
std::vector<double> train_stage1(const RunConfig& config, Stage1Model& model,
                                 const std::vector<LoadedScene>& scenes, int steps,
                                 AdamOptimizer& adam, std::ostream* log = nullptr);
std::vector<double> train_stage2(const RunConfig& config, Stage2Model& model,
                                 const Stage1Model* stage1,
                                 const std::vector<LoadedScene>& scenes, int steps,
                                 AdamOptimizer& adam, std::ostream* log = nullptr);

// Inverse-frequency class weights over the loaded training labels.
Eigen::ArrayXd dataset_class_weights(const RunConfig& config,
                                     const std::vector<LoadedScene>& scenes);

// Prediction for one scene as an output-resolution label grid.
SemanticGrid predict_scene(const RunConfig& config, const Stage2Model& model,
                           const Stage1Model* stage1, const LoadedScene& scene);

// Per-scene range reports plus the aggregate over summed confusion counts.
// Scenes are processed in parallel when SSC_THREADS allows; results and the
// aggregation order do not depend on the thread count.
struct EvalResult {
    std::vector<std::vector<RangeReport>> per_scene;
    std::vector<RangeReport> aggregate;
};
EvalResult evaluate_scenes(const RunConfig& config, const Stage2Model& model,
                           const Stage1Model* stage1, const std::vector<LoadedScene>& scenes);

}  // namespace ssc
