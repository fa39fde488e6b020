#pragma once

#include <string>
#include <vector>

#include "ssc/geometry.hpp"

namespace ssc {

// How coarse cells are chosen for refinement in the second stage.
//   occupancy  - threshold the first-stage correction net
//   dense      - every coarse cell
//   random     - a seeded sample of ceil(fraction * N_q) cells
enum class QueryMode { occupancy, dense, random };

// Where the occupancy mask comes from in `occupancy` mode.
//   net       - the trained correction net on the voxelized depth
//   oracle    - the pooled ground-truth occupancy
//   raw_depth - the pooled voxelized depth, no net
enum class OccupancySource { net, oracle, raw_depth };

// Everything a run needs, with desk-scale defaults. Plain key = value file;
// unknown keys are rejected so typos fail loudly.
struct RunConfig {
    VolumeSpec volume;

    // model
    int d = 32;
    int n_samples = 8;
    int cross_layers = 3;
    int self_layers = 2;
    int feature_scale_div = 4;
    int class_count = 4;  // semantic classes; logits add one empty column

    // camera and temporal frames (frame f sits 0.8 m * f behind the first)
    CameraIntrinsics camera;
    int frames = 1;
    double frame_spacing = 0.8;
    double camera_height = 1.0;

    // synthesis
    int min_objects = 4;
    int max_objects = 8;
    double depth_noise_sigma = 0.02;

    // training
    double lr = 2e-4;
    int stage1_steps = 400;
    int stage2_steps = 600;
    std::uint64_t seed = 1;
    bool with_affinity = true;

    // stage-2 wiring
    QueryMode query_mode = QueryMode::occupancy;
    double random_query_fraction = 0.1;
    OccupancySource occupancy_source = OccupancySource::net;
    bool disable_cross_attention = false;
    bool disable_self_attention = false;

    // evaluation
    std::vector<double> eval_ranges = {3.2, 6.4, 12.8};

    static RunConfig desk_default();
    void validate() const;  // throws std::invalid_argument
};

QueryMode parse_query_mode(const std::string& text, double* fraction);
std::string query_mode_str(QueryMode mode, double fraction);
OccupancySource parse_occupancy_source(const std::string& text);
std::string occupancy_source_str(OccupancySource source);

// Round-trips every field at full double precision.
void save_config(const std::string& path, const RunConfig& config);
RunConfig load_config(const std::string& path);

}  // namespace ssc
