#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ssc/geometry.hpp"
#include "ssc/image.hpp"
#include "ssc/voxel_grid.hpp"

namespace ssc {

// Axis-aligned solid box with a semantic class. Containment is closed at the
// lower faces and open at the upper ones, matching voxel floor semantics.
struct SceneBox {
    Eigen::Vector3d lo = Eigen::Vector3d::Zero();
    Eigen::Vector3d hi = Eigen::Vector3d::Zero();
    std::uint8_t cls = 0;

    bool contains(const Eigen::Vector3d& p) const {
        for (int a = 0; a < 3; ++a)
            if (p[a] < lo[a] || p[a] >= hi[a]) return false;
        return true;
    }
};

// A procedural world: a ground slab plus boxes in three size tiers
// (building / car / pole scale). Everything downstream treats it as ground
// truth.
struct Scene {
    std::vector<SceneBox> boxes;
    VolumeSpec spec;
    std::uint64_t seed = 0;
};

// Deterministic in (seed, spec, class_count, count range). The returned grid
// labels each output-resolution voxel with the class of the containing box
// nearest the ego origin (empty = 0). class_count M >= 2: class 1 is the
// ground slab, classes 2..M are object tiers.
std::pair<Scene, SemanticGrid> generate_scene(std::uint64_t seed, const VolumeSpec& spec,
                                              int class_count, int min_objects, int max_objects);

struct RayHit {
    double depth = 0;  // camera-frame z of the entry face
    int box = -1;
};

// First box face hit by the ray through pixel (u, v); shared by the depth and
// image renderers so their per-pixel hits agree by construction.
std::optional<RayHit> first_hit(const Scene& scene, const CameraIntrinsics& intr,
                                const CameraPose& pose, double u, double v);

// Per-pixel first-hit z-depth. sigma > 0 applies multiplicative Gaussian
// noise (1 + sigma * e) from the given seed; misses stay invalid.
DepthRaster render_depth(const Scene& scene, const CameraIntrinsics& intr,
                         const CameraPose& pose, double sigma, std::uint64_t noise_seed);

// Class-palette rendering shaded by hit distance (shade = 1 / (1 + 0.05 z)).
ImageFrame render_image(const Scene& scene, const CameraIntrinsics& intr,
                        const CameraPose& pose);

// Fixed palette; class 0 is the background color.
std::array<double, 3> class_color(int cls);

// Scene file: structured text listing the volume and every box.
void save_scene(const std::string& path, const Scene& scene);
Scene load_scene(const std::string& path);

}  // namespace ssc
