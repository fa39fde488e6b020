#include "ssc/scene_synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include "ssc/rng.hpp"

namespace ssc {

namespace {

// Box footprint/height spans per size tier (meters): building-, car- and
// pole-like proportions.
struct Tier {
    double foot_lo, foot_hi, height_lo, height_hi;
};
constexpr Tier kTiers[3] = {
    {2.0, 3.2, 1.6, 2.4},  // large
    {0.8, 1.6, 0.8, 1.2},  // medium
    {0.2, 0.4, 1.2, 2.0},  // tall and thin
};

}  // namespace

std::pair<Scene, SemanticGrid> generate_scene(std::uint64_t seed, const VolumeSpec& spec,
                                              int class_count, int min_objects,
                                              int max_objects) {
    spec.validate();
    if (class_count < 2)
        throw std::invalid_argument("generate_scene: need at least ground + one object class");
    if (min_objects < 0 || max_objects < min_objects)
        throw std::invalid_argument("generate_scene: bad object count range");

    Scene scene;
    scene.spec = spec;
    scene.seed = seed;

    const Eigen::Vector3d extent = spec.extent();
    const double ground_top = spec.origin.z() + spec.voxel_size;
    SceneBox ground;
    ground.lo = spec.origin;
    ground.hi = spec.origin + Eigen::Vector3d(extent.x(), extent.y(), spec.voxel_size);
    ground.cls = 1;
    scene.boxes.push_back(ground);

    Rng rng(Rng::derive(seed, 0x5C31));
    const int count = static_cast<int>(rng.uniform_int(min_objects, max_objects));
    for (int n = 0; n < count; ++n) {
        const int cls = class_count == 2 ? 2 : static_cast<int>(rng.uniform_int(2, class_count));
        const Tier& tier = kTiers[(cls - 2) % 3];
        const double sx = rng.uniform(tier.foot_lo, tier.foot_hi);
        const double sy = rng.uniform(tier.foot_lo, tier.foot_hi);
        double sz = rng.uniform(tier.height_lo, tier.height_hi);
        sz = std::min(sz, spec.origin.z() + extent.z() - ground_top);
        const double cx =
            rng.uniform(spec.origin.x() + sx / 2, spec.origin.x() + extent.x() - sx / 2);
        const double cy =
            rng.uniform(spec.origin.y() + sy / 2, spec.origin.y() + extent.y() - sy / 2);
        SceneBox box;
        box.lo = Eigen::Vector3d(cx - sx / 2, cy - sy / 2, ground_top);
        box.hi = Eigen::Vector3d(cx + sx / 2, cy + sy / 2, ground_top + sz);
        box.cls = static_cast<std::uint8_t>(cls);
        scene.boxes.push_back(box);
    }

    SemanticGrid gt = SemanticGrid::filled(spec.dims, 0);
    for (int i = 0; i < spec.dims[0]; ++i)
        for (int j = 0; j < spec.dims[1]; ++j)
            for (int k = 0; k < spec.dims[2]; ++k) {
                const Eigen::Vector3d c = voxel_center({i, j, k}, spec, Resolution::output);
                double best = std::numeric_limits<double>::infinity();
                int label = 0;
                for (const auto& box : scene.boxes) {
                    if (!box.contains(c)) continue;
                    const double dist = ((box.lo + box.hi) / 2).norm();
                    if (dist < best) {
                        best = dist;
                        label = box.cls;
                    }
                }
                gt.labels[static_cast<std::size_t>(gt.index(i, j, k))] =
                    static_cast<std::uint8_t>(label);
            }
    return {std::move(scene), std::move(gt)};
}

std::optional<RayHit> first_hit(const Scene& scene, const CameraIntrinsics& intr,
                                const CameraPose& pose, double u, double v) {
    // Unnormalized camera-frame direction with z = 1, so the ray parameter
    // equals the camera-frame z-depth.
    const Eigen::Vector3d d_cam((u - intr.cu) / intr.fu, (v - intr.cv) / intr.fv, 1.0);
    const Eigen::Vector3d o = pose.center_in_ego();
    const Eigen::Vector3d d = pose.rotation.transpose() * d_cam;

    std::optional<RayHit> hit;
    for (std::size_t b = 0; b < scene.boxes.size(); ++b) {
        const SceneBox& box = scene.boxes[b];
        double tmin = -std::numeric_limits<double>::infinity();
        double tmax = std::numeric_limits<double>::infinity();
        bool miss = false;
        for (int a = 0; a < 3; ++a) {
            if (d[a] == 0.0) {
                if (o[a] < box.lo[a] || o[a] >= box.hi[a]) {
                    miss = true;
                    break;
                }
                continue;
            }
            double t0 = (box.lo[a] - o[a]) / d[a];
            double t1 = (box.hi[a] - o[a]) / d[a];
            if (t0 > t1) std::swap(t0, t1);
            tmin = std::max(tmin, t0);
            tmax = std::min(tmax, t1);
        }
        if (miss || tmax < tmin || tmin <= kMinProjectionDepth) continue;
        if (!hit || tmin < hit->depth) hit = RayHit{tmin, static_cast<int>(b)};
    }
    return hit;
}

DepthRaster render_depth(const Scene& scene, const CameraIntrinsics& intr,
                         const CameraPose& pose, double sigma, std::uint64_t noise_seed) {
    intr.validate();
    pose.validate();
    if (sigma < 0) throw std::invalid_argument("render_depth: sigma must be >= 0");
    DepthRaster raster = DepthRaster::invalid_raster(intr.width, intr.height);
    Rng noise(noise_seed);
    for (int v = 0; v < intr.height; ++v)
        for (int u = 0; u < intr.width; ++u) {
            const auto hit = first_hit(scene, intr, pose, u, v);
            if (!hit) continue;
            double z = hit->depth;
            if (sigma > 0) {
                z *= 1.0 + sigma * noise.normal();
                if (z <= kMinProjectionDepth) continue;  // noise pushed it behind the camera
            }
            raster.at(v, u) = z;
        }
    return raster;
}

std::array<double, 3> class_color(int cls) {
    static constexpr std::array<double, 3> kPalette[] = {
        {0.05, 0.05, 0.10},  // 0: background / empty
        {0.35, 0.30, 0.25},  // 1: ground
        {0.85, 0.20, 0.20}, {0.20, 0.75, 0.25}, {0.25, 0.35, 0.90}, {0.90, 0.80, 0.20},
        {0.75, 0.25, 0.80}, {0.20, 0.80, 0.80}, {0.95, 0.55, 0.15}, {0.60, 0.60, 0.60},
    };
    constexpr int n = static_cast<int>(std::size(kPalette));
    if (cls <= 0) return kPalette[0];
    return kPalette[1 + (cls - 1) % (n - 1)];
}

ImageFrame render_image(const Scene& scene, const CameraIntrinsics& intr,
                        const CameraPose& pose) {
    intr.validate();
    pose.validate();
    ImageFrame frame = ImageFrame::filled(intr.width, intr.height, 0.0);
    frame.intrinsics = intr;
    frame.pose = pose;
    for (int v = 0; v < intr.height; ++v)
        for (int u = 0; u < intr.width; ++u) {
            const auto hit = first_hit(scene, intr, pose, u, v);
            std::array<double, 3> color;
            if (hit) {
                color = class_color(scene.boxes[static_cast<std::size_t>(hit->box)].cls);
                const double shade = 1.0 / (1.0 + 0.05 * hit->depth);
                for (double& c : color) c *= shade;
            } else {
                color = class_color(0);
            }
            for (int c = 0; c < 3; ++c) frame.at(v, u, c) = color[static_cast<std::size_t>(c)];
        }
    return frame;
}

// ------------------------------------------------------------------ scene I/O

void save_scene(const std::string& path, const Scene& scene) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write scene: " + path);
    f.precision(17);
    f << "scene v1\n";
    f << "seed " << scene.seed << "\n";
    const auto& s = scene.spec;
    f << "volume " << s.origin.x() << ' ' << s.origin.y() << ' ' << s.origin.z() << ' '
      << s.voxel_size << ' ' << s.dims[0] << ' ' << s.dims[1] << ' ' << s.dims[2] << ' '
      << s.query_dims[0] << ' ' << s.query_dims[1] << ' ' << s.query_dims[2] << "\n";
    f << "boxes " << scene.boxes.size() << "\n";
    for (const auto& b : scene.boxes) {
        f << "box " << static_cast<int>(b.cls);
        for (int a = 0; a < 3; ++a) f << ' ' << b.lo[a];
        for (int a = 0; a < 3; ++a) f << ' ' << b.hi[a];
        f << "\n";
    }
    if (!f) throw std::runtime_error("write failed: " + path);
}

Scene load_scene(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot read scene: " + path);
    std::string header;
    std::getline(f, header);
    if (header != "scene v1") throw std::runtime_error("not a scene file: " + path);
    Scene scene;
    std::string key;
    std::size_t box_count = 0;
    while (f >> key) {
        if (key == "seed") {
            f >> scene.seed;
        } else if (key == "volume") {
            auto& s = scene.spec;
            f >> s.origin.x() >> s.origin.y() >> s.origin.z() >> s.voxel_size >> s.dims[0] >>
                s.dims[1] >> s.dims[2] >> s.query_dims[0] >> s.query_dims[1] >> s.query_dims[2];
        } else if (key == "boxes") {
            f >> box_count;
        } else if (key == "box") {
            SceneBox b;
            int cls = 0;
            f >> cls;
            for (int a = 0; a < 3; ++a) f >> b.lo[a];
            for (int a = 0; a < 3; ++a) f >> b.hi[a];
            b.cls = static_cast<std::uint8_t>(cls);
            scene.boxes.push_back(b);
        } else {
            throw std::runtime_error("scene file: unknown key '" + key + "' in " + path);
        }
    }
    if (scene.boxes.size() != box_count)
        throw std::runtime_error("scene file: box count mismatch in " + path);
    scene.spec.validate();
    return scene;
}

}  // namespace ssc
