#pragma once

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace ssc {

// Ego frame: x forward (meters), y left/right, z up. Camera frame: z along
// the optical axis, x right, y down; pixel u grows with x, v with y.

struct CameraIntrinsics {
    double fu = 0, fv = 0;  // focal lengths, pixels
    double cu = 0, cv = 0;  // principal point, pixels
    int width = 0, height = 0;

    void validate() const;  // throws std::invalid_argument
};

// Rigid map from ego coordinates to camera coordinates: p_cam = R p + t.
struct CameraPose {
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    Eigen::Vector3d translation = Eigen::Vector3d::Zero();

    // Throws unless R is orthonormal within 1e-9 with determinant +1.
    void validate() const;

    Eigen::Vector3d to_camera(const Eigen::Vector3d& p_ego) const {
        return rotation * p_ego + translation;
    }
    Eigen::Vector3d to_ego(const Eigen::Vector3d& p_cam) const {
        return rotation.transpose() * (p_cam - translation);
    }
    // Camera center expressed in the ego frame.
    Eigen::Vector3d center_in_ego() const { return rotation.transpose() * (-translation); }
};

enum class Resolution { output, query };

// Axis-aligned voxel volume in the ego frame. `dims` is the fine (output)
// grid; `query_dims` the coarse grid used for query selection. The coarse
// grid must tile the fine one with one integer factor shared by all axes.
struct VolumeSpec {
    Eigen::Vector3d origin = Eigen::Vector3d::Zero();  // lower corner, meters
    double voxel_size = 0;                             // cubic cell edge, meters
    std::array<int, 3> dims{};                         // output resolution
    std::array<int, 3> query_dims{};                   // query resolution

    void validate() const;
    int downsample_factor() const { return dims[0] / query_dims[0]; }
    const std::array<int, 3>& res_dims(Resolution r) const {
        return r == Resolution::output ? dims : query_dims;
    }
    double cell_size(Resolution r) const {
        return r == Resolution::output ? voxel_size : voxel_size * downsample_factor();
    }
    Eigen::Vector3d extent() const {
        return Eigen::Vector3d(dims[0], dims[1], dims[2]) * voxel_size;
    }
    long cell_count(Resolution r) const {
        const auto& d = res_dims(r);
        return static_cast<long>(d[0]) * d[1] * d[2];
    }
};

// Per-pixel z-depth (camera-frame z, meters). Negative entries mark pixels
// with no depth.
struct DepthRaster {
    static constexpr double kInvalid = -1.0;
    int width = 0, height = 0;
    Eigen::ArrayXd depths;  // row-major, height x width

    static DepthRaster invalid_raster(int width, int height);
    double at(int v, int u) const { return depths[static_cast<Eigen::Index>(v) * width + u]; }
    double& at(int v, int u) { return depths[static_cast<Eigen::Index>(v) * width + u]; }
    bool is_valid(int v, int u) const {
        const double z = at(v, u);
        return std::isfinite(z) && z > 0.0;
    }
};

struct PixelProjection {
    double u = 0, v = 0;
    bool valid = false;
};

// Lifts every valid depth pixel to an ego-frame 3D point through the pinhole
// model and the inverse pose. Invalid pixels are skipped.
std::vector<Eigen::Vector3d> back_project(const DepthRaster& depth, const CameraIntrinsics& intr,
                                          const CameraPose& pose);

// Projects an ego-frame point to pixel coordinates. Valid only when the
// camera-frame depth exceeds kMinProjectionDepth and the pixel falls inside
// the image extents.
inline constexpr double kMinProjectionDepth = 1e-6;
PixelProjection project(const Eigen::Vector3d& p_ego, const CameraIntrinsics& intr,
                        const CameraPose& pose);

// Center of cell (i, j, k) at the chosen resolution. Out-of-range indices are
// rejected.
Eigen::Vector3d voxel_center(const std::array<int, 3>& index, const VolumeSpec& spec,
                             Resolution res);

// Floor-quantizes a point to a cell index, or nothing when outside the volume.
// Points exactly on a cell's upper face belong to the next cell.
std::optional<std::array<int, 3>> world_to_voxel(const Eigen::Vector3d& p, const VolumeSpec& spec,
                                                 Resolution res);

// Camera description file: structured text with intrinsics and a row-major
// pose. Throws std::runtime_error on I/O or parse failure.
void save_camera(const std::string& path, const CameraIntrinsics& intr, const CameraPose& pose);
std::pair<CameraIntrinsics, CameraPose> load_camera(const std::string& path);

// Depth raster file: fixed header plus little-endian doubles.
void save_depth_raster(const std::string& path, const DepthRaster& raster);
DepthRaster load_depth_raster(const std::string& path);

}  // namespace ssc
