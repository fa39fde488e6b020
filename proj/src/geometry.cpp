#include "ssc/geometry.hpp"

#include <Eigen/LU>

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ssc {

void CameraIntrinsics::validate() const {
    if (!(fu > 0) || !(fv > 0)) throw std::invalid_argument("camera: focal lengths must be > 0");
    if (!std::isfinite(cu) || !std::isfinite(cv))
        throw std::invalid_argument("camera: principal point must be finite");
    if (width <= 0 || height <= 0)
        throw std::invalid_argument("camera: image extents must be positive");
}

void CameraPose::validate() const {
    if (!rotation.allFinite() || !translation.allFinite())
        throw std::invalid_argument("pose: non-finite entries");
    const double ortho_err =
        (rotation.transpose() * rotation - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
    if (ortho_err > 1e-9)
        throw std::invalid_argument("pose: rotation not orthonormal (error " +
                                    std::to_string(ortho_err) + ")");
    if (std::abs(rotation.determinant() - 1.0) > 1e-9)
        throw std::invalid_argument("pose: rotation must have determinant +1");
}

void VolumeSpec::validate() const {
    if (!(voxel_size > 0)) throw std::invalid_argument("volume: voxel size must be > 0");
    if (!origin.allFinite()) throw std::invalid_argument("volume: origin must be finite");
    int factor = 0;
    for (int a = 0; a < 3; ++a) {
        if (dims[a] <= 0 || query_dims[a] <= 0)
            throw std::invalid_argument("volume: dims must be positive");
        if (dims[a] % query_dims[a] != 0)
            throw std::invalid_argument("volume: query dims must divide output dims");
        const int f = dims[a] / query_dims[a];
        if (a == 0)
            factor = f;
        else if (f != factor)
            throw std::invalid_argument("volume: downsample factor must match on all axes");
    }
}

DepthRaster DepthRaster::invalid_raster(int width, int height) {
    DepthRaster r;
    r.width = width;
    r.height = height;
    r.depths = Eigen::ArrayXd::Constant(static_cast<Eigen::Index>(width) * height, kInvalid);
    return r;
}

std::vector<Eigen::Vector3d> back_project(const DepthRaster& depth, const CameraIntrinsics& intr,
                                          const CameraPose& pose) {
    intr.validate();
    if (depth.width != intr.width || depth.height != intr.height)
        throw std::invalid_argument("back_project: raster extents do not match intrinsics");
    std::vector<Eigen::Vector3d> points;
    points.reserve(static_cast<std::size_t>(depth.width) * depth.height);
    for (int v = 0; v < depth.height; ++v)
        for (int u = 0; u < depth.width; ++u) {
            if (!depth.is_valid(v, u)) continue;
            const double z = depth.at(v, u);
            const Eigen::Vector3d p_cam((u - intr.cu) * z / intr.fu, (v - intr.cv) * z / intr.fv,
                                        z);
            points.push_back(pose.to_ego(p_cam));
        }
    return points;
}

PixelProjection project(const Eigen::Vector3d& p_ego, const CameraIntrinsics& intr,
                        const CameraPose& pose) {
    const Eigen::Vector3d p_cam = pose.to_camera(p_ego);
    PixelProjection out;
    if (p_cam.z() <= kMinProjectionDepth) return out;  // behind or on the camera plane
    out.u = intr.fu * p_cam.x() / p_cam.z() + intr.cu;
    out.v = intr.fv * p_cam.y() / p_cam.z() + intr.cv;
    out.valid = out.u >= 0 && out.u < intr.width && out.v >= 0 && out.v < intr.height;
    return out;
}

Eigen::Vector3d voxel_center(const std::array<int, 3>& index, const VolumeSpec& spec,
                             Resolution res) {
    const auto& d = spec.res_dims(res);
    for (int a = 0; a < 3; ++a)
        if (index[a] < 0 || index[a] >= d[a])
            throw std::out_of_range("voxel_center: index outside grid");
    const double cell = spec.cell_size(res);
    return spec.origin + cell * Eigen::Vector3d(index[0] + 0.5, index[1] + 0.5, index[2] + 0.5);
}

std::optional<std::array<int, 3>> world_to_voxel(const Eigen::Vector3d& p, const VolumeSpec& spec,
                                                 Resolution res) {
    if (!p.allFinite()) throw std::invalid_argument("world_to_voxel: non-finite point");
    const auto& d = spec.res_dims(res);
    const double cell = spec.cell_size(res);
    std::array<int, 3> idx{};
    for (int a = 0; a < 3; ++a) {
        const double q = std::floor((p[a] - spec.origin[a]) / cell);
        if (q < 0 || q >= d[a]) return std::nullopt;
        idx[a] = static_cast<int>(q);
    }
    return idx;
}

// ----------------------------------------------------------------- camera I/O

void save_camera(const std::string& path, const CameraIntrinsics& intr, const CameraPose& pose) {
    intr.validate();
    pose.validate();
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write camera file: " + path);
    f.precision(17);
    f << "camera v1\n";
    f << "fu " << intr.fu << "\nfv " << intr.fv << "\ncu " << intr.cu << "\ncv " << intr.cv
      << "\n";
    f << "width " << intr.width << "\nheight " << intr.height << "\n";
    f << "rotation";
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) f << ' ' << pose.rotation(r, c);
    f << "\ntranslation";
    for (int r = 0; r < 3; ++r) f << ' ' << pose.translation[r];
    f << '\n';
    if (!f) throw std::runtime_error("write failed: " + path);
}

std::pair<CameraIntrinsics, CameraPose> load_camera(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot read camera file: " + path);
    std::string header;
    std::getline(f, header);
    if (header != "camera v1") throw std::runtime_error("not a camera file: " + path);
    CameraIntrinsics intr;
    CameraPose pose;
    std::string key;
    while (f >> key) {
        if (key == "fu")
            f >> intr.fu;
        else if (key == "fv")
            f >> intr.fv;
        else if (key == "cu")
            f >> intr.cu;
        else if (key == "cv")
            f >> intr.cv;
        else if (key == "width")
            f >> intr.width;
        else if (key == "height")
            f >> intr.height;
        else if (key == "rotation")
            for (int r = 0; r < 3; ++r)
                for (int c = 0; c < 3; ++c) f >> pose.rotation(r, c);
        else if (key == "translation")
            for (int r = 0; r < 3; ++r) f >> pose.translation[r];
        else
            throw std::runtime_error("camera file: unknown key '" + key + "' in " + path);
    }
    intr.validate();
    pose.validate();
    return {intr, pose};
}

// ------------------------------------------------------------ depth raster I/O

namespace {
constexpr char kDepthMagic[8] = {'S', 'S', 'C', 'D', 'E', 'P', 'T', '1'};
}

void save_depth_raster(const std::string& path, const DepthRaster& raster) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write depth raster: " + path);
    f.write(kDepthMagic, 8);
    const std::uint32_t w = static_cast<std::uint32_t>(raster.width);
    const std::uint32_t h = static_cast<std::uint32_t>(raster.height);
    f.write(reinterpret_cast<const char*>(&w), 4);
    f.write(reinterpret_cast<const char*>(&h), 4);
    const double sentinel = DepthRaster::kInvalid;
    f.write(reinterpret_cast<const char*>(&sentinel), 8);
    f.write(reinterpret_cast<const char*>(raster.depths.data()),
            static_cast<std::streamsize>(raster.depths.size() * sizeof(double)));
    if (!f) throw std::runtime_error("write failed: " + path);
}

DepthRaster load_depth_raster(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read depth raster: " + path);
    char magic[8];
    f.read(magic, 8);
    if (!f || std::memcmp(magic, kDepthMagic, 8) != 0)
        throw std::runtime_error("not a depth raster file: " + path);
    std::uint32_t w = 0, h = 0;
    f.read(reinterpret_cast<char*>(&w), 4);
    f.read(reinterpret_cast<char*>(&h), 4);
    double sentinel = 0;
    f.read(reinterpret_cast<char*>(&sentinel), 8);
    if (!f || w == 0 || h == 0 || w > 1u << 16 || h > 1u << 16)
        throw std::runtime_error("corrupt depth raster header: " + path);
    DepthRaster raster;
    raster.width = static_cast<int>(w);
    raster.height = static_cast<int>(h);
    raster.depths.resize(static_cast<Eigen::Index>(w) * h);
    f.read(reinterpret_cast<char*>(raster.depths.data()),
           static_cast<std::streamsize>(raster.depths.size() * sizeof(double)));
    if (!f) throw std::runtime_error("truncated depth raster: " + path);
    return raster;
}

}  // namespace ssc
