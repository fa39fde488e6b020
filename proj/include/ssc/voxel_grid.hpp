#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ssc/geometry.hpp"

namespace ssc {

// Cells are addressed (i, j, k) along (x, y, z) and stored row-major:
// flat = (i * dims[1] + j) * dims[2] + k. That scan order is the one the
// query-selection contract depends on.

struct OccupancyGrid {
    std::array<int, 3> dims{};
    std::vector<std::uint8_t> bits;  // 0 or 1 per cell

    static OccupancyGrid zeros(const std::array<int, 3>& dims);
    long index(int i, int j, int k) const {
        return (static_cast<long>(i) * dims[1] + j) * dims[2] + k;
    }
    long cell_count() const { return static_cast<long>(dims[0]) * dims[1] * dims[2]; }
    long popcount() const;
};

// Per-cell class labels. 0 is the empty class, 1..M are semantic classes,
// kIgnore marks unobserved cells excluded from losses and metrics.
struct SemanticGrid {
    static constexpr std::uint8_t kIgnore = 255;
    std::array<int, 3> dims{};
    std::vector<std::uint8_t> labels;

    static SemanticGrid filled(const std::array<int, 3>& dims, std::uint8_t label);
    long index(int i, int j, int k) const {
        return (static_cast<long>(i) * dims[1] + j) * dims[2] + k;
    }
    long cell_count() const { return static_cast<long>(dims[0]) * dims[1] * dims[2]; }
    // Binary occupancy view: labeled and not empty/ignored.
    OccupancyGrid occupancy() const;
};

// Marks a cell for every ego-frame point that lands inside the volume at
// output resolution; points outside are ignored.
OccupancyGrid voxelize_points(const std::vector<Eigen::Vector3d>& points, const VolumeSpec& spec);

// Output-resolution grid -> query-resolution grid by any-reduction over each
// factor^3 block.
OccupancyGrid downsample_occupancy(const OccupancyGrid& grid, const VolumeSpec& spec);

// Voxel-grid file: fixed binary header carrying dims, label width, origin and
// voxel size, followed by row-major cell data (bit-packed for occupancy,
// one byte per cell for labels). Bit-exact round trip.
void save_occupancy_grid(const std::string& path, const OccupancyGrid& grid,
                         const VolumeSpec& spec);
OccupancyGrid load_occupancy_grid(const std::string& path);
void save_semantic_grid(const std::string& path, const SemanticGrid& grid,
                        const VolumeSpec& spec);
SemanticGrid load_semantic_grid(const std::string& path);

}  // namespace ssc
