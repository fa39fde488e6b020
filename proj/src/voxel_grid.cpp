#include "ssc/voxel_grid.hpp"

#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace ssc {

OccupancyGrid OccupancyGrid::zeros(const std::array<int, 3>& dims) {
    OccupancyGrid g;
    g.dims = dims;
    g.bits.assign(static_cast<std::size_t>(g.cell_count()), 0);
    return g;
}

long OccupancyGrid::popcount() const {
    return std::accumulate(bits.begin(), bits.end(), 0L,
                           [](long acc, std::uint8_t b) { return acc + (b != 0); });
}

SemanticGrid SemanticGrid::filled(const std::array<int, 3>& dims, std::uint8_t label) {
    SemanticGrid g;
    g.dims = dims;
    g.labels.assign(static_cast<std::size_t>(g.cell_count()), label);
    return g;
}

OccupancyGrid SemanticGrid::occupancy() const {
    OccupancyGrid g = OccupancyGrid::zeros(dims);
    for (std::size_t i = 0; i < labels.size(); ++i)
        g.bits[i] = (labels[i] != 0 && labels[i] != kIgnore) ? 1 : 0;
    return g;
}

OccupancyGrid voxelize_points(const std::vector<Eigen::Vector3d>& points,
                              const VolumeSpec& spec) {
    spec.validate();
    OccupancyGrid g = OccupancyGrid::zeros(spec.dims);
    for (const auto& p : points) {
        const auto idx = world_to_voxel(p, spec, Resolution::output);
        if (idx) g.bits[static_cast<std::size_t>(g.index((*idx)[0], (*idx)[1], (*idx)[2]))] = 1;
    }
    return g;
}

OccupancyGrid downsample_occupancy(const OccupancyGrid& grid, const VolumeSpec& spec) {
    spec.validate();
    if (grid.dims != spec.dims)
        throw std::invalid_argument("downsample_occupancy: grid is not at output resolution");
    const int f = spec.downsample_factor();
    OccupancyGrid out = OccupancyGrid::zeros(spec.query_dims);
    for (int i = 0; i < spec.dims[0]; ++i)
        for (int j = 0; j < spec.dims[1]; ++j)
            for (int k = 0; k < spec.dims[2]; ++k)
                if (grid.bits[static_cast<std::size_t>(grid.index(i, j, k))])
                    out.bits[static_cast<std::size_t>(out.index(i / f, j / f, k / f))] = 1;
    return out;
}

// -------------------------------------------------------------------- file I/O

namespace {

constexpr char kGridMagic[8] = {'S', 'S', 'C', 'G', 'R', 'I', 'D', '1'};

struct GridHeader {
    char magic[8];
    std::uint32_t version;
    std::uint32_t label_bits;  // 1 = packed occupancy, 8 = byte labels
    std::uint32_t dims[3];
    std::uint32_t reserved;
    double origin[3];
    double voxel_size;
};
static_assert(sizeof(GridHeader) == 64, "grid header layout is part of the file format");

void write_header(std::ofstream& f, std::uint32_t label_bits, const std::array<int, 3>& dims,
                  const VolumeSpec& spec) {
    GridHeader h{};
    std::memcpy(h.magic, kGridMagic, 8);
    h.version = 1;
    h.label_bits = label_bits;
    for (int a = 0; a < 3; ++a) {
        h.dims[a] = static_cast<std::uint32_t>(dims[a]);
        h.origin[a] = spec.origin[a];
    }
    h.voxel_size = spec.voxel_size;
    f.write(reinterpret_cast<const char*>(&h), sizeof(h));
}

GridHeader read_header(std::ifstream& f, const std::string& path,
                       std::uint32_t expected_label_bits) {
    GridHeader h{};
    f.read(reinterpret_cast<char*>(&h), sizeof(h));
    if (!f || std::memcmp(h.magic, kGridMagic, 8) != 0)
        throw std::runtime_error("not a voxel grid file: " + path);
    if (h.version != 1)
        throw std::runtime_error("unsupported voxel grid version in " + path);
    if (h.label_bits != expected_label_bits)
        throw std::runtime_error("voxel grid label width mismatch in " + path);
    for (std::uint32_t d : h.dims)
        if (d == 0 || d > 1u << 12)
            throw std::runtime_error("corrupt voxel grid dims in " + path);
    return h;
}

}  // namespace

void save_occupancy_grid(const std::string& path, const OccupancyGrid& grid,
                         const VolumeSpec& spec) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write voxel grid: " + path);
    write_header(f, 1, grid.dims, spec);
    std::vector<std::uint8_t> packed((grid.bits.size() + 7) / 8, 0);
    for (std::size_t i = 0; i < grid.bits.size(); ++i)
        if (grid.bits[i]) packed[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
    f.write(reinterpret_cast<const char*>(packed.data()),
            static_cast<std::streamsize>(packed.size()));
    if (!f) throw std::runtime_error("write failed: " + path);
}

OccupancyGrid load_occupancy_grid(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read voxel grid: " + path);
    const GridHeader h = read_header(f, path, 1);
    OccupancyGrid g = OccupancyGrid::zeros(
        {static_cast<int>(h.dims[0]), static_cast<int>(h.dims[1]), static_cast<int>(h.dims[2])});
    std::vector<std::uint8_t> packed((g.bits.size() + 7) / 8);
    f.read(reinterpret_cast<char*>(packed.data()), static_cast<std::streamsize>(packed.size()));
    if (!f) throw std::runtime_error("truncated voxel grid: " + path);
    for (std::size_t i = 0; i < g.bits.size(); ++i)
        g.bits[i] = (packed[i / 8] >> (i % 8)) & 1u;
    return g;
}

void save_semantic_grid(const std::string& path, const SemanticGrid& grid,
                        const VolumeSpec& spec) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write voxel grid: " + path);
    write_header(f, 8, grid.dims, spec);
    f.write(reinterpret_cast<const char*>(grid.labels.data()),
            static_cast<std::streamsize>(grid.labels.size()));
    if (!f) throw std::runtime_error("write failed: " + path);
}

SemanticGrid load_semantic_grid(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read voxel grid: " + path);
    const GridHeader h = read_header(f, path, 8);
    SemanticGrid g = SemanticGrid::filled(
        {static_cast<int>(h.dims[0]), static_cast<int>(h.dims[1]), static_cast<int>(h.dims[2])},
        0);
    f.read(reinterpret_cast<char*>(g.labels.data()),
           static_cast<std::streamsize>(g.labels.size()));
    if (!f) throw std::runtime_error("truncated voxel grid: " + path);
    return g;
}

}  // namespace ssc
