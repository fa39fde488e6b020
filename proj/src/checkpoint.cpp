#include "ssc/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <unordered_map>

namespace ssc {

namespace {

constexpr char kMagic[8] = {'S', 'S', 'C', 'P', 'A', 'R', 'M', '1'};
constexpr std::uint32_t kMaxEntries = 1u << 20;
constexpr std::uint32_t kMaxNameLen = 4096;
constexpr std::uint32_t kMaxRank = 8;
constexpr std::uint64_t kMaxElems = 1ull << 32;

void write_u32(std::ofstream& f, std::uint32_t v) {
    f.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint32_t read_u32(std::ifstream& f, const std::string& path) {
    std::uint32_t v = 0;
    f.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!f) throw std::runtime_error("truncated parameter file: " + path);
    return v;
}

}  // namespace

void save_arrays(const std::string& path, const std::vector<NamedArray>& arrays) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write parameter file: " + path);
    f.write(kMagic, sizeof kMagic);
    write_u32(f, static_cast<std::uint32_t>(arrays.size()));
    for (const auto& a : arrays) {
        Eigen::Index expect = 1;
        for (int d : a.shape) expect *= d;
        if (expect != a.data.size())
            throw std::runtime_error("array shape does not match data size: " + a.name);
        write_u32(f, static_cast<std::uint32_t>(a.name.size()));
        f.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
        write_u32(f, static_cast<std::uint32_t>(a.shape.size()));
        for (int d : a.shape) write_u32(f, static_cast<std::uint32_t>(d));
        f.write(reinterpret_cast<const char*>(a.data.data()),
                static_cast<std::streamsize>(a.data.size() * sizeof(double)));
    }
    if (!f) throw std::runtime_error("write failed: " + path);
}

std::vector<NamedArray> load_arrays(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read parameter file: " + path);
    char magic[sizeof kMagic];
    f.read(magic, sizeof magic);
    if (!f || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
        throw std::runtime_error("not a parameter file: " + path);
    const std::uint32_t count = read_u32(f, path);
    if (count > kMaxEntries) throw std::runtime_error("implausible entry count: " + path);

    std::vector<NamedArray> arrays;
    arrays.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedArray a;
        const std::uint32_t name_len = read_u32(f, path);
        if (name_len > kMaxNameLen) throw std::runtime_error("implausible name: " + path);
        a.name.resize(name_len);
        f.read(a.name.data(), name_len);
        const std::uint32_t rank = read_u32(f, path);
        if (rank > kMaxRank) throw std::runtime_error("implausible rank: " + path);
        std::uint64_t elems = 1;
        for (std::uint32_t r = 0; r < rank; ++r) {
            const std::uint32_t d = read_u32(f, path);
            a.shape.push_back(static_cast<int>(d));
            elems *= d;
        }
        if (elems > kMaxElems) throw std::runtime_error("implausible array size: " + path);
        a.data.resize(static_cast<Eigen::Index>(elems));
        f.read(reinterpret_cast<char*>(a.data.data()),
               static_cast<std::streamsize>(elems * sizeof(double)));
        if (!f) throw std::runtime_error("truncated parameter file: " + path);
        arrays.push_back(std::move(a));
    }
    return arrays;
}

std::vector<NamedArray> arrays_from_params(
    const std::vector<std::pair<std::string, Tensor>>& params) {
    std::vector<NamedArray> out;
    out.reserve(params.size());
    for (const auto& [name, t] : params) out.push_back({name, t.shape(), t.values()});
    return out;
}

void apply_arrays_to_params(const std::vector<NamedArray>& arrays,
                            const std::vector<std::pair<std::string, Tensor>>& params) {
    std::unordered_map<std::string, const NamedArray*> by_name;
    for (const auto& a : arrays) by_name[a.name] = &a;
    for (const auto& [name, t] : params) {
        const auto it = by_name.find(name);
        if (it == by_name.end())
            throw CheckpointMismatch("parameter missing from file: " + name);
        const NamedArray& a = *it->second;
        if (a.shape != t.shape())
            throw CheckpointMismatch("parameter shape mismatch: " + name + " (file " +
                                     detail::shape_str(a.shape) + ", model " +
                                     detail::shape_str(t.shape()) + ")");
        Tensor handle = t;
        handle.leaf_values() = a.data;
    }
}

}  // namespace ssc
