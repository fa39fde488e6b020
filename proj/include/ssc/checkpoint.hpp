#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ssc/tensor.hpp"

namespace ssc {

// A parameter file that parsed fine but does not fit the model it is being
// loaded into (missing tensor or wrong shape). Distinguished from plain I/O
// failures so callers can report it as a different kind of error.
struct CheckpointMismatch : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Named double-precision arrays with shapes; the on-disk unit for model
// parameters and optimizer state. Writing the same arrays in the same order
// produces byte-identical files.
struct NamedArray {
    std::string name;
    std::vector<int> shape;
    Eigen::ArrayXd data;
};

// Binary container: fixed magic, entry count, then per entry name, shape and
// raw doubles. Throws std::runtime_error on I/O or format errors.
void save_arrays(const std::string& path, const std::vector<NamedArray>& arrays);
std::vector<NamedArray> load_arrays(const std::string& path);

// Snapshot of named parameter tensors.
std::vector<NamedArray> arrays_from_params(
    const std::vector<std::pair<std::string, Tensor>>& params);

// Copies loaded arrays back into parameter tensors, matching by name. Every
// parameter must be present with the exact shape; mismatches are reported by
// name via CheckpointMismatch. Extra arrays (e.g. optimizer state) are
// ignored here.
void apply_arrays_to_params(const std::vector<NamedArray>& arrays,
                            const std::vector<std::pair<std::string, Tensor>>& params);

}  // namespace ssc
