#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "ssc/ops.hpp"
#include "ssc/rng.hpp"
#include "ssc/voxel_grid.hpp"

namespace ssc {

// Learnable voxel queries over the coarse grid, stored flat in grid scan
// order: row r of `q` belongs to cell (i, j, k) with r = (i*w + j)*z + k.
struct VoxelQuerySet {
    std::array<int, 3> dims{};  // query-resolution grid
    int d = 0;
    Tensor q;           // [N_q, d]
    Tensor pos_embed;   // [N_q, d]
    Tensor mask_token;  // [d]

    static VoxelQuerySet init(Rng& rng, const std::array<int, 3>& dims, int d);
    long query_count() const { return static_cast<long>(dims[0]) * dims[1] * dims[2]; }
    std::vector<std::pair<std::string, Tensor>> named_params(const std::string& prefix) const;
};

// The cells selected by a predicted occupancy mask, as strictly increasing
// flat indices (grid scan order).
struct QueryProposal {
    std::array<int, 3> dims{};
    std::vector<int> indices;
};

// Gathers query + positional embedding rows at the set bits of m_out.
// An all-zero mask yields no tensor and an empty proposal; callers fall back
// to mask tokens everywhere.
std::pair<std::optional<Tensor>, QueryProposal> propose_queries(const VoxelQuerySet& qset,
                                                                const OccupancyGrid& m_out);

}  // namespace ssc
