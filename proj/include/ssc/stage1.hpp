#pragma once

#include <string>
#include <utility>
#include <vector>

#include "ssc/ops.hpp"
#include "ssc/rng.hpp"
#include "ssc/voxel_grid.hpp"

namespace ssc {

// Occupancy-correction network. The vertical axis is treated as channels so
// the whole net runs on 2D convolutions: input [Z, H, W] binary grid, output
// [h, w, z] logits at query resolution. Encoder-decoder with one skip
// connection at the query-resolution level.
struct OccupancyNet {
    struct Block {
        Tensor w, b;
    };
    std::vector<Block> enc;  // stride-2 blocks
    Block dec;               // after upsample + skip concat
    Block head;              // to z logit channels
    std::array<int, 3> in_dims{}, out_dims{};

    static OccupancyNet init(Rng& rng, const VolumeSpec& spec);
    // [Z, H, W] -> [h, w, z]; differentiable w.r.t. parameters.
    Tensor forward(const Tensor& grid) const;
    std::vector<std::pair<std::string, Tensor>> named_params(const std::string& prefix) const;
};

// Occupancy bits as a [Z, H, W] tensor (no gradient).
Tensor grid_tensor(const OccupancyGrid& grid);

// Runs the net and thresholds at probability 0.5 (logit 0) to produce the
// query-selection mask.
std::pair<Tensor, OccupancyGrid> predict_occupancy(const OccupancyGrid& m_in,
                                                   const OccupancyNet& net);

// Mean binary cross entropy of [h, w, z] logits against a query-resolution
// occupancy target.
Tensor stage1_loss(const Tensor& logits, const OccupancyGrid& target);

}  // namespace ssc
