#pragma once

#include <string>
#include <utility>
#include <vector>

#include "ssc/features.hpp"
#include "ssc/geometry.hpp"
#include "ssc/ops.hpp"
#include "ssc/queries.hpp"
#include "ssc/rng.hpp"

namespace ssc {

// One deformable-attention block: per-sample value projections, offset and
// weight heads driven by the query, output projection, feed-forward, and the
// two pre-normalization parameter sets. Offset and weight heads start at
// zero, so at initialization every sample sits on the reference point with
// uniform attention.
struct AttentionLayerParams {
    int d = 0;
    int n_samples = 0;
    std::vector<Tensor> value_w;  // n_samples matrices [d, d]
    Tensor offset_w, offset_b;    // [d, 2*n_samples], zero-initialized
    Tensor logit_w, logit_b;      // [d, n_samples], zero-initialized
    Tensor out_w, out_b;          // [d, d]
    Tensor ffn_w1, ffn_b1;        // [d, 2d]
    Tensor ffn_w2, ffn_b2;        // [2d, d]
    Tensor norm1_g, norm1_b, norm2_g, norm2_b;

    static AttentionLayerParams init(Rng& rng, int d, int n_samples);
    std::vector<std::pair<std::string, Tensor>> named_params(const std::string& prefix) const;
};

// One camera view available to cross-attention.
struct CameraViewFeatures {
    FeatureMap fmap;
    CameraIntrinsics intrinsics;
    CameraPose pose;
};

// Softmax weight matrices recorded during a forward pass (values only), one
// entry per deformable-attention evaluation, for invariant checks.
struct AttentionTrace {
    struct Entry {
        std::string where;
        int rows = 0, cols = 0;
        Eigen::ArrayXd weights;  // row-major [rows, cols]
    };
    std::vector<Entry> entries;
};

// Core deformable attention: for each row q of `queries` with reference point
// refs[row], predicts n_samples offsets and weights, bilinearly samples the
// map at ref + offset, applies the per-sample value projections and returns
// the weight-averaged sum. No residual, projection or normalization here.
Tensor deformable_attention_rows(const Tensor& queries, const Tensor& refs, const Tensor& fmap,
                                 const AttentionLayerParams& params,
                                 AttentionTrace* trace = nullptr, const char* where = "");

// Single-query convenience matching the d-in, d-out contract.
Tensor deformable_attention(const Tensor& query, double ref_u, double ref_v, const Tensor& fmap,
                            const AttentionLayerParams& params);

// Cross-attention stack: each proposed query attends into every view whose
// projection of its voxel center lands inside the image; the per-view results
// are averaged over that hit set. Queries no view sees pass through the
// attention term unchanged. Input and output are [N_p, d].
Tensor cross_attend(const Tensor& q_p, const QueryProposal& proposal,
                    const std::vector<CameraViewFeatures>& views, const VolumeSpec& spec,
                    const std::vector<AttentionLayerParams>& layers,
                    AttentionTrace* trace = nullptr);

// Fills the full query grid: refined rows where proposed, mask token plus
// positional embedding elsewhere. Returns [N_q, d] in grid scan order.
Tensor scatter_with_mask_tokens(const std::optional<Tensor>& q_hat,
                                const QueryProposal& proposal, const VoxelQuerySet& qset);

// Self-attention stack over the dense grid. The grid is flattened to a 2D
// map of extents (h*z) x w — cell (i*z + k, j) holds voxel (i, j, k) — so the
// same 2D sampling kernel used against images drives volumetric attention.
Tensor self_attend(const Tensor& f3d, const VolumeSpec& spec,
                   const std::vector<AttentionLayerParams>& layers,
                   AttentionTrace* trace = nullptr);

// Trilinear upsampling from query to output resolution followed by a
// per-voxel linear projection to class logits.
struct OutputHeadParams {
    Tensor w;  // [d, classes]
    Tensor b;  // [classes]

    static OutputHeadParams init(Rng& rng, int d, int classes);
    std::vector<std::pair<std::string, Tensor>> named_params(const std::string& prefix) const;
};
// f3d is [N_q, d] in grid scan order; returns [N_out, classes] in output-grid
// scan order.
Tensor output_head(const Tensor& f3d, const VolumeSpec& spec, const OutputHeadParams& params);

}  // namespace ssc
