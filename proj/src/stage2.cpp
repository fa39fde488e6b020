#include "ssc/stage2.hpp"

#include <cmath>
#include <stdexcept>

namespace ssc {

namespace {

// Feed-forward sublayer with pre-normalization, shared by both attention
// stacks: x + W2 relu(W1 ln(x) + b1) + b2.
Tensor ffn_block(const Tensor& x, const AttentionLayerParams& p) {
    Tensor h = layer_norm_rows(x, p.norm2_g, p.norm2_b);
    return add(x, linear(relu(linear(h, p.ffn_w1, p.ffn_b1)), p.ffn_w2, p.ffn_b2));
}

void decode_query_index(int flat, const std::array<int, 3>& dims, int& i, int& j, int& k) {
    k = flat % dims[2];
    j = (flat / dims[2]) % dims[1];
    i = flat / (dims[2] * dims[1]);
}

}  // namespace

AttentionLayerParams AttentionLayerParams::init(Rng& rng, int d, int n_samples) {
    if (d <= 0 || n_samples <= 0)
        throw std::invalid_argument("attention layer: d and sample count must be positive");
    AttentionLayerParams p;
    p.d = d;
    p.n_samples = n_samples;
    const double xavier = std::sqrt(1.0 / d);
    for (int s = 0; s < n_samples; ++s)
        p.value_w.push_back(Tensor::randn(rng, {d, d}, xavier, true));
    p.offset_w = Tensor::zeros({d, 2 * n_samples}, true);
    p.offset_b = Tensor::zeros({2 * n_samples}, true);
    p.logit_w = Tensor::zeros({d, n_samples}, true);
    p.logit_b = Tensor::zeros({n_samples}, true);
    p.out_w = Tensor::randn(rng, {d, d}, xavier, true);
    p.out_b = Tensor::zeros({d}, true);
    p.ffn_w1 = Tensor::randn(rng, {d, 2 * d}, std::sqrt(2.0 / d), true);
    p.ffn_b1 = Tensor::zeros({2 * d}, true);
    p.ffn_w2 = Tensor::randn(rng, {2 * d, d}, std::sqrt(1.0 / (2 * d)), true);
    p.ffn_b2 = Tensor::zeros({d}, true);
    p.norm1_g = Tensor::constant({d}, 1.0, true);
    p.norm1_b = Tensor::zeros({d}, true);
    p.norm2_g = Tensor::constant({d}, 1.0, true);
    p.norm2_b = Tensor::zeros({d}, true);
    return p;
}

std::vector<std::pair<std::string, Tensor>> AttentionLayerParams::named_params(
    const std::string& prefix) const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (std::size_t s = 0; s < value_w.size(); ++s)
        out.emplace_back(prefix + ".value" + std::to_string(s), value_w[s]);
    out.emplace_back(prefix + ".offset.w", offset_w);
    out.emplace_back(prefix + ".offset.b", offset_b);
    out.emplace_back(prefix + ".logit.w", logit_w);
    out.emplace_back(prefix + ".logit.b", logit_b);
    out.emplace_back(prefix + ".out.w", out_w);
    out.emplace_back(prefix + ".out.b", out_b);
    out.emplace_back(prefix + ".ffn.w1", ffn_w1);
    out.emplace_back(prefix + ".ffn.b1", ffn_b1);
    out.emplace_back(prefix + ".ffn.w2", ffn_w2);
    out.emplace_back(prefix + ".ffn.b2", ffn_b2);
    out.emplace_back(prefix + ".norm1.g", norm1_g);
    out.emplace_back(prefix + ".norm1.b", norm1_b);
    out.emplace_back(prefix + ".norm2.g", norm2_g);
    out.emplace_back(prefix + ".norm2.b", norm2_b);
    return out;
}

Tensor deformable_attention_rows(const Tensor& queries, const Tensor& refs, const Tensor& fmap,
                                 const AttentionLayerParams& params, AttentionTrace* trace,
                                 const char* where) {
    if (queries.rank() != 2 || queries.dim(1) != params.d)
        throw std::invalid_argument("deformable attention: queries must be [n, d]");
    if (refs.rank() != 2 || refs.dim(0) != queries.dim(0) || refs.dim(1) != 2)
        throw std::invalid_argument("deformable attention: one (u, v) reference per query");
    if (fmap.rank() != 3 || fmap.dim(2) != params.d)
        throw std::invalid_argument("deformable attention: map channels must equal d");
    const int n = queries.dim(0);

    Tensor offsets = linear(queries, params.offset_w, params.offset_b);
    Tensor weights = softmax_rows(linear(queries, params.logit_w, params.logit_b));
    if (trace)
        trace->entries.push_back(
            {where, n, params.n_samples, weights.values()});

    Tensor acc;
    for (int s = 0; s < params.n_samples; ++s) {
        Tensor pts = add(refs, slice_cols(offsets, 2 * s, 2));
        Tensor sampled = matmul(bilinear_sample(fmap, pts), params.value_w[static_cast<std::size_t>(s)]);
        Tensor term = scale_rows(sampled, reshape(slice_cols(weights, s, 1), {n}));
        acc = s == 0 ? term : add(acc, term);
    }
    return acc;
}

Tensor deformable_attention(const Tensor& query, double ref_u, double ref_v, const Tensor& fmap,
                            const AttentionLayerParams& params) {
    if (query.rank() != 1) throw std::invalid_argument("deformable attention: query must be [d]");
    Tensor q2 = reshape(query, {1, query.dim(0)});
    Tensor refs = Tensor::from_values({1, 2}, {ref_u, ref_v});
    return reshape(deformable_attention_rows(q2, refs, fmap, params), {query.dim(0)});
}

namespace {

struct ViewGeometry {
    Tensor refs;            // [N_p, 2] constant, feature-plane coordinates
    Eigen::ArrayXd valid;   // 1 where the voxel center projects into the view
};

ViewGeometry reference_points(const QueryProposal& proposal, const VolumeSpec& spec,
                              const CameraViewFeatures& view) {
    const int n = static_cast<int>(proposal.indices.size());
    Eigen::ArrayXd refs(2 * n);
    Eigen::ArrayXd valid(n);
    for (int r = 0; r < n; ++r) {
        int i, j, k;
        decode_query_index(proposal.indices[static_cast<std::size_t>(r)], proposal.dims, i, j, k);
        const Eigen::Vector3d center = voxel_center({i, j, k}, spec, Resolution::query);
        const PixelProjection p = project(center, view.intrinsics, view.pose);
        valid[r] = p.valid ? 1.0 : 0.0;
        // Misses still need finite coordinates; park them in the zero-padding
        // region so the masked sample is well-defined.
        refs[2 * r] = p.valid ? p.u * view.fmap.scale : -10.0;
        refs[2 * r + 1] = p.valid ? p.v * view.fmap.scale : -10.0;
    }
    ViewGeometry g;
    g.refs = Tensor::from_array({n, 2}, std::move(refs));
    g.valid = std::move(valid);
    return g;
}

}  // namespace

Tensor cross_attend(const Tensor& q_p, const QueryProposal& proposal,
                    const std::vector<CameraViewFeatures>& views, const VolumeSpec& spec,
                    const std::vector<AttentionLayerParams>& layers, AttentionTrace* trace) {
    if (views.empty()) throw std::invalid_argument("cross attention: need at least one view");
    const int n = q_p.dim(0);
    if (q_p.rank() != 2 || n != static_cast<int>(proposal.indices.size()))
        throw std::invalid_argument("cross attention: one query row per proposal index");
    spec.validate();

    std::vector<ViewGeometry> geom;
    geom.reserve(views.size());
    Eigen::ArrayXd hits = Eigen::ArrayXd::Zero(n);
    for (const auto& view : views) {
        geom.push_back(reference_points(proposal, spec, view));
        hits += geom.back().valid;
    }
    Eigen::ArrayXd inv_hits(n), has_hit(n);
    for (int i = 0; i < n; ++i) {
        inv_hits[i] = hits[i] > 0 ? 1.0 / hits[i] : 0.0;
        has_hit[i] = hits[i] > 0 ? 1.0 : 0.0;
    }
    const Tensor inv_hits_t = Tensor::from_array({n}, inv_hits);
    const Tensor has_hit_t = Tensor::from_array({n}, has_hit);

    Tensor x = q_p;
    for (std::size_t li = 0; li < layers.size(); ++li) {
        const auto& layer = layers[li];
        Tensor h = layer_norm_rows(x, layer.norm1_g, layer.norm1_b);
        Tensor sum;
        for (std::size_t v = 0; v < views.size(); ++v) {
            const std::string where =
                "cross layer " + std::to_string(li) + " view " + std::to_string(v);
            Tensor da = deformable_attention_rows(h, geom[v].refs, views[v].fmap.map, layer,
                                                  trace, where.c_str());
            Tensor masked = scale_rows(da, Tensor::from_array({n}, geom[v].valid));
            sum = v == 0 ? masked : add(sum, masked);
        }
        Tensor mean = scale_rows(sum, inv_hits_t);
        Tensor attn = scale_rows(linear(mean, layer.out_w, layer.out_b), has_hit_t);
        x = add(x, attn);
        x = ffn_block(x, layer);
    }
    return x;
}

Tensor scatter_with_mask_tokens(const std::optional<Tensor>& q_hat,
                                const QueryProposal& proposal, const VoxelQuerySet& qset) {
    if (proposal.dims != qset.dims)
        throw std::invalid_argument("scatter: proposal grid does not match query grid");
    const int n_q = static_cast<int>(qset.query_count());
    Tensor base = add(broadcast_row(qset.mask_token, n_q), qset.pos_embed);
    if (!q_hat) {
        if (!proposal.indices.empty())
            throw std::invalid_argument("scatter: proposal has indices but no refined rows");
        return base;
    }
    if (q_hat->dim(0) != static_cast<int>(proposal.indices.size()))
        throw std::invalid_argument("scatter: refined row count does not match proposal");
    return scatter_rows(base, *q_hat, proposal.indices);
}

Tensor self_attend(const Tensor& f3d, const VolumeSpec& spec,
                   const std::vector<AttentionLayerParams>& layers, AttentionTrace* trace) {
    spec.validate();
    const auto& dims = spec.query_dims;
    const int n_q = dims[0] * dims[1] * dims[2];
    if (f3d.rank() != 2 || f3d.dim(0) != n_q)
        throw std::invalid_argument("self attention: features must cover the full query grid");
    const int d = f3d.dim(1);
    const int h = dims[0], w = dims[1], z = dims[2];

    // Grid -> 2D map layout: map cell (i*z + k, j) holds voxel (i, j, k).
    std::vector<int> map_rows(static_cast<std::size_t>(n_q));
    Eigen::ArrayXd refs(2 * static_cast<Eigen::Index>(n_q));
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j)
            for (int k = 0; k < z; ++k) {
                const int voxel = (i * w + j) * z + k;
                const int map_pos = (i * z + k) * w + j;
                map_rows[static_cast<std::size_t>(map_pos)] = voxel;
                refs[2 * voxel] = j;           // u = column
                refs[2 * voxel + 1] = i * z + k;  // v = row
            }
    const Tensor refs_t = Tensor::from_array({n_q, 2}, refs);

    Tensor x = f3d;
    for (std::size_t li = 0; li < layers.size(); ++li) {
        const auto& layer = layers[li];
        Tensor hn = layer_norm_rows(x, layer.norm1_g, layer.norm1_b);
        Tensor map2d = reshape(gather_rows(hn, map_rows), {h * z, w, d});
        const std::string where = "self layer " + std::to_string(li);
        Tensor da = deformable_attention_rows(hn, refs_t, map2d, layer, trace, where.c_str());
        x = add(x, linear(da, layer.out_w, layer.out_b));
        x = ffn_block(x, layer);
    }
    return x;
}

OutputHeadParams OutputHeadParams::init(Rng& rng, int d, int classes) {
    OutputHeadParams p;
    p.w = Tensor::randn(rng, {d, classes}, std::sqrt(1.0 / d), true);
    p.b = Tensor::zeros({classes}, true);
    return p;
}

std::vector<std::pair<std::string, Tensor>> OutputHeadParams::named_params(
    const std::string& prefix) const {
    return {{prefix + ".w", w}, {prefix + ".b", b}};
}

Tensor output_head(const Tensor& f3d, const VolumeSpec& spec, const OutputHeadParams& params) {
    spec.validate();
    const auto& qd = spec.query_dims;
    const int n_q = qd[0] * qd[1] * qd[2];
    if (f3d.rank() != 2 || f3d.dim(0) != n_q)
        throw std::invalid_argument("output head: features must cover the full query grid");
    const int d = f3d.dim(1);
    Tensor grid = reshape(f3d, {qd[0], qd[1], qd[2], d});
    Tensor up = upsample_trilinear(grid, spec.downsample_factor());
    const long n_out = spec.cell_count(Resolution::output);
    return linear(reshape(up, {static_cast<int>(n_out), d}), params.w, params.b);
}

}  // namespace ssc
