#include "ssc/stage1.hpp"

#include <cmath>
#include <stdexcept>

namespace ssc {

namespace {

OccupancyNet::Block conv_block(Rng& rng, int c_in, int c_out) {
    OccupancyNet::Block blk;
    blk.w = Tensor::randn(rng, {c_out, c_in, 3, 3}, std::sqrt(2.0 / (c_in * 9.0)), true);
    blk.b = Tensor::zeros({c_out}, true);
    return blk;
}

}  // namespace

OccupancyNet OccupancyNet::init(Rng& rng, const VolumeSpec& spec) {
    spec.validate();
    int factor = spec.downsample_factor();
    int n_enc = 1;  // one extra halving beyond the query scale, recovered by the decoder
    for (int f = factor; f > 1; f /= 2) {
        if (f % 2 != 0)
            throw std::invalid_argument("occupancy net: downsample factor must be a power of two");
        ++n_enc;
    }
    const int stride_total = 1 << n_enc;
    if (spec.dims[0] % stride_total != 0 || spec.dims[1] % stride_total != 0)
        throw std::invalid_argument("occupancy net: grid extents too small for the encoder");

    OccupancyNet net;
    net.in_dims = spec.dims;
    net.out_dims = spec.query_dims;
    int c = spec.dims[2];  // vertical axis as channels
    int width = 16;
    for (int i = 0; i < n_enc; ++i) {
        net.enc.push_back(conv_block(rng, c, width));
        c = width;
        width *= 2;
    }
    const int skip_c = net.enc.size() >= 2 ? net.enc[net.enc.size() - 2].w.dim(0)
                                           : spec.dims[2];
    net.dec = conv_block(rng, c + skip_c, 16);
    net.head = conv_block(rng, 16, spec.query_dims[2]);
    return net;
}

Tensor OccupancyNet::forward(const Tensor& grid) const {
    if (grid.rank() != 3 || grid.dim(0) != in_dims[2] || grid.dim(1) != in_dims[0] ||
        grid.dim(2) != in_dims[1])
        throw std::invalid_argument("occupancy net: input is not a [Z, H, W] grid tensor");
    Tensor x = grid;
    std::vector<Tensor> taps;
    for (const auto& blk : enc) {
        x = relu(conv2d(x, blk.w, blk.b, 2, 1));
        taps.push_back(x);
    }
    const Tensor skip = taps.size() >= 2 ? taps[taps.size() - 2] : grid;
    x = upsample_nearest2d(x, 2);
    x = relu(conv2d(concat_dim0(x, skip), dec.w, dec.b, 1, 1));
    return chw_to_hwc(conv2d(x, head.w, head.b, 1, 1));  // [z, h, w] -> [h, w, z]
}

std::vector<std::pair<std::string, Tensor>> OccupancyNet::named_params(
    const std::string& prefix) const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (std::size_t i = 0; i < enc.size(); ++i) {
        out.emplace_back(prefix + ".enc" + std::to_string(i) + ".w", enc[i].w);
        out.emplace_back(prefix + ".enc" + std::to_string(i) + ".b", enc[i].b);
    }
    out.emplace_back(prefix + ".dec.w", dec.w);
    out.emplace_back(prefix + ".dec.b", dec.b);
    out.emplace_back(prefix + ".head.w", head.w);
    out.emplace_back(prefix + ".head.b", head.b);
    return out;
}

Tensor grid_tensor(const OccupancyGrid& grid) {
    const int h = grid.dims[0], w = grid.dims[1], z = grid.dims[2];
    Eigen::ArrayXd v(static_cast<Eigen::Index>(z) * h * w);
    for (int k = 0; k < z; ++k)
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j)
                v[(static_cast<Eigen::Index>(k) * h + i) * w + j] =
                    grid.bits[static_cast<std::size_t>(grid.index(i, j, k))];
    return Tensor::from_array({z, h, w}, std::move(v));
}

std::pair<Tensor, OccupancyGrid> predict_occupancy(const OccupancyGrid& m_in,
                                                   const OccupancyNet& net) {
    if (m_in.dims != net.in_dims)
        throw std::invalid_argument("predict_occupancy: grid resolution mismatch");
    Tensor logits = net.forward(grid_tensor(m_in));
    OccupancyGrid m_out = OccupancyGrid::zeros(net.out_dims);
    for (long i = 0; i < m_out.cell_count(); ++i)
        m_out.bits[static_cast<std::size_t>(i)] = logits[i] > 0.0 ? 1 : 0;  // sigmoid > 0.5
    return {std::move(logits), std::move(m_out)};
}

Tensor stage1_loss(const Tensor& logits, const OccupancyGrid& target) {
    if (logits.rank() != 3 || logits.dim(0) != target.dims[0] ||
        logits.dim(1) != target.dims[1] || logits.dim(2) != target.dims[2])
        throw std::invalid_argument("stage1_loss: logits/target shape mismatch");
    Eigen::ArrayXd t(logits.size());
    for (Eigen::Index i = 0; i < t.size(); ++i)
        t[i] = target.bits[static_cast<std::size_t>(i)] ? 1.0 : 0.0;
    return bce_with_logits_mean(logits, t);
}

}  // namespace ssc
