#include "ssc/features.hpp"

#include <cmath>
#include <stdexcept>

namespace ssc {

namespace {

FeatureExtractor::Block make_block(Rng& rng, int c_in, int c_out, int stride) {
    FeatureExtractor::Block blk;
    // He initialization for ReLU blocks.
    const double stddev = std::sqrt(2.0 / (c_in * 9.0));
    blk.w = Tensor::randn(rng, {c_out, c_in, 3, 3}, stddev, true);
    blk.b = Tensor::zeros({c_out}, true);
    blk.stride = stride;
    return blk;
}

}  // namespace

FeatureExtractor FeatureExtractor::init(Rng& rng, int d, int scale_div) {
    if (d <= 0) throw std::invalid_argument("features: feature dimension must be positive");
    int n_down = 0;
    for (int s = scale_div; s > 1; s /= 2) {
        if (s % 2 != 0)
            throw std::invalid_argument("features: scale divisor must be a power of two");
        ++n_down;
    }
    if (n_down == 0) throw std::invalid_argument("features: scale divisor must be >= 2");

    FeatureExtractor net;
    net.out_channels = d;
    net.scale_div = scale_div;
    int c = net.in_channels;
    int width = 16;
    for (int i = 0; i < n_down; ++i) {
        net.blocks.push_back(make_block(rng, c, width, 2));
        c = width;
        width *= 2;
    }
    net.blocks.push_back(make_block(rng, c, d, 1));
    return net;
}

std::vector<std::pair<std::string, Tensor>> FeatureExtractor::named_params(
    const std::string& prefix) const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        out.emplace_back(prefix + ".conv" + std::to_string(i) + ".w", blocks[i].w);
        out.emplace_back(prefix + ".conv" + std::to_string(i) + ".b", blocks[i].b);
    }
    return out;
}

Tensor image_tensor(const ImageFrame& frame, bool requires_grad) {
    frame.validate();
    Eigen::ArrayXd chw(frame.pixels.size());
    for (int c = 0; c < 3; ++c)
        for (int v = 0; v < frame.height; ++v)
            for (int u = 0; u < frame.width; ++u)
                chw[(static_cast<Eigen::Index>(c) * frame.height + v) * frame.width + u] =
                    frame.at(v, u, c);
    return Tensor::from_array({3, frame.height, frame.width}, std::move(chw), requires_grad);
}

FeatureMap extract_features(const Tensor& image, const FeatureExtractor& net) {
    if (image.rank() != 3 || image.dim(0) != net.in_channels)
        throw std::invalid_argument("extract_features: expected a [3, h, w] image tensor");
    if (image.dim(1) % net.scale_div != 0 || image.dim(2) % net.scale_div != 0)
        throw std::invalid_argument(
            "extract_features: image extents must be divisible by the scale divisor");
    Tensor x = image;
    for (const auto& blk : net.blocks) x = relu(conv2d(x, blk.w, blk.b, blk.stride, 1));
    FeatureMap fm;
    fm.map = chw_to_hwc(x);
    fm.rows = fm.map.dim(0);
    fm.cols = fm.map.dim(1);
    fm.channels = fm.map.dim(2);
    fm.scale = 1.0 / net.scale_div;
    return fm;
}

FeatureMap extract_features(const ImageFrame& frame, const FeatureExtractor& net) {
    return extract_features(image_tensor(frame), net);
}

}  // namespace ssc
