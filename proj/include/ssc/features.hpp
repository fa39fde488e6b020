#pragma once

#include <string>
#include <utility>
#include <vector>

#include "ssc/image.hpp"
#include "ssc/ops.hpp"
#include "ssc/rng.hpp"

namespace ssc {

// Image features at a reduced scale; `map` is [rows, cols, channels] and
// feeds bilinear sampling directly. A point at image pixel (u, v) lands at
// feature coordinate (u * scale, v * scale).
struct FeatureMap {
    Tensor map;
    double scale = 1.0;
    int rows = 0, cols = 0, channels = 0;
};

// Small convolutional backbone: log2(scale_div) stride-2 blocks with doubling
// widths from 16, then one stride-1 block to the feature dimension. All
// blocks are 3x3, zero-padded, ReLU.
struct FeatureExtractor {
    struct Block {
        Tensor w, b;
        int stride = 1;
    };
    std::vector<Block> blocks;
    int in_channels = 3;
    int out_channels = 0;
    int scale_div = 4;  // feature scale = 1 / scale_div

    static FeatureExtractor init(Rng& rng, int d, int scale_div);
    std::vector<std::pair<std::string, Tensor>> named_params(const std::string& prefix) const;
};

// Image pixels as a [3, height, width] tensor.
Tensor image_tensor(const ImageFrame& frame, bool requires_grad = false);

// Runs the backbone. Image extents must be divisible by scale_div.
// Differentiable with respect to the parameters and the input tensor.
FeatureMap extract_features(const Tensor& image, const FeatureExtractor& net);
FeatureMap extract_features(const ImageFrame& frame, const FeatureExtractor& net);

}  // namespace ssc
