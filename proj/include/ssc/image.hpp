#pragma once

#include <string>

#include "ssc/geometry.hpp"

namespace ssc {

// RGB image with its camera. Pixel values live in [0,1]; storage is row-major
// height x width x 3.
struct ImageFrame {
    int width = 0, height = 0;
    Eigen::ArrayXd pixels;
    int frame_index = 0;
    CameraIntrinsics intrinsics;
    CameraPose pose;

    static ImageFrame filled(int width, int height, double value);
    double at(int v, int u, int c) const {
        return pixels[(static_cast<Eigen::Index>(v) * width + u) * 3 + c];
    }
    double& at(int v, int u, int c) {
        return pixels[(static_cast<Eigen::Index>(v) * width + u) * 3 + c];
    }
    void validate() const;
};

// Binary 8-bit PPM (P6). Quantizes on save; the camera and frame index are
// not part of the format and travel in the camera description file instead.
void save_ppm(const std::string& path, const ImageFrame& frame);
ImageFrame load_ppm(const std::string& path);

}  // namespace ssc
