#include "ssc/image.hpp"

#include <fstream>
#include <stdexcept>
#include <vector>

namespace ssc {

ImageFrame ImageFrame::filled(int width, int height, double value) {
    ImageFrame f;
    f.width = width;
    f.height = height;
    f.pixels = Eigen::ArrayXd::Constant(static_cast<Eigen::Index>(width) * height * 3, value);
    return f;
}

void ImageFrame::validate() const {
    if (width <= 0 || height <= 0) throw std::invalid_argument("image: empty extents");
    if (pixels.size() != static_cast<Eigen::Index>(width) * height * 3)
        throw std::invalid_argument("image: pixel count does not match extents");
    if (!pixels.allFinite()) throw std::invalid_argument("image: non-finite pixels");
    if ((pixels < 0.0).any() || (pixels > 1.0).any())
        throw std::invalid_argument("image: pixels must lie in [0, 1]");
}

void save_ppm(const std::string& path, const ImageFrame& frame) {
    frame.validate();
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write image: " + path);
    f << "P6\n" << frame.width << ' ' << frame.height << "\n255\n";
    std::vector<unsigned char> bytes(frame.pixels.size());
    for (Eigen::Index i = 0; i < frame.pixels.size(); ++i) {
        double v = frame.pixels[i];
        if (v < 0) v = 0;
        if (v > 1) v = 1;
        bytes[static_cast<std::size_t>(i)] = static_cast<unsigned char>(v * 255.0 + 0.5);
    }
    f.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("write failed: " + path);
}

ImageFrame load_ppm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot read image: " + path);
    std::string magic;
    int width = 0, height = 0, maxval = 0;
    f >> magic >> width >> height >> maxval;
    if (magic != "P6" || maxval != 255 || width <= 0 || height <= 0)
        throw std::runtime_error("unsupported image format: " + path);
    f.get();  // single whitespace after the header
    std::vector<unsigned char> bytes(static_cast<std::size_t>(width) * height * 3);
    f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("truncated image: " + path);
    ImageFrame frame = ImageFrame::filled(width, height, 0.0);
    for (std::size_t i = 0; i < bytes.size(); ++i)
        frame.pixels[static_cast<Eigen::Index>(i)] = bytes[i] / 255.0;
    return frame;
}

}  // namespace ssc
