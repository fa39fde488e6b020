#include "ssc/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ssc {

RunConfig RunConfig::desk_default() {
    RunConfig c;
    c.volume.origin = Eigen::Vector3d(0.0, -6.4, -0.4);
    c.volume.voxel_size = 0.4;
    c.volume.dims = {32, 32, 8};
    c.volume.query_dims = {16, 16, 4};
    c.camera.fu = c.camera.fv = 32.0;
    c.camera.cu = c.camera.cv = 32.0;
    c.camera.width = c.camera.height = 64;
    return c;
}

void RunConfig::validate() const {
    volume.validate();
    camera.validate();
    if (d <= 0 || n_samples <= 0) throw std::invalid_argument("config: d and samples must be > 0");
    if (cross_layers < 0 || self_layers < 0)
        throw std::invalid_argument("config: layer counts must be >= 0");
    if (feature_scale_div < 2 || (feature_scale_div & (feature_scale_div - 1)) != 0)
        throw std::invalid_argument("config: feature scale divisor must be a power of two >= 2");
    if (camera.width % feature_scale_div != 0 || camera.height % feature_scale_div != 0)
        throw std::invalid_argument("config: image extents must divide by the feature scale");
    if (class_count < 2 || class_count > 254)
        throw std::invalid_argument("config: class count out of range");
    if (frames < 1) throw std::invalid_argument("config: need at least one frame");
    if (!(frame_spacing >= 0)) throw std::invalid_argument("config: frame spacing must be >= 0");
    if (min_objects < 0 || max_objects < min_objects)
        throw std::invalid_argument("config: bad object count range");
    if (!(depth_noise_sigma >= 0)) throw std::invalid_argument("config: noise sigma must be >= 0");
    if (!(lr > 0)) throw std::invalid_argument("config: learning rate must be > 0");
    if (stage1_steps < 0 || stage2_steps < 0)
        throw std::invalid_argument("config: step counts must be >= 0");
    if (query_mode == QueryMode::random &&
        !(random_query_fraction > 0 && random_query_fraction <= 1))
        throw std::invalid_argument("config: random query fraction must be in (0, 1]");
    if (eval_ranges.empty()) throw std::invalid_argument("config: need at least one eval range");
    const Eigen::Vector3d extent = volume.extent();
    for (const double r : eval_ranges)
        if (!(r > 0) || r > extent.x() || r > extent.y())
            throw std::invalid_argument("config: eval range outside the volume");
}

QueryMode parse_query_mode(const std::string& text, double* fraction) {
    if (text == "occupancy") return QueryMode::occupancy;
    if (text == "dense") return QueryMode::dense;
    if (text.rfind("random:", 0) == 0) {
        const std::string arg = text.substr(7);
        std::size_t used = 0;
        double f = 0;
        try {
            f = std::stod(arg, &used);
        } catch (const std::exception&) {
            throw std::invalid_argument("bad random query fraction: " + text);
        }
        if (used != arg.size() || !(f > 0 && f <= 1))
            throw std::invalid_argument("bad random query fraction: " + text);
        if (fraction) *fraction = f;
        return QueryMode::random;
    }
    throw std::invalid_argument("unknown query mode: " + text +
                                " (expected occupancy, dense or random:<fraction>)");
}

std::string query_mode_str(QueryMode mode, double fraction) {
    switch (mode) {
        case QueryMode::occupancy: return "occupancy";
        case QueryMode::dense: return "dense";
        case QueryMode::random: {
            char buf[48];
            std::snprintf(buf, sizeof buf, "random:%.17g", fraction);
            return buf;
        }
    }
    throw std::logic_error("unreachable query mode");
}

OccupancySource parse_occupancy_source(const std::string& text) {
    if (text == "net") return OccupancySource::net;
    if (text == "oracle") return OccupancySource::oracle;
    if (text == "raw_depth") return OccupancySource::raw_depth;
    throw std::invalid_argument("unknown occupancy source: " + text +
                                " (expected net, oracle or raw_depth)");
}

std::string occupancy_source_str(OccupancySource source) {
    switch (source) {
        case OccupancySource::net: return "net";
        case OccupancySource::oracle: return "oracle";
        case OccupancySource::raw_depth: return "raw_depth";
    }
    throw std::logic_error("unreachable occupancy source");
}

namespace {

std::string fmt(double v) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

}  // namespace

void save_config(const std::string& path, const RunConfig& c) {
    c.validate();
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write config: " + path);
    f << "# run configuration\n";
    f << "volume.origin = " << fmt(c.volume.origin.x()) << ' ' << fmt(c.volume.origin.y()) << ' '
      << fmt(c.volume.origin.z()) << '\n';
    f << "volume.voxel_size = " << fmt(c.volume.voxel_size) << '\n';
    f << "volume.dims = " << c.volume.dims[0] << ' ' << c.volume.dims[1] << ' '
      << c.volume.dims[2] << '\n';
    f << "volume.query_dims = " << c.volume.query_dims[0] << ' ' << c.volume.query_dims[1] << ' '
      << c.volume.query_dims[2] << '\n';
    f << "model.d = " << c.d << '\n';
    f << "model.n_samples = " << c.n_samples << '\n';
    f << "model.cross_layers = " << c.cross_layers << '\n';
    f << "model.self_layers = " << c.self_layers << '\n';
    f << "model.feature_scale_div = " << c.feature_scale_div << '\n';
    f << "model.class_count = " << c.class_count << '\n';
    f << "camera.fu = " << fmt(c.camera.fu) << '\n';
    f << "camera.fv = " << fmt(c.camera.fv) << '\n';
    f << "camera.cu = " << fmt(c.camera.cu) << '\n';
    f << "camera.cv = " << fmt(c.camera.cv) << '\n';
    f << "camera.width = " << c.camera.width << '\n';
    f << "camera.height = " << c.camera.height << '\n';
    f << "camera.frames = " << c.frames << '\n';
    f << "camera.frame_spacing = " << fmt(c.frame_spacing) << '\n';
    f << "camera.height_above_ground = " << fmt(c.camera_height) << '\n';
    f << "synth.min_objects = " << c.min_objects << '\n';
    f << "synth.max_objects = " << c.max_objects << '\n';
    f << "synth.depth_noise_sigma = " << fmt(c.depth_noise_sigma) << '\n';
    f << "train.lr = " << fmt(c.lr) << '\n';
    f << "train.stage1_steps = " << c.stage1_steps << '\n';
    f << "train.stage2_steps = " << c.stage2_steps << '\n';
    f << "train.seed = " << c.seed << '\n';
    f << "train.with_affinity = " << (c.with_affinity ? 1 : 0) << '\n';
    f << "stage2.query_mode = " << query_mode_str(c.query_mode, c.random_query_fraction) << '\n';
    f << "stage2.occupancy_source = " << occupancy_source_str(c.occupancy_source) << '\n';
    f << "stage2.disable_cross_attention = " << (c.disable_cross_attention ? 1 : 0) << '\n';
    f << "stage2.disable_self_attention = " << (c.disable_self_attention ? 1 : 0) << '\n';
    f << "eval.ranges =";
    for (const double r : c.eval_ranges) f << ' ' << fmt(r);
    f << '\n';
    if (!f) throw std::runtime_error("write failed: " + path);
}

RunConfig load_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot read config: " + path);
    RunConfig c = RunConfig::desk_default();
    std::string line;
    int line_no = 0;
    while (std::getline(f, line)) {
        ++line_no;
        const std::string text = trim(line);
        if (text.empty() || text[0] == '#') continue;
        const auto eq = text.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error(path + ":" + std::to_string(line_no) +
                                     ": expected key = value");
        const std::string key = trim(text.substr(0, eq));
        const std::string value = trim(text.substr(eq + 1));
        std::istringstream v(value);
        const auto bad = [&](const char* what) {
            return std::runtime_error(path + ":" + std::to_string(line_no) + ": bad " + what +
                                      " value: " + value);
        };
        const auto read_int = [&](int& out, const char* what) {
            if (!(v >> out) || !(v >> std::ws).eof()) throw bad(what);
        };
        const auto read_double = [&](double& out, const char* what) {
            if (!(v >> out) || !(v >> std::ws).eof()) throw bad(what);
        };
        const auto read_bool = [&](bool& out, const char* what) {
            int i = 0;
            if (!(v >> i) || !(v >> std::ws).eof() || (i != 0 && i != 1)) throw bad(what);
            out = i == 1;
        };
        if (key == "volume.origin") {
            if (!(v >> c.volume.origin.x() >> c.volume.origin.y() >> c.volume.origin.z()) ||
                !(v >> std::ws).eof())
                throw bad("origin");
        } else if (key == "volume.voxel_size") {
            read_double(c.volume.voxel_size, "voxel size");
        } else if (key == "volume.dims") {
            if (!(v >> c.volume.dims[0] >> c.volume.dims[1] >> c.volume.dims[2]) ||
                !(v >> std::ws).eof())
                throw bad("dims");
        } else if (key == "volume.query_dims") {
            if (!(v >> c.volume.query_dims[0] >> c.volume.query_dims[1] >>
                  c.volume.query_dims[2]) ||
                !(v >> std::ws).eof())
                throw bad("query dims");
        } else if (key == "model.d") {
            read_int(c.d, "d");
        } else if (key == "model.n_samples") {
            read_int(c.n_samples, "sample count");
        } else if (key == "model.cross_layers") {
            read_int(c.cross_layers, "cross layers");
        } else if (key == "model.self_layers") {
            read_int(c.self_layers, "self layers");
        } else if (key == "model.feature_scale_div") {
            read_int(c.feature_scale_div, "feature scale");
        } else if (key == "model.class_count") {
            read_int(c.class_count, "class count");
        } else if (key == "camera.fu") {
            read_double(c.camera.fu, "fu");
        } else if (key == "camera.fv") {
            read_double(c.camera.fv, "fv");
        } else if (key == "camera.cu") {
            read_double(c.camera.cu, "cu");
        } else if (key == "camera.cv") {
            read_double(c.camera.cv, "cv");
        } else if (key == "camera.width") {
            read_int(c.camera.width, "width");
        } else if (key == "camera.height") {
            read_int(c.camera.height, "height");
        } else if (key == "camera.frames") {
            read_int(c.frames, "frames");
        } else if (key == "camera.frame_spacing") {
            read_double(c.frame_spacing, "frame spacing");
        } else if (key == "camera.height_above_ground") {
            read_double(c.camera_height, "camera height");
        } else if (key == "synth.min_objects") {
            read_int(c.min_objects, "min objects");
        } else if (key == "synth.max_objects") {
            read_int(c.max_objects, "max objects");
        } else if (key == "synth.depth_noise_sigma") {
            read_double(c.depth_noise_sigma, "noise sigma");
        } else if (key == "train.lr") {
            read_double(c.lr, "learning rate");
        } else if (key == "train.stage1_steps") {
            read_int(c.stage1_steps, "stage-1 steps");
        } else if (key == "train.stage2_steps") {
            read_int(c.stage2_steps, "stage-2 steps");
        } else if (key == "train.seed") {
            if (!(v >> c.seed) || !(v >> std::ws).eof()) throw bad("seed");
        } else if (key == "train.with_affinity") {
            read_bool(c.with_affinity, "affinity flag");
        } else if (key == "stage2.query_mode") {
            c.query_mode = parse_query_mode(value, &c.random_query_fraction);
        } else if (key == "stage2.occupancy_source") {
            c.occupancy_source = parse_occupancy_source(value);
        } else if (key == "stage2.disable_cross_attention") {
            read_bool(c.disable_cross_attention, "cross-attention flag");
        } else if (key == "stage2.disable_self_attention") {
            read_bool(c.disable_self_attention, "self-attention flag");
        } else if (key == "eval.ranges") {
            c.eval_ranges.clear();
            double r = 0;
            while (v >> r) c.eval_ranges.push_back(r);
            if (!v.eof() || c.eval_ranges.empty()) throw bad("ranges");
        } else {
            throw std::runtime_error(path + ":" + std::to_string(line_no) + ": unknown key " +
                                     key);
        }
    }
    try {
        c.validate();
    } catch (const std::invalid_argument& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
    return c;
}

}  // namespace ssc
