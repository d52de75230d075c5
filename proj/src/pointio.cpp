#include "fskin/pointio.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace fskin {

namespace {

bool has_suffix(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() &&
           s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

std::vector<Vec3> load_points_xyz(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open points file: " + path);
    std::vector<Vec3> pts;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos || line[first] == '#') continue;
        std::istringstream row(line);
        double x, y, z;
        if (!(row >> x >> y >> z)) {
            throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                     ": expected three numbers, got '" + line + "'");
        }
        std::string extra;
        if (row >> extra) {
            throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                     ": trailing content '" + extra + "'");
        }
        pts.emplace_back(x, y, z);
    }
    return pts;
}

std::vector<Vec3> load_points_bin(const std::string& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw std::runtime_error("cannot open points file: " + path);
    const std::streamsize bytes = in.tellg();
    if (bytes % std::streamsize(3 * sizeof(float)) != 0) {
        throw std::runtime_error(path + ": size " + std::to_string(bytes) +
                                 " is not a whole number of f32 triples");
    }
    in.seekg(0);
    std::vector<float> buf(static_cast<std::size_t>(bytes) / sizeof(float));
    in.read(reinterpret_cast<char*>(buf.data()), bytes);
    if (!in) throw std::runtime_error(path + ": truncated read");
    std::vector<Vec3> pts(buf.size() / 3);
    for (std::size_t i = 0; i < pts.size(); ++i) {
        pts[i] = Vec3(buf[3 * i], buf[3 * i + 1], buf[3 * i + 2]);
    }
    return pts;
}

}  // namespace

std::vector<Vec3> load_points(const std::string& path) {
    if (has_suffix(path, ".xyz")) return load_points_xyz(path);
    if (has_suffix(path, ".bin")) return load_points_bin(path);
    throw std::runtime_error(path + ": unknown points extension (expected .xyz or .bin)");
}

void save_points(std::span<const Vec3> points, const std::string& path) {
    if (has_suffix(path, ".xyz")) {
        std::ofstream out(path);
        if (!out) throw std::runtime_error("cannot write points file: " + path);
        char line[128];
        for (const Vec3& p : points) {
            std::snprintf(line, sizeof(line), "%.17g %.17g %.17g\n", p.x(), p.y(), p.z());
            out << line;
        }
        if (!out) throw std::runtime_error("short write to points file: " + path);
        return;
    }
    if (has_suffix(path, ".bin")) {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw std::runtime_error("cannot write points file: " + path);
        std::vector<float> buf;
        buf.reserve(points.size() * 3);
        for (const Vec3& p : points) {
            buf.push_back(static_cast<float>(p.x()));
            buf.push_back(static_cast<float>(p.y()));
            buf.push_back(static_cast<float>(p.z()));
        }
        out.write(reinterpret_cast<const char*>(buf.data()),
                  static_cast<std::streamsize>(buf.size() * sizeof(float)));
        if (!out) throw std::runtime_error("short write to points file: " + path);
        return;
    }
    throw std::runtime_error(path + ": unknown points extension (expected .xyz or .bin)");
}

void save_correspondence_dump(std::span<const CorrespondenceSet> sets,
                              const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write correspondence dump: " + path);
    char buf[160];
    for (const CorrespondenceSet& s : sets) {
        std::snprintf(buf, sizeof(buf), "%.17g %.17g %.17g %zu", s.query.x(), s.query.y(),
                      s.query.z(), s.roots.size());
        out << buf;
        for (const Root& r : s.roots) {
            std::snprintf(buf, sizeof(buf), " %.17g %.17g %.17g %.17g %d %d", r.x.x(),
                          r.x.y(), r.x.z(), r.residual, r.source_bone, r.iterations);
            out << buf;
        }
        out << '\n';
    }
    if (!out) throw std::runtime_error("short write to correspondence dump: " + path);
}

void save_scalar_column(std::span<const double> values, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write value file: " + path);
    char buf[48];
    for (double v : values) {
        std::snprintf(buf, sizeof(buf), "%.17g\n", v);
        out << buf;
    }
    if (!out) throw std::runtime_error("short write to value file: " + path);
}

}  // namespace fskin
