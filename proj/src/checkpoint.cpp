#include "fskin/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace fskin {

namespace {

template <typename T>
void write_raw(std::ostream& out, const T& v) {
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    return v;
}

}  // namespace

void save_fsnf(const Checkpoint& ckpt, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint file: " + path);
    out.write("FSNF", 4);
    write_raw<std::uint32_t>(out, 1u);
    ckpt.occupancy.net().save(out);
    ckpt.skinning.net().save(out);

    const SkinningVoxelGrid& g = ckpt.grid;
    write_raw<std::uint32_t>(out, static_cast<std::uint32_t>(g.dims().nx));
    write_raw<std::uint32_t>(out, static_cast<std::uint32_t>(g.dims().ny));
    write_raw<std::uint32_t>(out, static_cast<std::uint32_t>(g.dims().nz));
    write_raw<std::uint32_t>(out, static_cast<std::uint32_t>(g.bone_count()));
    const double bbox_d[6] = {g.bbox().min.x(), g.bbox().min.y(), g.bbox().min.z(),
                              g.bbox().max.x(), g.bbox().max.y(), g.bbox().max.z()};
    out.write(reinterpret_cast<const char*>(bbox_d), sizeof(bbox_d));
    out.write(reinterpret_cast<const char*>(g.raw().data()),
              static_cast<std::streamsize>(g.raw().size() * sizeof(double)));
    if (!out) throw std::runtime_error("short write to checkpoint file: " + path);
}

Checkpoint load_fsnf(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint file: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "FSNF", 4) != 0) {
        throw std::runtime_error(path + ": not a FSNF checkpoint file");
    }
    const auto version = read_raw<std::uint32_t>(in);
    if (version != 1u) {
        throw std::runtime_error(path + ": unsupported FSNF version " +
                                 std::to_string(version));
    }
    Checkpoint ckpt;
    ckpt.occupancy = OccupancyMlp(Mlp::load(in));
    ckpt.skinning = SkinningMlp(Mlp::load(in));

    GridDims dims;
    dims.nx = static_cast<int>(read_raw<std::uint32_t>(in));
    dims.ny = static_cast<int>(read_raw<std::uint32_t>(in));
    dims.nz = static_cast<int>(read_raw<std::uint32_t>(in));
    const int nb = static_cast<int>(read_raw<std::uint32_t>(in));
    double bbox_d[6];
    in.read(reinterpret_cast<char*>(bbox_d), sizeof(bbox_d));
    const Aabb bbox{{bbox_d[0], bbox_d[1], bbox_d[2]}, {bbox_d[3], bbox_d[4], bbox_d[5]}};
    ckpt.grid = SkinningVoxelGrid(dims, bbox, nb);
    in.read(reinterpret_cast<char*>(ckpt.grid.raw().data()),
            static_cast<std::streamsize>(ckpt.grid.raw().size() * sizeof(double)));
    if (!in) throw std::runtime_error(path + ": truncated FSNF payload");
    if (ckpt.skinning.bone_count() != nb) {
        throw std::runtime_error(path + ": grid bone count disagrees with skinning net");
    }
    return ckpt;
}

}  // namespace fskin
