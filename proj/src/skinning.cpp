#include "fskin/skinning.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace fskin {

SkinningMlp::SkinningMlp(int n_bones, std::uint64_t seed)
    : net_({3, 64, 64, 64, n_bones}, seed) {
    if (n_bones < 1) throw std::invalid_argument("SkinningMlp: n_bones must be >= 1");
    // A near-zero head makes the initial blend close to uniform, so the
    // deformation starts smooth and root search stays well conditioned while
    // the weights are still untrained.
    net_.scale_output_layer(0.05);
}

SkinningMlp::SkinningMlp(int n_bones, std::uint64_t seed, const Aabb& domain)
    : SkinningMlp(n_bones, seed) {
    net_.condition_input(0.5 * (domain.min + domain.max), 0.5 * domain.extent());
}

SkinningMlp::SkinningMlp(Mlp net) : net_(std::move(net)) {
    if (net_.input_width() != 3) {
        throw std::invalid_argument("SkinningMlp: network input width must be 3");
    }
}

VectorXd SkinningMlp::weights(const Vec3& x) const {
    return softmax(net_.forward(x));
}

const VectorXd& SkinningMlp::weights_single(const Vec3& x, Mlp::Scratch& scratch) const {
    net_.forward_single(x, scratch);
    VectorXd& w = scratch.h.back();
    softmax_inplace(w);
    return w;
}

MatrixXd SkinningMlp::weights_batch(const MatrixXd& X) const {
    MatrixXd logits = net_.forward(X);
    softmax_inplace(logits);
    return logits;
}

MatrixXd SkinningMlp::weight_jacobian(const Vec3& x) const {
    MlpTape tape;
    VectorXd w = softmax(net_.forward(x, &tape));
    MatrixXd d_logits = net_.input_tangent(tape, Mat3::Identity());  // (n_b × 3)
    // Softmax Jacobian: dw = (diag(w) − w wᵀ) dz, applied column-wise.
    MatrixXd jac(w.size(), 3);
    for (int c = 0; c < 3; ++c) {
        const VectorXd dz = d_logits.col(c);
        jac.col(c) = (w.array() * (dz.array() - w.dot(dz))).matrix();
    }
    return jac;
}

SkinningVoxelGrid::SkinningVoxelGrid(GridDims dims, Aabb bbox, int n_bones)
    : dims_(dims), bbox_(bbox), n_bones_(n_bones) {
    if (dims.nx < 2 || dims.ny < 2 || dims.nz < 2) {
        throw std::invalid_argument("SkinningVoxelGrid: dims must be >= 2 per axis");
    }
    if (n_bones < 1) throw std::invalid_argument("SkinningVoxelGrid: n_bones must be >= 1");
    if (!((bbox.max - bbox.min).array() > 0.0).all()) {
        throw std::invalid_argument("SkinningVoxelGrid: bbox must have positive extent");
    }
    data_.assign(std::size_t(dims.vertex_count()) * n_bones, 0.0);
}

Vec3 SkinningVoxelGrid::cell_size() const {
    return {bbox_.extent().x() / (dims_.nx - 1), bbox_.extent().y() / (dims_.ny - 1),
            bbox_.extent().z() / (dims_.nz - 1)};
}

Vec3 SkinningVoxelGrid::vertex_position(int i, int j, int k) const {
    const Vec3 h = cell_size();
    return bbox_.min + Vec3(i * h.x(), j * h.y(), k * h.z());
}

void SkinningVoxelGrid::validate() const {
    if (!((bbox_.max - bbox_.min).array() > 0.0).all()) {
        throw std::invalid_argument("SkinningVoxelGrid: bbox must have positive extent");
    }
    const std::int64_t n = dims_.vertex_count();
    for (std::int64_t v = 0; v < n; ++v) {
        const double* w = data_.data() + v * n_bones_;
        double sum = 0.0;
        for (int b = 0; b < n_bones_; ++b) {
            if (w[b] < 0.0) {
                throw std::invalid_argument("SkinningVoxelGrid: negative weight at vertex " +
                                            std::to_string(v));
            }
            sum += w[b];
        }
        if (std::abs(sum - 1.0) > 1e-5) {
            throw std::invalid_argument("SkinningVoxelGrid: weights at vertex " +
                                        std::to_string(v) + " sum to " + std::to_string(sum));
        }
    }
}

CellLocator locate_cell(const GridDims& dims, const Aabb& bbox, const Vec3& x) {
    const Vec3 p = bbox.clamp(x);
    const Vec3 ext = bbox.extent();
    CellLocator c;
    auto axis = [](double v, double lo, double ext, int n, int& idx, double& t) {
        const double u = (v - lo) / ext * (n - 1);
        int i = static_cast<int>(std::floor(u));
        if (i < 0) i = 0;
        if (i > n - 2) i = n - 2;
        idx = i;
        t = std::clamp(u - i, 0.0, 1.0);
    };
    axis(p.x(), bbox.min.x(), ext.x(), dims.nx, c.i0, c.tx);
    axis(p.y(), bbox.min.y(), ext.y(), dims.ny, c.j0, c.ty);
    axis(p.z(), bbox.min.z(), ext.z(), dims.nz, c.k0, c.tz);
    return c;
}

CellLocator locate_cell_lower(const GridDims& dims, const Aabb& bbox, const Vec3& x) {
    const Vec3 p = bbox.clamp(x);
    const Vec3 ext = bbox.extent();
    CellLocator c;
    auto axis = [](double v, double lo, double ext, int n, int& idx, double& t) {
        const double u = (v - lo) / ext * (n - 1);
        int i = static_cast<int>(std::floor(u));
        if (i >= 1 && u == static_cast<double>(i)) i -= 1;  // face point -> lower cell
        if (i < 0) i = 0;
        if (i > n - 2) i = n - 2;
        idx = i;
        t = std::clamp(u - i, 0.0, 1.0);
    };
    axis(p.x(), bbox.min.x(), ext.x(), dims.nx, c.i0, c.tx);
    axis(p.y(), bbox.min.y(), ext.y(), dims.ny, c.j0, c.ty);
    axis(p.z(), bbox.min.z(), ext.z(), dims.nz, c.k0, c.tz);
    return c;
}

void trilerp_weights_into(const SkinningVoxelGrid& grid, const Vec3& x, double* out) {
    const CellLocator c = locate_cell(grid.dims(), grid.bbox(), x);
    const int nb = grid.bone_count();
    for (int b = 0; b < nb; ++b) out[b] = 0.0;
    for (int dk = 0; dk < 2; ++dk) {
        const double wz = dk ? c.tz : 1.0 - c.tz;
        for (int dj = 0; dj < 2; ++dj) {
            const double wyz = wz * (dj ? c.ty : 1.0 - c.ty);
            for (int di = 0; di < 2; ++di) {
                const double w = wyz * (di ? c.tx : 1.0 - c.tx);
                const double* v = grid.vertex_weights(c.i0 + di, c.j0 + dj, c.k0 + dk);
                for (int b = 0; b < nb; ++b) out[b] += w * v[b];
            }
        }
    }
}

VectorXd trilerp_weights(const SkinningVoxelGrid& grid, const Vec3& x) {
    VectorXd out(grid.bone_count());
    trilerp_weights_into(grid, x, out.data());
    return out;
}

MatrixXd weight_spatial_gradient(const SkinningVoxelGrid& grid, const Vec3& x) {
    const CellLocator c = locate_cell_lower(grid.dims(), grid.bbox(), x);
    const Vec3 h = grid.cell_size();
    const int nb = grid.bone_count();
    MatrixXd g = MatrixXd::Zero(nb, 3);
    // Derivative of Σ_corners w_c Π_axis φ_axis: per axis drop that axis'
    // hat function and use ±1/h instead.
    const double fx[2] = {1.0 - c.tx, c.tx};
    const double fy[2] = {1.0 - c.ty, c.ty};
    const double fz[2] = {1.0 - c.tz, c.tz};
    const double dx[2] = {-1.0 / h.x(), 1.0 / h.x()};
    const double dy[2] = {-1.0 / h.y(), 1.0 / h.y()};
    const double dz[2] = {-1.0 / h.z(), 1.0 / h.z()};
    for (int dk = 0; dk < 2; ++dk) {
        for (int dj = 0; dj < 2; ++dj) {
            for (int di = 0; di < 2; ++di) {
                const double* v = grid.vertex_weights(c.i0 + di, c.j0 + dj, c.k0 + dk);
                const double gx = dx[di] * fy[dj] * fz[dk];
                const double gy = fx[di] * dy[dj] * fz[dk];
                const double gz = fx[di] * fy[dj] * dz[dk];
                for (int b = 0; b < nb; ++b) {
                    g(b, 0) += gx * v[b];
                    g(b, 1) += gy * v[b];
                    g(b, 2) += gz * v[b];
                }
            }
        }
    }
    return g;
}

SkinningVoxelGrid distill(const SkinningMlp& mlp, GridDims dims, const Aabb& bbox) {
    if (dims.nx < 2 || dims.ny < 2 || dims.nz < 2) {
        throw std::invalid_argument("distill: dims must be >= 2 per axis");
    }
    SkinningVoxelGrid grid(dims, bbox, mlp.bone_count());
    const std::int64_t total = dims.vertex_count();
    constexpr std::int64_t kChunk = 8192;
    MatrixXd X(3, std::min(total, kChunk));
    for (std::int64_t start = 0; start < total; start += kChunk) {
        const std::int64_t count = std::min(kChunk, total - start);
        if (X.cols() != count) X.resize(3, count);
        for (std::int64_t p = 0; p < count; ++p) {
            const std::int64_t v = start + p;
            const int i = static_cast<int>(v % dims.nx);
            const int j = static_cast<int>((v / dims.nx) % dims.ny);
            const int k = static_cast<int>(v / (std::int64_t(dims.nx) * dims.ny));
            X.col(p) = grid.vertex_position(i, j, k);
        }
        const MatrixXd W = mlp.weights_batch(X);
        const int nb = mlp.bone_count();
        double* dst = grid.raw().data() + start * nb;
        for (std::int64_t p = 0; p < count; ++p) {
            for (int b = 0; b < nb; ++b) dst[p * nb + b] = W(b, p);
        }
    }
    return grid;
}

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

void save_sknv(const SkinningVoxelGrid& grid, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write grid file: " + path);
    out.write("SKNV", 4);
    write_raw<std::uint32_t>(out, 1u);
    write_raw<std::uint32_t>(out, static_cast<std::uint32_t>(grid.dims().nx));
    write_raw<std::uint32_t>(out, static_cast<std::uint32_t>(grid.dims().ny));
    write_raw<std::uint32_t>(out, static_cast<std::uint32_t>(grid.dims().nz));
    write_raw<std::uint32_t>(out, static_cast<std::uint32_t>(grid.bone_count()));
    const Aabb& bb = grid.bbox();
    const float bbox_f[6] = {
        static_cast<float>(bb.min.x()), static_cast<float>(bb.min.y()),
        static_cast<float>(bb.min.z()), static_cast<float>(bb.max.x()),
        static_cast<float>(bb.max.y()), static_cast<float>(bb.max.z())};
    out.write(reinterpret_cast<const char*>(bbox_f), sizeof(bbox_f));
    std::vector<float> buf(grid.raw().size());
    for (size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(grid.raw()[i]);
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!out) throw std::runtime_error("short write to grid file: " + path);
}

SkinningVoxelGrid load_sknv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open grid file: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "SKNV", 4) != 0) {
        throw std::runtime_error(path + ": not a SKNV grid file");
    }
    const auto version = read_raw<std::uint32_t>(in);
    if (version != 1u) {
        throw std::runtime_error(path + ": unsupported SKNV version " + std::to_string(version));
    }
    GridDims dims;
    dims.nx = static_cast<int>(read_raw<std::uint32_t>(in));
    dims.ny = static_cast<int>(read_raw<std::uint32_t>(in));
    dims.nz = static_cast<int>(read_raw<std::uint32_t>(in));
    const int nb = static_cast<int>(read_raw<std::uint32_t>(in));
    float bbox_f[6];
    in.read(reinterpret_cast<char*>(bbox_f), sizeof(bbox_f));
    Aabb bbox{{bbox_f[0], bbox_f[1], bbox_f[2]}, {bbox_f[3], bbox_f[4], bbox_f[5]}};
    SkinningVoxelGrid grid(dims, bbox, nb);
    std::vector<float> buf(grid.raw().size());
    in.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!in) throw std::runtime_error(path + ": truncated SKNV payload");
    for (size_t i = 0; i < buf.size(); ++i) grid.raw()[i] = buf[i];
    return grid;
}

}  // namespace fskin
