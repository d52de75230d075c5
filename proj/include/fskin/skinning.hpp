#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "fskin/geometry.hpp"
#include "fskin/mlp.hpp"

namespace fskin {

/// Canonical skinning weight field parameterized by a small MLP with a
/// softmax head: smooth, trainable, defined on all of R³.
class SkinningMlp {
public:
    SkinningMlp() = default;
    SkinningMlp(int n_bones, std::uint64_t seed);
    /// As above, with the spatial inputs normalized to `domain` at init.
    SkinningMlp(int n_bones, std::uint64_t seed, const Aabb& domain);
    explicit SkinningMlp(Mlp net);

    int bone_count() const { return net_.output_width(); }

    /// Softmax-normalized weights at x; components are positive and sum to 1.
    VectorXd weights(const Vec3& x) const;

    /// Allocation-free variant for hot loops. The returned reference aliases
    /// scratch storage and is invalidated by the next call on that scratch.
    const VectorXd& weights_single(const Vec3& x, Mlp::Scratch& scratch) const;

    /// Batched evaluation; X is (3 × B), result (n_b × B).
    MatrixXd weights_batch(const MatrixXd& X) const;

    /// Jacobian ∂w/∂x (n_b × 3), softmax head included.
    MatrixXd weight_jacobian(const Vec3& x) const;

    Mlp& net() { return net_; }
    const Mlp& net() const { return net_; }

private:
    Mlp net_;
};

struct GridDims {
    int nx = 64, ny = 64, nz = 16;

    std::int64_t vertex_count() const {
        return std::int64_t(nx) * ny * nz;
    }
    bool operator==(const GridDims&) const = default;
};

/// Dense low-resolution grid of per-vertex bone weights over a canonical
/// bounding box. Vertices span the box inclusively; storage is x-fastest
/// row-major with the bone index innermost.
class SkinningVoxelGrid {
public:
    SkinningVoxelGrid() = default;
    SkinningVoxelGrid(GridDims dims, Aabb bbox, int n_bones);

    const GridDims& dims() const { return dims_; }
    const Aabb& bbox() const { return bbox_; }
    int bone_count() const { return n_bones_; }

    Vec3 cell_size() const;
    Vec3 vertex_position(int i, int j, int k) const;

    std::int64_t vertex_index(int i, int j, int k) const {
        return (std::int64_t(k) * dims_.ny + j) * dims_.nx + i;
    }
    double* vertex_weights(int i, int j, int k) {
        return data_.data() + vertex_index(i, j, k) * n_bones_;
    }
    const double* vertex_weights(int i, int j, int k) const {
        return data_.data() + vertex_index(i, j, k) * n_bones_;
    }

    std::vector<double>& raw() { return data_; }
    const std::vector<double>& raw() const { return data_; }

    /// Checks normalization (sum 1 within 1e-5, non-negative entries) and a
    /// positive bbox extent. Throws std::invalid_argument on violation.
    void validate() const;

private:
    GridDims dims_;
    Aabb bbox_;
    int n_bones_ = 0;
    std::vector<double> data_;
};

/// Cell lookup shared by the interpolators: clamped cell index plus local
/// coordinates in [0,1]³.
struct CellLocator {
    int i0, j0, k0;
    double tx, ty, tz;
};
CellLocator locate_cell(const GridDims& dims, const Aabb& bbox, const Vec3& x);
/// Same, but points exactly on an interior cell face resolve to the
/// lower-index cell (gradient tie-break).
CellLocator locate_cell_lower(const GridDims& dims, const Aabb& bbox, const Vec3& x);

/// Tri-linear interpolation of the stored weight vectors. Out-of-box queries
/// are clamped to the bbox boundary. The result is a convex combination of
/// the 8 surrounding vertices, so normalization is preserved.
VectorXd trilerp_weights(const SkinningVoxelGrid& grid, const Vec3& x);
void trilerp_weights_into(const SkinningVoxelGrid& grid, const Vec3& x, double* out);

/// Exact spatial gradient (n_b × 3) of the tri-linear interpolant within the
/// containing cell.
MatrixXd weight_spatial_gradient(const SkinningVoxelGrid& grid, const Vec3& x);

/// Evaluates the MLP at every grid vertex. dims must be ≥ 2 per axis.
SkinningVoxelGrid distill(const SkinningMlp& mlp, GridDims dims, const Aabb& bbox);

/// Binary voxel-grid format: magic "SKNV", u32 version=1, u32 nx ny nz n_b,
/// f32 bbox[6], f32 weights x-fastest with bone index innermost.
/// Little-endian.
void save_sknv(const SkinningVoxelGrid& grid, const std::string& path);
SkinningVoxelGrid load_sknv(const std::string& path);

}  // namespace fskin
