#pragma once

#include <span>
#include <vector>

#include "fskin/geometry.hpp"
#include "fskin/skinning.hpp"

namespace fskin {

/// Entrywise convex combination Σᵢ wᵢ·Bᵢ. The result is affine; no rigid
/// projection is applied. Throws std::invalid_argument on length mismatch.
Affine3 lbs_blend(std::span<const double> weights, std::span<const RigidTransform> bones);

/// d(x, B) for an MLP-backed weight field: blend of w(x), applied to x.
Vec3 forward_deform(const Vec3& x, const SkinningMlp& mlp,
                    std::span<const RigidTransform> bones);
/// Allocation-free variant for hot loops; see Mlp::Scratch.
Vec3 forward_deform(const Vec3& x, const SkinningMlp& mlp,
                    std::span<const RigidTransform> bones, Mlp::Scratch& scratch);
/// Same for a voxel-backed weight field (tri-linear weights).
Vec3 forward_deform(const Vec3& x, const SkinningVoxelGrid& grid,
                    std::span<const RigidTransform> bones);

/// Per-pose grid of blended transforms T_v at the skinning grid's vertices.
/// Derived data: rebuilt per pose, never persisted.
class TransformGrid {
public:
    TransformGrid() = default;
    TransformGrid(GridDims dims, Aabb bbox);

    const GridDims& dims() const { return dims_; }
    const Aabb& bbox() const { return bbox_; }

    /// 12 doubles per vertex: rows of the 3x4 matrix, x-fastest vertex order.
    double* vertex_transform(std::int64_t v) { return data_.data() + v * 12; }
    const double* vertex_transform(std::int64_t v) const { return data_.data() + v * 12; }
    std::int64_t vertex_index(int i, int j, int k) const {
        return (std::int64_t(k) * dims_.ny + j) * dims_.nx + i;
    }

    Affine3 vertex_affine(int i, int j, int k) const;
    void set_vertex(std::int64_t v, const Affine3& t);

private:
    GridDims dims_;
    Aabb bbox_;
    std::vector<double> data_;
};

/// Blends the bone transforms at every grid vertex (Σᵢ w_{v,i}·Bᵢ). Cost is
/// proportional to the vertex count, independent of later query counts.
TransformGrid precompute_transform_grid(const SkinningVoxelGrid& grid,
                                        std::span<const RigidTransform> bones,
                                        int workers = 1);

/// Entrywise tri-linear interpolation of the 8 corner matrices; x clamped to
/// the bbox as in the weight interpolation.
Affine3 trilerp_transform(const TransformGrid& tgrid, const Vec3& x);
void trilerp_transform_into(const TransformGrid& tgrid, const Vec3& x, double* out12);

/// Forward map through the precomputed grid: trilerp_transform(x) applied to x.
Vec3 forward_deform(const Vec3& x, const TransformGrid& tgrid);

/// Analytic Jacobian ∂d/∂x = T(x)_lin + Σᵢ (Bᵢ·x̃)·∇wᵢ(x)ᵀ, with the weight
/// gradient taken from the respective field representation.
Mat3 deform_jacobian(const Vec3& x, const SkinningVoxelGrid& grid,
                     std::span<const RigidTransform> bones);
Mat3 deform_jacobian(const Vec3& x, const SkinningMlp& mlp,
                     std::span<const RigidTransform> bones);

}  // namespace fskin
