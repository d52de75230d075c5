#include "fskin/deformer.hpp"

#include <stdexcept>

#include "fskin/parallel.hpp"

namespace fskin {

Affine3 lbs_blend(std::span<const double> weights, std::span<const RigidTransform> bones) {
    if (weights.size() != bones.size()) {
        throw std::invalid_argument("lbs_blend: weight/bone count mismatch");
    }
    Affine3 out = Affine3::zero();
    for (size_t i = 0; i < bones.size(); ++i) {
        out.linear += weights[i] * bones[i].rotation;
        out.translation += weights[i] * bones[i].translation;
    }
    return out;
}

Vec3 forward_deform(const Vec3& x, const SkinningMlp& mlp,
                    std::span<const RigidTransform> bones) {
    const VectorXd w = mlp.weights(x);
    return lbs_blend({w.data(), size_t(w.size())}, bones).apply(x);
}

Vec3 forward_deform(const Vec3& x, const SkinningMlp& mlp,
                    std::span<const RigidTransform> bones, Mlp::Scratch& scratch) {
    const VectorXd& w = mlp.weights_single(x, scratch);
    return lbs_blend({w.data(), size_t(w.size())}, bones).apply(x);
}

Vec3 forward_deform(const Vec3& x, const SkinningVoxelGrid& grid,
                    std::span<const RigidTransform> bones) {
    const VectorXd w = trilerp_weights(grid, x);
    return lbs_blend({w.data(), size_t(w.size())}, bones).apply(x);
}

TransformGrid::TransformGrid(GridDims dims, Aabb bbox) : dims_(dims), bbox_(bbox) {
    data_.assign(std::size_t(dims.vertex_count()) * 12, 0.0);
}

Affine3 TransformGrid::vertex_affine(int i, int j, int k) const {
    const double* m = vertex_transform(vertex_index(i, j, k));
    Affine3 t;
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) t.linear(r, c) = m[r * 4 + c];
        t.translation(r) = m[r * 4 + 3];
    }
    return t;
}

void TransformGrid::set_vertex(std::int64_t v, const Affine3& t) {
    double* m = vertex_transform(v);
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) m[r * 4 + c] = t.linear(r, c);
        m[r * 4 + 3] = t.translation(r);
    }
}

TransformGrid precompute_transform_grid(const SkinningVoxelGrid& grid,
                                        std::span<const RigidTransform> bones,
                                        int workers) {
    if (static_cast<int>(bones.size()) != grid.bone_count()) {
        throw std::invalid_argument("precompute_transform_grid: bone count mismatch");
    }
    TransformGrid tgrid(grid.dims(), grid.bbox());
    const std::int64_t total = grid.dims().vertex_count();
    const int nb = grid.bone_count();
    parallel_for(total, workers, [&](std::int64_t begin, std::int64_t end) {
        for (std::int64_t v = begin; v < end; ++v) {
            const double* w = grid.raw().data() + v * nb;
            tgrid.set_vertex(v, lbs_blend({w, size_t(nb)}, bones));
        }
    });
    return tgrid;
}

void trilerp_transform_into(const TransformGrid& tgrid, const Vec3& x, double* out12) {
    const CellLocator c = locate_cell(tgrid.dims(), tgrid.bbox(), x);
    for (int e = 0; e < 12; ++e) out12[e] = 0.0;
    for (int dk = 0; dk < 2; ++dk) {
        const double wz = dk ? c.tz : 1.0 - c.tz;
        for (int dj = 0; dj < 2; ++dj) {
            const double wyz = wz * (dj ? c.ty : 1.0 - c.ty);
            for (int di = 0; di < 2; ++di) {
                const double w = wyz * (di ? c.tx : 1.0 - c.tx);
                const double* m = tgrid.vertex_transform(
                    tgrid.vertex_index(c.i0 + di, c.j0 + dj, c.k0 + dk));
                for (int e = 0; e < 12; ++e) out12[e] += w * m[e];
            }
        }
    }
}

Affine3 trilerp_transform(const TransformGrid& tgrid, const Vec3& x) {
    double m[12];
    trilerp_transform_into(tgrid, x, m);
    Affine3 t;
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) t.linear(r, c) = m[r * 4 + c];
        t.translation(r) = m[r * 4 + 3];
    }
    return t;
}

Vec3 forward_deform(const Vec3& x, const TransformGrid& tgrid) {
    double m[12];
    trilerp_transform_into(tgrid, x, m);
    return {m[0] * x.x() + m[1] * x.y() + m[2] * x.z() + m[3],
            m[4] * x.x() + m[5] * x.y() + m[6] * x.z() + m[7],
            m[8] * x.x() + m[9] * x.y() + m[10] * x.z() + m[11]};
}

namespace {

Mat3 jacobian_from_weights(const Vec3& x, const VectorXd& w, const MatrixXd& grad_w,
                           std::span<const RigidTransform> bones) {
    Mat3 jac = Mat3::Zero();
    for (size_t i = 0; i < bones.size(); ++i) {
        jac += w[Eigen::Index(i)] * bones[i].rotation;
    }
    for (size_t i = 0; i < bones.size(); ++i) {
        const Vec3 bx = bones[i].apply(x);
        jac += bx * grad_w.row(Eigen::Index(i));
    }
    return jac;
}

}  // namespace

Mat3 deform_jacobian(const Vec3& x, const SkinningVoxelGrid& grid,
                     std::span<const RigidTransform> bones) {
    return jacobian_from_weights(x, trilerp_weights(grid, x),
                                 weight_spatial_gradient(grid, x), bones);
}

Mat3 deform_jacobian(const Vec3& x, const SkinningMlp& mlp,
                     std::span<const RigidTransform> bones) {
    return jacobian_from_weights(x, mlp.weights(x), mlp.weight_jacobian(x), bones);
}

}  // namespace fskin
