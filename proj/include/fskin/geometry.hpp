#pragma once

#include <limits>

#include <Eigen/Dense>

namespace fskin {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using Mat34 = Eigen::Matrix<double, 3, 4>;

/// Axis-aligned box in canonical or posed space.
struct Aabb {
    Vec3 min = Vec3::Zero();
    Vec3 max = Vec3::Ones();

    /// Inverted box that any expand() call snaps onto.
    static Aabb empty() {
        const double inf = std::numeric_limits<double>::infinity();
        return {Vec3::Constant(inf), Vec3::Constant(-inf)};
    }

    Vec3 extent() const { return max - min; }
    double diagonal() const { return extent().norm(); }
    bool contains(const Vec3& p) const {
        return (p.array() >= min.array()).all() && (p.array() <= max.array()).all();
    }
    Vec3 clamp(const Vec3& p) const {
        return p.cwiseMax(min).cwiseMin(max);
    }
    Aabb padded(double margin) const {
        return {min.array() - margin, max.array() + margin};
    }
    void expand(const Vec3& p) {
        min = min.cwiseMin(p);
        max = max.cwiseMax(p);
    }
};

/// Rigid body motion, stored as a 3x4 matrix [R | t] with implicit bottom row.
struct RigidTransform {
    Mat3 rotation = Mat3::Identity();
    Vec3 translation = Vec3::Zero();

    static RigidTransform identity() { return {}; }

    /// Rotation by `angle` radians about the line through `pivot` with direction `axis`.
    static RigidTransform about_axis(const Vec3& pivot, const Vec3& axis, double angle);

    Vec3 apply(const Vec3& x) const { return rotation * x + translation; }

    /// this ∘ rhs: applies rhs first.
    RigidTransform compose(const RigidTransform& rhs) const {
        return {rotation * rhs.rotation, rotation * rhs.translation + translation};
    }

    RigidTransform inverse() const {
        Mat3 rt = rotation.transpose();
        return {rt, -(rt * translation)};
    }

    /// Frobenius norm of RᵀR − I.
    double orthonormality_error() const {
        return (rotation.transpose() * rotation - Mat3::Identity()).norm();
    }

    bool is_rigid(double tol = 1e-6) const {
        return orthonormality_error() <= tol && rotation.determinant() > 0.0;
    }

    Mat34 matrix() const {
        Mat34 m;
        m.leftCols<3>() = rotation;
        m.col(3) = translation;
        return m;
    }
};

inline RigidTransform operator*(const RigidTransform& a, const RigidTransform& b) {
    return a.compose(b);
}

inline RigidTransform invert(const RigidTransform& t) { return t.inverse(); }

inline Vec3 apply(const RigidTransform& t, const Vec3& x) { return t.apply(x); }

/// General affine 3x4 map. Blended bone transforms land here: a convex
/// combination of rigid matrices is affine but generally not rigid.
struct Affine3 {
    Mat3 linear = Mat3::Identity();
    Vec3 translation = Vec3::Zero();

    static Affine3 zero() { return {Mat3::Zero(), Vec3::Zero()}; }
    static Affine3 from(const RigidTransform& t) { return {t.rotation, t.translation}; }

    Vec3 apply(const Vec3& x) const { return linear * x + translation; }

    Affine3& operator+=(const Affine3& o) {
        linear += o.linear;
        translation += o.translation;
        return *this;
    }
    Affine3 operator*(double s) const { return {linear * s, translation * s}; }

    Mat34 matrix() const {
        Mat34 m;
        m.leftCols<3>() = linear;
        m.col(3) = translation;
        return m;
    }
};

/// Distance from p to the segment [a, b].
double point_segment_distance(const Vec3& p, const Vec3& a, const Vec3& b);

}  // namespace fskin
