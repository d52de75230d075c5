#include "fskin/geometry.hpp"

#include <stdexcept>

namespace fskin {

RigidTransform RigidTransform::about_axis(const Vec3& pivot, const Vec3& axis, double angle) {
    const double n = axis.norm();
    if (n < 1e-12) {
        throw std::invalid_argument("RigidTransform::about_axis: axis must be nonzero");
    }
    Mat3 r = Eigen::AngleAxisd(angle, axis / n).toRotationMatrix();
    return {r, pivot - r * pivot};
}

double point_segment_distance(const Vec3& p, const Vec3& a, const Vec3& b) {
    const Vec3 ab = b - a;
    const double len2 = ab.squaredNorm();
    if (len2 < 1e-24) return (p - a).norm();
    double t = (p - a).dot(ab) / len2;
    t = std::clamp(t, 0.0, 1.0);
    return (p - (a + t * ab)).norm();
}

}  // namespace fskin
