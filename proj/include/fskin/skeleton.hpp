#pragma once

#include <optional>
#include <string>
#include <vector>

#include "fskin/geometry.hpp"

namespace fskin {

/// One revolute bone. `joint` is the pivot in canonical (rest) space and
/// `axis` the fixed rotation axis of its joint. `length` scales the bone
/// segment used for capsule attachment and bone-interior sampling.
struct Bone {
    std::string name;
    int parent = -1;  // -1 = root
    Vec3 joint = Vec3::Zero();
    Vec3 axis = Vec3::UnitZ();
    double length = 1.0;
    double radius = 0.1;       // capsule radius of the attached body part
    double radius_pose_coeff = 0.0;  // pose-dependent radius modulation
};

struct Skeleton {
    std::vector<Bone> bones;

    int bone_count() const { return static_cast<int>(bones.size()); }
    int dof() const { return bone_count(); }

    /// Throws std::invalid_argument if empty, if parent indices do not form a
    /// forest, or if an axis is degenerate.
    void validate() const;

    /// Canonical segment [head, tip] of bone i. The segment points toward the
    /// first child joint when one exists, otherwise continues the direction
    /// from the parent joint; an isolated bone extends orthogonally to its
    /// rotation axis. Tip is always head + length * direction.
    std::pair<Vec3, Vec3> bone_segment(int i) const;
};

struct Pose {
    std::vector<double> joint_angles;

    static Pose zero(int dof) { return Pose{std::vector<double>(dof, 0.0)}; }
    int dof() const { return static_cast<int>(joint_angles.size()); }
};

/// Per-bone canonical-to-posed transforms. Parent transforms compose down the
/// chain; the zero pose maps every bone to the identity.
std::vector<RigidTransform> forward_kinematics(const Skeleton& skeleton, const Pose& pose);

Skeleton load_skeleton_json(const std::string& path);
void save_skeleton_json(const Skeleton& skeleton, const std::string& path);

/// Pose file: JSON array of per-frame angle vectors.
std::vector<Pose> load_pose_frames(const std::string& path);
void save_pose_frames(const std::vector<Pose>& frames, const std::string& path);

}  // namespace fskin
