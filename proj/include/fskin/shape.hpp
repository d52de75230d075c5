#pragma once

#include <array>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fskin/correspondence.hpp"
#include "fskin/geometry.hpp"
#include "fskin/mlp.hpp"
#include "fskin/skeleton.hpp"

namespace fskin {

struct Capsule {
    Vec3 a = Vec3::Zero();    // segment endpoints, canonical space
    Vec3 b = Vec3::Zero();
    double radius = 0.1;
    double radius_pose_coeff = 0.0;
    int bone = -1;
};

/// Analytic articulated body: one capsule rigidly attached to each bone.
/// Serves as ground truth for occupancy labels, bone assignments, and
/// posed-shape oracles.
class CapsuleBody {
public:
    CapsuleBody() = default;
    explicit CapsuleBody(std::vector<Capsule> capsules);

    /// One capsule per skeleton bone, spanning the bone segment with the
    /// bone's stored radius.
    static CapsuleBody from_skeleton(const Skeleton& skeleton);

    const std::vector<Capsule>& capsules() const { return capsules_; }
    std::size_t size() const { return capsules_.size(); }

    /// r·(1 + coeff·mean(p)), floored at 1% of r so the capsule never
    /// degenerates. Zero pose (or empty p) gives r exactly.
    double effective_radius(const Capsule& c, const VectorXd& pose_angles) const;

    /// 1 iff x lies within `radius` of some capsule axis (closed surface).
    int occupancy(const Vec3& x) const;
    int occupancy(const Vec3& x, const VectorXd& pose_angles) const;

    /// Distance to the body surface, negative inside. Pose angles modulate
    /// radii only; geometry stays canonical.
    double signed_distance(const Vec3& x, const VectorXd& pose_angles) const;

    /// Occupancy of the rigidly articulated body in posed space: capsule i
    /// moves with bones[capsule.bone].
    int posed_occupancy(const Vec3& x_prime, std::span<const RigidTransform> bones,
                        const VectorXd& pose_angles) const;
    double posed_signed_distance(const Vec3& x_prime, std::span<const RigidTransform> bones,
                                 const VectorXd& pose_angles) const;

    /// Index of the capsule whose surface is nearest to x (canonical).
    int nearest_bone(const Vec3& x) const;

    /// Union of capsule boxes, each padded by `pad` beyond the radius.
    Aabb canonical_bounds(double pad = 0.0) const;
    Aabb posed_bounds(std::span<const RigidTransform> bones, const VectorXd& pose_angles,
                      double pad = 0.0) const;

    /// Area-uniform sample of the canonical body surface; also reports the
    /// owning capsule. Overlap regions are not rejected. Pose angles modulate
    /// the sampled radii as in effective_radius.
    Vec3 sample_surface(std::mt19937_64& rng, const VectorXd& pose_angles,
                        int* capsule_index = nullptr) const;
    Vec3 sample_surface(std::mt19937_64& rng, int* capsule_index = nullptr) const;

private:
    std::vector<Capsule> capsules_;
};

/// Occupancy field parameterized by an MLP with a sigmoid head; optionally
/// conditioned on the pose vector (raw concatenation).
class OccupancyMlp {
public:
    OccupancyMlp() = default;
    OccupancyMlp(int n_pose, std::uint64_t seed);
    /// As above, with the spatial inputs normalized to `domain` at init.
    OccupancyMlp(int n_pose, std::uint64_t seed, const Aabb& domain);
    explicit OccupancyMlp(Mlp net);

    int pose_width() const { return net_.input_width() - 3; }

    /// sigmoid(logit(x, p)); p length must equal pose_width().
    double occupancy(const Vec3& x, const VectorXd& p) const;
    /// Unconditioned convenience (pose_width() must be 0).
    double occupancy(const Vec3& x) const;

    /// Columns of X are points; one occupancy per column, all under pose p.
    VectorXd occupancy_batch(const MatrixXd& X, const VectorXd& p) const;

    Mlp& net() { return net_; }
    const Mlp& net() const { return net_; }

private:
    void check_pose(const VectorXd& p) const;
    Mlp net_;
};

/// Occupancy of a posed point: max of the canonical field over its roots.
/// An empty root set maps to 0 (point unreachable by the deformed body).
double posed_occupancy(const CorrespondenceSet& corr,
                       const std::function<double(const Vec3&)>& canonical_occupancy);
double posed_occupancy(const CorrespondenceSet& corr, const OccupancyMlp& field,
                       const VectorXd& p);

/// Batched form over many correspondence sets: all roots are pushed through
/// the net in one forward pass. When `argmax` is given it receives the index
/// of the winning root within each set, -1 for empty sets.
VectorXd posed_occupancy_batch(std::span<const CorrespondenceSet> sets,
                               const OccupancyMlp& field, const VectorXd& p,
                               std::vector<int>* argmax = nullptr);

struct TriMesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<int, 3>> triangles;

    double surface_area() const;
    /// Divergence-theorem volume; positive for outward-oriented closed meshes.
    double signed_volume() const;
};

/// Field evaluated for a batch of points at once; used so callers can route
/// sampling through their own batched (and parallel) machinery.
using BatchField = std::function<void(std::span<const Vec3>, std::span<double>)>;

/// Marching cubes over a uniform (resolution+1)³ sampling of `field` on
/// `bbox`, surface at `iso`. Vertices on shared cell edges are emitted once;
/// vertex and triangle order are deterministic functions of the samples.
/// A field with no crossings yields an empty mesh. resolution ≥ 16.
TriMesh extract_mesh(const BatchField& field, const Aabb& bbox, int resolution,
                     double iso = 0.5);
TriMesh extract_mesh(const std::function<double(const Vec3&)>& field, const Aabb& bbox,
                     int resolution, double iso = 0.5);

/// ASCII OBJ (v/f lines) and binary little-endian PLY. Deterministic output
/// for identical meshes.
void save_obj(const TriMesh& mesh, const std::string& path);
void save_ply(const TriMesh& mesh, const std::string& path);

}  // namespace fskin
