#pragma once

#include <span>
#include <vector>

#include "fskin/deformer.hpp"
#include "fskin/geometry.hpp"
#include "fskin/skinning.hpp"

namespace fskin {

enum class SearchVariant { Mlp, Voxel };

struct SearchOptions {
    int max_iters = 50;
    double conv_eps = 1e-5;
    double div_eps = 0.5;
    double dedup_dist = 1e-2;
    SearchVariant variant = SearchVariant::Voxel;

    /// Defaults scaled by the canonical bbox diagonal: conv 1e-5·diag,
    /// div 0.5·diag, dedup 1e-2·diag.
    static SearchOptions defaults_for(const Aabb& bbox);

    void validate() const;
};

/// One converged canonical correspondence of a posed query point.
struct Root {
    Vec3 x = Vec3::Zero();                   // canonical root location
    double residual = 0.0;                   // ‖d(x) − x′‖₂ at termination
    Mat3 inv_jacobian = Mat3::Identity();    // Broyden estimate J̃ at the root
    int source_bone = -1;                    // initialization that produced it
    int iterations = 0;
};

struct CorrespondenceSet {
    Vec3 query = Vec3::Zero();
    std::vector<Root> roots;

    bool empty() const { return roots.empty(); }
};

/// Immutable inputs of one search batch. For the voxel variant both the
/// skinning grid (initial Jacobians) and the matching transform grid are
/// required; the MLP variant needs only `mlp`.
struct SearchContext {
    std::span<const RigidTransform> bones;
    const SkinningMlp* mlp = nullptr;
    const SkinningVoxelGrid* grid = nullptr;
    const TransformGrid* tgrid = nullptr;
};

struct InitState {
    Vec3 x0;
    Mat3 inv_jacobian;
};

/// One start per bone: x⁰ᵢ = Bᵢ⁻¹·x′ with J̃⁰ᵢ the inverse of the analytic
/// Jacobian there. Near-singular Jacobians (|det| < 1e-8) fall back to the
/// identity so the iteration is always defined.
std::vector<InitState> init_states(const Vec3& x_prime, const SearchContext& ctx,
                                   SearchVariant variant);

/// Multi-initialized Broyden search for all canonical roots of
/// d(x, B) = x′. An empty set is a legal outcome: the query is outside the
/// posed shape's reach.
CorrespondenceSet broyden_search(const Vec3& x_prime, const SearchContext& ctx,
                                 const SearchOptions& opts);

/// Greedy pass in input order: a root is kept iff it is at least dedup_dist
/// from every already-kept root.
std::vector<Root> dedup_roots(std::vector<Root> roots, double dedup_dist);

/// Parallel over query points; output is identical to the sequential map for
/// any worker count.
std::vector<CorrespondenceSet> batch_search(std::span<const Vec3> queries,
                                            const SearchContext& ctx,
                                            const SearchOptions& opts,
                                            int workers = 1);

}  // namespace fskin
