#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "fskin/correspondence.hpp"
#include "fskin/deformer.hpp"
#include "fskin/geometry.hpp"
#include "fskin/shape.hpp"
#include "fskin/skeleton.hpp"
#include "fskin/skinning.hpp"

namespace fskin {

/// Raised when the exact implicit gradient is requested at a root whose
/// deformation Jacobian is numerically singular; callers skip the sample.
struct SingularRootError : std::runtime_error {
    explicit SingularRootError(double det);
};

/// Accumulates vᵀ·∂d/∂σ_w into `grad` for the MLP-backed field at x:
/// the cotangent is carried through the blend (uᵢ = v·(Bᵢ·x̃)), the softmax
/// head, and the network backward pass.
void deform_param_vjp(const Vec3& x, const Vec3& v, const SkinningMlp& mlp,
                      std::span<const RigidTransform> bones, MlpGrad& grad);

/// Gradient of v·x* w.r.t. the skinning parameters via implicit
/// differentiation of the root condition: −vᵀ(∂d/∂x*)⁻¹·∂d/∂σ_w.
/// Throws SingularRootError if |det ∂d/∂x*| < 1e-10.
MlpGrad implicit_grad_exact(const Vec3& x_star, std::span<const RigidTransform> bones,
                            const SkinningMlp& mlp, const Vec3& cotangent);

/// Same linear map with the converged Broyden estimate J̃ standing in for
/// (∂d/∂x*)⁻¹: −vᵀJ̃·∂d/∂σ_w. Never throws.
MlpGrad implicit_grad_approx(const Vec3& x_star, const Mat3& inv_jacobian,
                             std::span<const RigidTransform> bones, const SkinningMlp& mlp,
                             const Vec3& cotangent);

/// Binary cross entropy with prediction clamped to [1e-7, 1−1e-7].
double loss_bce(double pred, int label);

/// Uniform samples along the canonical bone segments (used by the
/// first-epoch occupancy bootstrap).
std::vector<Vec3> sample_bone_points(const Skeleton& skeleton, int n_samples,
                                     std::mt19937_64& rng);

/// Mean BCE-to-one of the (zero-pose-conditioned) field along bone interiors.
/// Accumulates occupancy-parameter gradients when `grad` is given.
double loss_bone_occupancy(const OccupancyMlp& field, const Skeleton& skeleton,
                           int n_samples, std::mt19937_64& rng, MlpGrad* grad = nullptr);

/// Mean over non-root bones of BCE driving the parent bone's weight to one
/// at the bone's joint. Skeletons without child bones contribute zero.
double loss_joint_skinning(const SkinningMlp& mlp, const Skeleton& skeleton,
                           MlpGrad* grad = nullptr);

/// One pose frame of the fixed training set: posed queries plus analytic
/// occupancy bits. Half the points are uniform in the padded posed box, half
/// near-surface with Gaussian noise.
struct TrainingFrame {
    Pose pose;
    VectorXd pose_vector;
    std::vector<RigidTransform> bones;
    MatrixXd points;          // 3 × n posed-space queries
    std::vector<int> labels;  // {0,1}
};

TrainingFrame make_training_frame(const CapsuleBody& body, const Skeleton& skeleton,
                                  const Pose& pose, int n_points, double near_sigma_frac,
                                  double pad_frac, std::mt19937_64& rng);

/// Canonical domain shared by grids, meshes, and search options: tight
/// capsule bounds padded by 10% of their diagonal.
Aabb canonical_domain(const CapsuleBody& body);

/// Posed-space sampling box: tight posed bounds padded by `pad_frac` of
/// their diagonal.
Aabb posed_sampling_box(const CapsuleBody& body, std::span<const RigidTransform> bones,
                        const VectorXd& pose_vector, double pad_frac);

struct TrainConfig {
    int epochs = 100;
    int batch_points = 512;       // points drawn per iteration (one frame each)
    int points_per_frame = 20000;
    double learning_rate = 1e-3;
    double momentum = 0.9;
    bool cosine_decay = true;     // anneal the rate to zero over the full run
    double skinning_lr_scale = 1.0;  // relative rate for the skinning net
    // L2 pull on the skinning head layer.  Bounds the softmax sharpness during
    // training so the weight field stays plastic instead of freezing one-hot.
    double skinning_head_decay = 0.0;
    // Feed the pose vector to the occupancy net.  Off by default: a rigid body
    // has one canonical shape, and conditioning lets the field explain each
    // pose separately instead of forcing agreement through the roots.
    bool pose_conditioning = false;
    int bootstrap_epochs = 1;
    double bootstrap_weight = 1.0;
    // Extra factor on the joint pin loss. The pins are a handful of points
    // against a full batch of occupancy terms, so they need weight to settle
    // the bone association before the occupancy gradients take over.
    double joint_weight = 10.0;
    int bone_loss_samples = 128;
    GridDims distill_dims{32, 32, 8};   // in-loop grid; final grid uses 64×64×16
    double near_sigma_frac = 0.01;      // Gaussian σ as a fraction of the box diagonal
    double pad_frac = 0.1;              // sampling box padding, fraction of max extent
    std::uint64_t seed = 1;
    int workers = 1;
    int val_samples = 4000;             // per held-out pose, uniform

    void validate() const;
};

struct EpochMetrics {
    int epoch = 0;
    double mean_loss = 0.0;
    double val_iou = 0.0;
};

struct TrainResult {
    OccupancyMlp occupancy;
    SkinningMlp skinning;
    SkinningVoxelGrid grid;  // distilled at 64×64×16 from the final MLP
    Aabb bbox;               // canonical box the grids live on
    std::vector<EpochMetrics> metrics;
    std::int64_t dropped_label1_empty = 0;  // label-1 points with no root
};

/// Joint shape + skinning optimization against the analytic body. Each
/// iteration distills the skinning MLP to a voxel grid, precomputes the
/// frame's transform grid, searches roots for a point batch, and descends
/// the BCE of max-aggregated occupancy; skinning gradients flow through the
/// Broyden-approximated implicit derivative. First-epoch bootstrap: bone
/// interiors pushed to occupancy 1, joints pinned to their parent bone.
/// Deterministic for a fixed config.
TrainResult train(const TrainConfig& cfg, const CapsuleBody& body, const Skeleton& skeleton,
                  const std::vector<Pose>& train_poses, const std::vector<Pose>& val_poses);

/// IoU of thresholded model occupancy vs the analytic body over uniform
/// samples in the padded posed box of each pose.
double validation_iou(const OccupancyMlp& occupancy, const SkinningMlp& skinning,
                      const CapsuleBody& body, const Skeleton& skeleton,
                      const std::vector<Pose>& poses, int samples_per_pose,
                      GridDims grid_dims, std::uint64_t seed, int workers);

/// Fits the skinning MLP to an analytic soft assignment (softmax of negative
/// squared capsule distances) by cross entropy on uniformly sampled points.
/// Used to manufacture realistic smooth weight fields without a full
/// training run.
SkinningMlp fit_skinning_supervised(const CapsuleBody& body, const Aabb& bbox,
                                    double temperature, int iterations, int batch,
                                    double learning_rate, std::uint64_t seed);

}  // namespace fskin
