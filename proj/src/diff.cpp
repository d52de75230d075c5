#include "fskin/diff.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>

namespace fskin {

SingularRootError::SingularRootError(double det)
    : std::runtime_error("implicit gradient: deformation Jacobian is singular (det " +
                         std::to_string(det) + ")") {}

void deform_param_vjp(const Vec3& x, const Vec3& v, const SkinningMlp& mlp,
                      std::span<const RigidTransform> bones, MlpGrad& grad) {
    if (std::size_t(mlp.bone_count()) != bones.size()) {
        throw std::invalid_argument("deform vjp: bone count mismatch");
    }
    MlpTape tape;
    const MatrixXd logits = mlp.net().forward(x, &tape);
    const VectorXd w = softmax(logits.col(0));
    // d = Σᵢ wᵢ(x)·(Bᵢ·x̃): the cotangent on wᵢ is v·(Bᵢ·x̃).
    VectorXd u(w.size());
    for (Eigen::Index i = 0; i < w.size(); ++i) {
        u[i] = v.dot(bones[std::size_t(i)].apply(x));
    }
    const VectorXd dz = softmax_vjp(w, u);
    mlp.net().backward(tape, dz, grad);
}

MlpGrad implicit_grad_exact(const Vec3& x_star, std::span<const RigidTransform> bones,
                            const SkinningMlp& mlp, const Vec3& cotangent) {
    const Mat3 jac = deform_jacobian(x_star, mlp, bones);
    const double det = jac.determinant();
    if (std::abs(det) < 1e-10) throw SingularRootError(det);
    const Vec3 u = jac.transpose().partialPivLu().solve(cotangent);
    MlpGrad acc = mlp.net().zero_grad();
    deform_param_vjp(x_star, u, mlp, bones, acc);
    acc.scale(-1.0);
    return acc;
}

MlpGrad implicit_grad_approx(const Vec3& x_star, const Mat3& inv_jacobian,
                             std::span<const RigidTransform> bones, const SkinningMlp& mlp,
                             const Vec3& cotangent) {
    const Vec3 u = inv_jacobian.transpose() * cotangent;
    MlpGrad acc = mlp.net().zero_grad();
    deform_param_vjp(x_star, u, mlp, bones, acc);
    acc.scale(-1.0);
    return acc;
}

double loss_bce(double pred, int label) {
    if (label != 0 && label != 1) throw std::invalid_argument("bce: label must be 0 or 1");
    const double p = std::clamp(pred, 1e-7, 1.0 - 1e-7);
    return label == 1 ? -std::log(p) : -std::log1p(-p);
}

std::vector<Vec3> sample_bone_points(const Skeleton& skeleton, int n_samples,
                                     std::mt19937_64& rng) {
    std::uniform_int_distribution<int> pick_bone(0, skeleton.bone_count() - 1);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::vector<Vec3> pts;
    pts.reserve(std::size_t(n_samples));
    for (int s = 0; s < n_samples; ++s) {
        const auto [head, tip] = skeleton.bone_segment(pick_bone(rng));
        pts.push_back(head + uni(rng) * (tip - head));
    }
    return pts;
}

double loss_bone_occupancy(const OccupancyMlp& field, const Skeleton& skeleton,
                           int n_samples, std::mt19937_64& rng, MlpGrad* grad) {
    if (n_samples < 1) throw std::invalid_argument("bone occupancy loss: n_samples must be >= 1");
    const std::vector<Vec3> pts = sample_bone_points(skeleton, n_samples, rng);
    const int np = field.pose_width();
    MatrixXd in = MatrixXd::Zero(3 + np, n_samples);  // zero-pose conditioning
    for (int i = 0; i < n_samples; ++i) in.col(i).head<3>() = pts[std::size_t(i)];

    MlpTape tape;
    const MatrixXd logits = field.net().forward(in, grad ? &tape : nullptr);
    double loss = 0.0;
    MatrixXd d_out(1, n_samples);
    for (int i = 0; i < n_samples; ++i) {
        const double o = sigmoid(logits(0, i));
        loss += loss_bce(o, 1);
        d_out(0, i) = (o - 1.0) / n_samples;
    }
    if (grad) field.net().backward(tape, d_out, *grad);
    return loss / n_samples;
}

double loss_joint_skinning(const SkinningMlp& mlp, const Skeleton& skeleton,
                           MlpGrad* grad) {
    // One pin per joint, each to the bone that carries it rigidly through
    // every pose: a child's pivot to the bone above it, a root pivot to the
    // root bone, and a leaf tip to the leaf bone. Together they anchor every
    // bone of a chain at both ends.
    std::vector<std::pair<Vec3, int>> pins;
    std::vector<bool> has_child(std::size_t(skeleton.bone_count()), false);
    for (int i = 0; i < skeleton.bone_count(); ++i) {
        const Bone& b = skeleton.bones[std::size_t(i)];
        pins.emplace_back(b.joint, b.parent >= 0 ? b.parent : i);
        if (b.parent >= 0) has_child[std::size_t(b.parent)] = true;
    }
    for (int i = 0; i < skeleton.bone_count(); ++i) {
        if (!has_child[std::size_t(i)])
            pins.emplace_back(skeleton.bone_segment(i).second, i);
    }
    const double m = double(pins.size());

    double loss = 0.0;
    for (const auto& [pos, target] : pins) {
        MlpTape tape;
        const MatrixXd logits = mlp.net().forward(pos, grad ? &tape : nullptr);
        const VectorXd w = softmax(logits.col(0));
        loss += loss_bce(w[target], 1);
        if (grad) {
            VectorXd dw = VectorXd::Zero(w.size());
            dw[target] = -1.0 / (m * std::max(w[target], 1e-7));
            const VectorXd dz = softmax_vjp(w, dw);
            mlp.net().backward(tape, dz, *grad);
        }
    }
    return loss / m;
}

Aabb canonical_domain(const CapsuleBody& body) {
    const Aabb tight = body.canonical_bounds();
    return tight.padded(0.1 * tight.diagonal());
}

Aabb posed_sampling_box(const CapsuleBody& body, std::span<const RigidTransform> bones,
                        const VectorXd& pose_vector, double pad_frac) {
    const Aabb tight = body.posed_bounds(bones, pose_vector);
    return tight.padded(pad_frac * tight.diagonal());
}

namespace {

VectorXd pose_vector_of(const Pose& pose) {
    return Eigen::Map<const VectorXd>(pose.joint_angles.data(),
                                      Eigen::Index(pose.joint_angles.size()));
}

}  // namespace

TrainingFrame make_training_frame(const CapsuleBody& body, const Skeleton& skeleton,
                                  const Pose& pose, int n_points, double near_sigma_frac,
                                  double pad_frac, std::mt19937_64& rng) {
    if (n_points < 2) throw std::invalid_argument("training frame: n_points must be >= 2");
    TrainingFrame frame;
    frame.pose = pose;
    frame.pose_vector = pose_vector_of(pose);
    frame.bones = forward_kinematics(skeleton, pose);

    const Aabb box = posed_sampling_box(body, frame.bones, frame.pose_vector, pad_frac);
    const double sigma = near_sigma_frac * box.diagonal();
    const int n_uniform = n_points / 2;

    frame.points.resize(3, n_points);
    frame.labels.resize(std::size_t(n_points));
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (int i = 0; i < n_points; ++i) {
        Vec3 x;
        if (i < n_uniform) {
            x = box.min + Vec3(uni(rng) * box.extent().x(), uni(rng) * box.extent().y(),
                               uni(rng) * box.extent().z());
        } else {
            int ci = 0;
            const Vec3 surf = body.sample_surface(rng, frame.pose_vector, &ci);
            const Vec3 posed = frame.bones[std::size_t(body.capsules()[std::size_t(ci)].bone)]
                                   .apply(surf);
            x = posed + sigma * Vec3(gauss(rng), gauss(rng), gauss(rng));
        }
        frame.points.col(i) = x;
        frame.labels[std::size_t(i)] =
            body.posed_occupancy(x, frame.bones, frame.pose_vector);
    }
    return frame;
}

void TrainConfig::validate() const {
    if (epochs < 1) throw std::invalid_argument("train config: epochs must be >= 1");
    if (batch_points < 1) throw std::invalid_argument("train config: batch_points must be >= 1");
    if (points_per_frame < batch_points) {
        throw std::invalid_argument("train config: points_per_frame must be >= batch_points");
    }
    if (!(learning_rate > 0.0)) throw std::invalid_argument("train config: learning_rate must be > 0");
    if (!(skinning_lr_scale > 0.0)) {
        throw std::invalid_argument("train config: skinning_lr_scale must be > 0");
    }
    if (!(skinning_head_decay >= 0.0)) {
        throw std::invalid_argument("train config: skinning_head_decay must be >= 0");
    }
    if (momentum < 0.0 || momentum >= 1.0) {
        throw std::invalid_argument("train config: momentum must be in [0, 1)");
    }
    if (bootstrap_epochs < 0) throw std::invalid_argument("train config: bootstrap_epochs must be >= 0");
    if (!(bootstrap_weight >= 0.0)) throw std::invalid_argument("train config: bootstrap_weight must be >= 0");
    if (bone_loss_samples < 1) throw std::invalid_argument("train config: bone_loss_samples must be >= 1");
    if (distill_dims.nx < 2 || distill_dims.ny < 2 || distill_dims.nz < 2) {
        throw std::invalid_argument("train config: distill dims must be >= 2 per axis");
    }
    if (!(near_sigma_frac > 0.0)) throw std::invalid_argument("train config: near_sigma_frac must be > 0");
    if (!(pad_frac >= 0.0)) throw std::invalid_argument("train config: pad_frac must be >= 0");
    if (workers < 1) throw std::invalid_argument("train config: workers must be >= 1");
    if (val_samples < 1) throw std::invalid_argument("train config: val_samples must be >= 1");
}

namespace {

struct SgdState {
    MlpGrad grad;
    MlpGrad velocity;
};

void sgd_step(Mlp& net, SgdState& st, double lr, double momentum) {
    st.velocity.scale(momentum);
    st.velocity.add_scaled(st.grad, -lr);
    net.apply_update(st.velocity, 1.0);
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const CapsuleBody& body, const Skeleton& skeleton,
                  const std::vector<Pose>& train_poses, const std::vector<Pose>& val_poses) {
    cfg.validate();
    skeleton.validate();
    if (train_poses.empty()) throw std::invalid_argument("train: no training poses");
    if (train_poses.size() < 2) {
        std::cerr << "train: single training pose; skinning weights are unidentifiable\n";
    }

    const int n_b = skeleton.bone_count();
    const int n_p = cfg.pose_conditioning ? skeleton.dof() : 0;
    const Aabb bbox = canonical_domain(body);

    std::mt19937_64 rng(cfg.seed);
    SkinningMlp skinning(n_b, cfg.seed ^ 0x9e3779b97f4a7c15ull, bbox);
    OccupancyMlp occupancy(n_p, cfg.seed ^ 0xc2b2ae3d27d4eb4full, bbox);

    std::vector<TrainingFrame> frames;
    frames.reserve(train_poses.size());
    for (const Pose& pose : train_poses) {
        frames.push_back(make_training_frame(body, skeleton, pose, cfg.points_per_frame,
                                             cfg.near_sigma_frac, cfg.pad_frac, rng));
    }

    SearchOptions opts = SearchOptions::defaults_for(bbox);
    opts.variant = SearchVariant::Voxel;

    SgdState occ_state{occupancy.net().zero_grad(), occupancy.net().zero_grad()};
    SgdState skin_state{skinning.net().zero_grad(), skinning.net().zero_grad()};

    TrainResult result;
    std::vector<std::size_t> order(frames.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::uniform_int_distribution<int> pick_point(0, cfg.points_per_frame - 1);

    const std::int64_t total_iters = std::int64_t(cfg.epochs) * std::int64_t(frames.size());
    std::int64_t iter = 0;

    std::vector<Vec3> queries(std::size_t(cfg.batch_points));
    std::vector<int> labels(std::size_t(cfg.batch_points));
    std::vector<int> argmax;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        const bool bootstrap = epoch <= cfg.bootstrap_epochs;
        double epoch_loss = 0.0;
        std::int64_t epoch_terms = 0;

        for (std::size_t fi : order) {
            const TrainingFrame& frame = frames[fi];

            const SkinningVoxelGrid grid = distill(skinning, cfg.distill_dims, bbox);
            const TransformGrid tgrid =
                precompute_transform_grid(grid, frame.bones, cfg.workers);
            SearchContext ctx{frame.bones, nullptr, &grid, &tgrid};

            for (int b = 0; b < cfg.batch_points; ++b) {
                const int idx = pick_point(rng);
                queries[std::size_t(b)] = frame.points.col(idx);
                labels[std::size_t(b)] = frame.labels[std::size_t(idx)];
            }
            const std::vector<CorrespondenceSet> sets =
                batch_search(queries, ctx, opts, cfg.workers);
            const VectorXd p_net =
                cfg.pose_conditioning ? frame.pose_vector : VectorXd();
            const VectorXd pred = posed_occupancy_batch(sets, occupancy, p_net, &argmax);

            // Loss bookkeeping: label-1 points with no root carry no gradient
            // and are tallied instead of averaged in.
            std::vector<int> contributing;
            contributing.reserve(sets.size());
            double batch_loss = 0.0;
            int batch_terms = 0;
            for (std::size_t q = 0; q < sets.size(); ++q) {
                if (argmax[q] < 0) {
                    if (labels[q] == 1) {
                        ++result.dropped_label1_empty;
                    } else {
                        batch_loss += loss_bce(0.0, 0);
                        ++batch_terms;
                    }
                    continue;
                }
                batch_loss += loss_bce(pred[Eigen::Index(q)], labels[q]);
                ++batch_terms;
                contributing.push_back(int(q));
            }

            occ_state.grad.set_zero();
            skin_state.grad.set_zero();

            if (!contributing.empty() && batch_terms > 0) {
                const int m = int(contributing.size());
                MatrixXd occ_in = MatrixXd::Zero(3 + n_p, m);
                for (int c = 0; c < m; ++c) {
                    const std::size_t q = std::size_t(contributing[std::size_t(c)]);
                    occ_in.col(c).head<3>() = sets[q].roots[std::size_t(argmax[q])].x;
                    if (n_p > 0) occ_in.col(c).tail(n_p) = p_net;
                }
                MlpTape occ_tape;
                const MatrixXd logits = occupancy.net().forward(occ_in, &occ_tape);
                MatrixXd d_logit(1, m);
                for (int c = 0; c < m; ++c) {
                    const std::size_t q = std::size_t(contributing[std::size_t(c)]);
                    d_logit(0, c) = (sigmoid(logits(0, c)) - labels[q]) / batch_terms;
                }
                MatrixXd d_in;
                occupancy.net().backward(occ_tape, d_logit, occ_state.grad, &d_in);

                // Skinning gradient through the roots: cotangent per root is
                // -J̃ᵀ·(dL/dx*), pushed through the blend and softmax in one
                // batched backward pass.
                MatrixXd skin_in(3, m);
                for (int c = 0; c < m; ++c) {
                    const std::size_t q = std::size_t(contributing[std::size_t(c)]);
                    skin_in.col(c) = sets[q].roots[std::size_t(argmax[q])].x;
                }
                MlpTape skin_tape;
                MatrixXd skin_logits = skinning.net().forward(skin_in, &skin_tape);
                MatrixXd skin_dz(n_b, m);
                for (int c = 0; c < m; ++c) {
                    const std::size_t q = std::size_t(contributing[std::size_t(c)]);
                    const Root& root = sets[q].roots[std::size_t(argmax[q])];
                    const Vec3 v = d_in.col(c).head<3>();
                    const Vec3 u = -(root.inv_jacobian.transpose() * v);
                    const VectorXd w = softmax(skin_logits.col(c));
                    VectorXd uw(n_b);
                    for (int i = 0; i < n_b; ++i) {
                        uw[i] = u.dot(frame.bones[std::size_t(i)].apply(root.x));
                    }
                    skin_dz.col(c) = softmax_vjp(w, uw);
                }
                skinning.net().backward(skin_tape, skin_dz, skin_state.grad);
            }

            double iter_loss = batch_terms > 0 ? batch_loss / batch_terms : 0.0;
            if (bootstrap) {
                MlpGrad boot_occ = occupancy.net().zero_grad();
                MlpGrad boot_skin = skinning.net().zero_grad();
                const double l_bone = loss_bone_occupancy(occupancy, skeleton,
                                                          cfg.bone_loss_samples, rng, &boot_occ);
                const double l_joint = loss_joint_skinning(skinning, skeleton, &boot_skin);
                occ_state.grad.add_scaled(boot_occ, cfg.bootstrap_weight);
                skin_state.grad.add_scaled(boot_skin, cfg.bootstrap_weight);
                iter_loss += cfg.bootstrap_weight * (l_bone + l_joint);
            }

            if (cfg.skinning_head_decay > 0.0) {
                const std::size_t head = skin_state.grad.dW.size() - 1;
                skin_state.grad.dW[head] +=
                    cfg.skinning_head_decay * skinning.net().weight_matrices()[head];
                skin_state.grad.db[head] +=
                    cfg.skinning_head_decay * skinning.net().bias_vectors()[head];
            }

            const double lr =
                cfg.cosine_decay
                    ? 0.5 * cfg.learning_rate *
                          (1.0 + std::cos(M_PI * double(iter) / double(total_iters)))
                    : cfg.learning_rate;
            sgd_step(occupancy.net(), occ_state, lr, cfg.momentum);
            sgd_step(skinning.net(), skin_state, lr * cfg.skinning_lr_scale, cfg.momentum);
            ++iter;

            epoch_loss += iter_loss;
            ++epoch_terms;
        }

        EpochMetrics em;
        em.epoch = epoch;
        em.mean_loss = epoch_terms > 0 ? epoch_loss / double(epoch_terms) : 0.0;
        em.val_iou = val_poses.empty()
                         ? 0.0
                         : validation_iou(occupancy, skinning, body, skeleton, val_poses,
                                          cfg.val_samples, cfg.distill_dims,
                                          cfg.seed ^ 0x94d049bb133111ebull, cfg.workers);
        result.metrics.push_back(em);
    }

    result.grid = distill(skinning, GridDims{64, 64, 16}, bbox);
    result.bbox = bbox;
    result.occupancy = std::move(occupancy);
    result.skinning = std::move(skinning);
    return result;
}

double validation_iou(const OccupancyMlp& occupancy, const SkinningMlp& skinning,
                      const CapsuleBody& body, const Skeleton& skeleton,
                      const std::vector<Pose>& poses, int samples_per_pose,
                      GridDims grid_dims, std::uint64_t seed, int workers) {
    const Aabb bbox = canonical_domain(body);
    const SkinningVoxelGrid grid = distill(skinning, grid_dims, bbox);
    SearchOptions opts = SearchOptions::defaults_for(bbox);
    opts.variant = SearchVariant::Voxel;

    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::int64_t tp = 0, fp = 0, fn = 0;

    std::vector<Vec3> queries(static_cast<std::size_t>(samples_per_pose));
    for (const Pose& pose : poses) {
        if (int(pose.joint_angles.size()) != skeleton.dof()) {
            throw std::invalid_argument("validation: pose length does not match skeleton dof");
        }
        const std::vector<RigidTransform> bones = forward_kinematics(skeleton, pose);
        const VectorXd p = Eigen::Map<const VectorXd>(pose.joint_angles.data(),
                                                      Eigen::Index(pose.joint_angles.size()));
        const Aabb box = posed_sampling_box(body, bones, p, 0.1);
        for (int i = 0; i < samples_per_pose; ++i) {
            queries[std::size_t(i)] =
                box.min + Vec3(uni(rng) * box.extent().x(), uni(rng) * box.extent().y(),
                               uni(rng) * box.extent().z());
        }
        const TransformGrid tgrid = precompute_transform_grid(grid, bones, workers);
        SearchContext ctx{bones, nullptr, &grid, &tgrid};
        const std::vector<CorrespondenceSet> sets = batch_search(queries, ctx, opts, workers);
        const VectorXd p_net = occupancy.pose_width() > 0 ? p : VectorXd();
        const VectorXd pred = posed_occupancy_batch(sets, occupancy, p_net);
        for (int i = 0; i < samples_per_pose; ++i) {
            const bool model = pred[i] >= 0.5;
            const bool truth = body.posed_occupancy(queries[std::size_t(i)], bones, p) == 1;
            tp += model && truth;
            fp += model && !truth;
            fn += !model && truth;
        }
    }
    const std::int64_t denom = tp + fp + fn;
    return denom == 0 ? 1.0 : double(tp) / double(denom);
}

SkinningMlp fit_skinning_supervised(const CapsuleBody& body, const Aabb& bbox,
                                    double temperature, int iterations, int batch,
                                    double learning_rate, std::uint64_t seed) {
    if (!(temperature > 0.0)) throw std::invalid_argument("skinning fit: temperature must be > 0");
    if (iterations < 1 || batch < 1) {
        throw std::invalid_argument("skinning fit: iterations and batch must be >= 1");
    }
    const int n_b = int(body.size());
    SkinningMlp mlp(n_b, seed, bbox);
    SgdState st{mlp.net().zero_grad(), mlp.net().zero_grad()};

    std::mt19937_64 rng(seed ^ 0xbf58476d1ce4e5b9ull);
    std::uniform_real_distribution<double> uni(0.0, 1.0);

    MatrixXd X(3, batch);
    MatrixXd target(n_b, batch);
    for (int it = 0; it < iterations; ++it) {
        for (int c = 0; c < batch; ++c) {
            const Vec3 x = bbox.min + Vec3(uni(rng) * bbox.extent().x(),
                                           uni(rng) * bbox.extent().y(),
                                           uni(rng) * bbox.extent().z());
            X.col(c) = x;
            VectorXd z(n_b);
            for (int i = 0; i < n_b; ++i) {
                const Capsule& cap = body.capsules()[std::size_t(i)];
                const double d = point_segment_distance(x, cap.a, cap.b);
                z[i] = -d * d / temperature;
            }
            target.col(c) = softmax(z);
        }
        MlpTape tape;
        const MatrixXd logits = mlp.net().forward(X, &tape);
        MatrixXd dz(n_b, batch);
        for (int c = 0; c < batch; ++c) {
            dz.col(c) = (softmax(logits.col(c)) - target.col(c)) / batch;
        }
        st.grad.set_zero();
        mlp.net().backward(tape, dz, st.grad);
        sgd_step(mlp.net(), st, learning_rate, 0.9);
    }
    return mlp;
}

}  // namespace fskin
