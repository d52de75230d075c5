// Command-line front end: deform/train/bench/extract/ablate over the
// library. All artifacts land in --out; every run writes a manifest.json
// with the resolved configuration, input hash, and per-phase timings.
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <set>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "fskin/checkpoint.hpp"
#include "fskin/correspondence.hpp"
#include "fskin/deformer.hpp"
#include "fskin/diff.hpp"
#include "fskin/pointio.hpp"
#include "fskin/runconfig.hpp"
#include "fskin/shape.hpp"
#include "fskin/skeleton.hpp"
#include "fskin/skinning.hpp"

namespace fs = std::filesystem;
using namespace fskin;

namespace {

/// Operator mistakes: missing inputs, unknown or malformed configuration.
/// Mapped to exit code 2; everything else exits 1.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void require_input(const std::string& path, const char* flag) {
    if (path.empty()) throw UsageError(std::string("missing required option ") + flag);
    if (!fs::exists(path)) throw UsageError("missing file: " + path);
}

long long parse_ll(const std::string& key, const std::string& text) {
    try {
        std::size_t used = 0;
        const long long v = std::stoll(text, &used);
        if (used != text.size()) throw std::invalid_argument(text);
        return v;
    } catch (const std::exception&) {
        throw UsageError("config key '" + key + "': not an integer: '" + text + "'");
    }
}

double parse_real(const std::string& key, const std::string& text) {
    try {
        std::size_t used = 0;
        const double v = std::stod(text, &used);
        if (used != text.size()) throw std::invalid_argument(text);
        return v;
    } catch (const std::exception&) {
        throw UsageError("config key '" + key + "': not a number: '" + text + "'");
    }
}

GridDims parse_dims(const std::string& origin, const std::string& text) {
    GridDims d;
    if (std::sscanf(text.c_str(), "%d,%d,%d", &d.nx, &d.ny, &d.nz) != 3 ||
        d.nx < 2 || d.ny < 2 || d.nz < 2) {
        throw UsageError(origin + ": expected NX,NY,NZ with each >= 2, got '" + text + "'");
    }
    return d;
}

SearchVariant parse_variant(const std::string& origin, const std::string& text) {
    if (text == "mlp") return SearchVariant::Mlp;
    if (text == "voxel") return SearchVariant::Voxel;
    throw UsageError(origin + ": expected 'mlp' or 'voxel', got '" + text + "'");
}

std::vector<std::string> split(const std::string& text, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (start <= text.size()) {
        const auto end = text.find(sep, start);
        if (end == std::string::npos) {
            out.push_back(text.substr(start));
            break;
        }
        out.push_back(text.substr(start, end - start));
        start = end + 1;
    }
    return out;
}

/// Applies the flags > file > defaults precedence and records the resolved
/// value of every key for the manifest. Keys present in the file but never
/// resolved are rejected as unknown.
class Resolver {
public:
    explicit Resolver(const std::string& config_path) {
        if (!config_path.empty()) {
            if (!fs::exists(config_path)) throw UsageError("missing file: " + config_path);
            file_ = parse_config_file(config_path);
        }
    }

    std::string str(const CLI::Option* o, const std::string& flag_val,
                    const std::string& key, std::string def) {
        known_.insert(key);
        std::string v = std::move(def);
        if (auto it = file_.find(key); it != file_.end()) v = it->second;
        if (o && o->count() > 0) v = flag_val;
        snap_[key] = v;
        return v;
    }

    long long integer(const CLI::Option* o, long long flag_val, const std::string& key,
                      long long def) {
        known_.insert(key);
        long long v = def;
        if (auto it = file_.find(key); it != file_.end()) v = parse_ll(key, it->second);
        if (o && o->count() > 0) v = flag_val;
        snap_[key] = std::to_string(v);
        return v;
    }

    double real(const CLI::Option* o, double flag_val, const std::string& key, double def) {
        known_.insert(key);
        double v = def;
        if (auto it = file_.find(key); it != file_.end()) v = parse_real(key, it->second);
        if (o && o->count() > 0) v = flag_val;
        char buf[40];
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        snap_[key] = buf;
        return v;
    }

    /// Repeatable list flag; the file value is `sep`-separated.
    std::vector<std::string> list(const CLI::Option* o,
                                  const std::vector<std::string>& flag_vals,
                                  const std::string& key, std::vector<std::string> def,
                                  char sep) {
        known_.insert(key);
        std::vector<std::string> v = std::move(def);
        if (auto it = file_.find(key); it != file_.end()) v = split(it->second, sep);
        if (o && o->count() > 0) v = flag_vals;
        std::string joined;
        for (std::size_t i = 0; i < v.size(); ++i) {
            if (i) joined += sep;
            joined += v[i];
        }
        snap_[key] = joined;
        return v;
    }

    void note(const std::string& key, const std::string& value) { snap_[key] = value; }

    bool file_has(const std::string& key) const { return file_.contains(key); }

    void reject_unknown() const {
        for (const auto& [k, v] : file_) {
            if (!known_.contains(k)) throw UsageError("unknown config key: " + k);
        }
    }

    const std::map<std::string, std::string>& snapshot() const { return snap_; }

private:
    std::map<std::string, std::string> file_;
    std::set<std::string> known_;
    std::map<std::string, std::string> snap_;
};

/// Flags shared by every subcommand; each keeps its own storage.
struct CommonFlags {
    std::string skeleton, pose, points, checkpoint, out = ".", config;
    std::string grid_dims;
    std::vector<std::string> grid_dims_multi;
    std::string variant;
    std::vector<std::string> variant_multi;
    double eps = 0.0;
    int max_iters = 0;
    std::uint64_t seed = 1;
    int workers = 0;
    bool dims_is_multi = false;

    CLI::Option* o_skeleton = nullptr;
    CLI::Option* o_pose = nullptr;
    CLI::Option* o_points = nullptr;
    CLI::Option* o_checkpoint = nullptr;
    CLI::Option* o_out = nullptr;
    CLI::Option* o_dims = nullptr;
    CLI::Option* o_variant = nullptr;
    CLI::Option* o_eps = nullptr;
    CLI::Option* o_max_iters = nullptr;
    CLI::Option* o_seed = nullptr;
    CLI::Option* o_workers = nullptr;

    void add(CLI::App* cmd, bool multi_dims = false, bool multi_variant = false) {
        o_skeleton = cmd->add_option("--skeleton", skeleton, "skeleton JSON file");
        o_pose = cmd->add_option("--pose", pose, "pose frames JSON file");
        o_points = cmd->add_option("--points", points, "query points file (.xyz or .bin)");
        o_checkpoint = cmd->add_option("--checkpoint", checkpoint, "FSNF checkpoint file");
        dims_is_multi = multi_dims;
        if (multi_dims) {
            o_dims = cmd->add_option("--grid-dims", grid_dims_multi,
                                     "voxel grid dims NX,NY,NZ (repeatable)");
        } else {
            o_dims = cmd->add_option("--grid-dims", grid_dims, "voxel grid dims NX,NY,NZ");
        }
        if (multi_variant) {
            o_variant = cmd->add_option("--variant", variant_multi,
                                        "search variant, mlp or voxel (repeatable)");
        } else {
            o_variant = cmd->add_option("--variant", variant, "search variant, mlp or voxel");
        }
        o_eps = cmd->add_option("--eps", eps, "convergence threshold (absolute)");
        o_max_iters = cmd->add_option("--max-iters", max_iters, "iteration cap per start");
        o_seed = cmd->add_option("--seed", seed, "RNG seed");
        o_workers = cmd->add_option("--workers", workers, "worker thread count");
        o_out = cmd->add_option("--out", out, "output directory");
        cmd->add_option("--config", config, "key=value configuration file");
    }
};

struct CommonOpts {
    std::string skeleton, pose, points, checkpoint, out;
    GridDims dims{64, 64, 16};
    SearchVariant variant = SearchVariant::Voxel;
    double eps = 0.0;    // 0 = scaled library default
    int max_iters = 0;   // 0 = library default
    std::uint64_t seed = 1;
    int workers = 1;
};

CommonOpts resolve_common(Resolver& r, const CommonFlags& f) {
    CommonOpts c;
    c.skeleton = r.str(f.o_skeleton, f.skeleton, "skeleton", "");
    c.pose = r.str(f.o_pose, f.pose, "pose", "");
    c.points = r.str(f.o_points, f.points, "points", "");
    c.checkpoint = r.str(f.o_checkpoint, f.checkpoint, "checkpoint", "");
    c.out = r.str(f.o_out, f.out, "out", ".");
    if (!f.dims_is_multi) {
        c.dims = parse_dims("--grid-dims",
                            r.str(f.o_dims, f.grid_dims, "grid_dims", "64,64,16"));
    }
    c.variant = parse_variant("--variant", r.str(f.o_variant, f.variant, "variant", "voxel"));
    c.eps = r.real(f.o_eps, f.eps, "eps", 0.0);
    c.max_iters = int(r.integer(f.o_max_iters, f.max_iters, "max_iters", 0));
    c.seed = std::uint64_t(r.integer(f.o_seed, (long long)f.seed, "seed", 1));
    const int hw = std::max(1u, std::thread::hardware_concurrency());
    c.workers = int(r.integer(f.o_workers, f.workers, "workers", 0));
    if (c.workers <= 0) c.workers = hw;
    r.note("workers", std::to_string(c.workers));
    return c;
}

SearchOptions make_search_options(const CommonOpts& c, const Aabb& bbox, Resolver& r) {
    SearchOptions opts = SearchOptions::defaults_for(bbox);
    if (c.eps > 0.0) opts.conv_eps = c.eps;
    if (c.max_iters > 0) opts.max_iters = c.max_iters;
    opts.variant = c.variant;
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", opts.conv_eps);
    r.note("effective_conv_eps", buf);
    r.note("effective_max_iters", std::to_string(opts.max_iters));
    return opts;
}

std::string frame_name(const char* stem, std::size_t index, const char* ext) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%s_%03zu%s", stem, index, ext);
    return buf;
}

/// Voxelized soft bone assignment of the analytic body: softmax of negative
/// squared capsule distances. Stand-in weight field when no trained
/// checkpoint is supplied.
SkinningVoxelGrid analytic_weight_grid(const CapsuleBody& body, int n_bones, GridDims dims,
                                       const Aabb& bbox) {
    SkinningVoxelGrid grid(dims, bbox, n_bones);
    const double tau = std::pow(0.1 * bbox.diagonal(), 2);
    VectorXd z(n_bones);
    for (int k = 0; k < dims.nz; ++k) {
        for (int j = 0; j < dims.ny; ++j) {
            for (int i = 0; i < dims.nx; ++i) {
                const Vec3 x = grid.vertex_position(i, j, k);
                z.setConstant(-1e6);
                for (const Capsule& cap : body.capsules()) {
                    const double d = point_segment_distance(x, cap.a, cap.b);
                    z[cap.bone] = std::max(z[cap.bone], -d * d / tau);
                }
                softmax_inplace(z);
                std::copy(z.data(), z.data() + n_bones, grid.vertex_weights(i, j, k));
            }
        }
    }
    return grid;
}

VectorXd pose_vec(const Pose& pose) {
    return Eigen::Map<const VectorXd>(pose.joint_angles.data(),
                                      Eigen::Index(pose.joint_angles.size()));
}

void check_frame_dof(const Pose& frame, std::size_t index, int dof) {
    if (frame.dof() != dof) {
        throw std::runtime_error("pose frame " + std::to_string(index) + " has " +
                                 std::to_string(frame.dof()) + " angles, skeleton has " +
                                 std::to_string(dof) + " joints");
    }
}

void write_manifest(const RunManifest& m, const std::string& out_dir) {
    m.write((fs::path(out_dir) / "manifest.json").string());
}

// ---------------------------------------------------------------------------
// deform

int cmd_deform(const CommonFlags& f) {
    Resolver r(f.config);
    CommonOpts c = resolve_common(r, f);
    r.reject_unknown();
    require_input(c.skeleton, "--skeleton");
    require_input(c.pose, "--pose");
    require_input(c.points, "--points");
    fs::create_directories(c.out);

    RunManifest manifest;
    manifest.command = "deform";
    manifest.seed = c.seed;

    std::vector<std::string> inputs{c.skeleton, c.pose, c.points};
    PhaseTimer t;
    const Skeleton skeleton = load_skeleton_json(c.skeleton);
    skeleton.validate();
    const std::vector<Pose> frames = load_pose_frames(c.pose);
    const std::vector<Vec3> points = load_points(c.points);
    const int dof = skeleton.dof();

    const bool analytic = c.checkpoint.empty();
    Checkpoint ckpt;
    CapsuleBody body = CapsuleBody::from_skeleton(skeleton);
    double load_s = 0.0, distill_s = 0.0;
    Aabb bbox;
    SkinningVoxelGrid grid;
    if (analytic) {
        if (c.variant == SearchVariant::Mlp) {
            throw UsageError("variant 'mlp' needs --checkpoint; the analytic body only "
                             "provides a voxel weight field");
        }
        bbox = canonical_domain(body);
        load_s = t.seconds();
        t.restart();
        grid = analytic_weight_grid(body, skeleton.bone_count(), c.dims, bbox);
        distill_s = t.seconds();
    } else {
        require_input(c.checkpoint, "--checkpoint");
        inputs.push_back(c.checkpoint);
        ckpt = load_fsnf(c.checkpoint);
        if (ckpt.skinning.bone_count() != skeleton.bone_count()) {
            throw std::runtime_error("checkpoint has " +
                                     std::to_string(ckpt.skinning.bone_count()) +
                                     " bones, skeleton has " +
                                     std::to_string(skeleton.bone_count()));
        }
        if (ckpt.occupancy.pose_width() != 0 && ckpt.occupancy.pose_width() != dof) {
            throw std::runtime_error("checkpoint occupancy expects " +
                                     std::to_string(ckpt.occupancy.pose_width()) +
                                     " pose angles, skeleton has " + std::to_string(dof));
        }
        bbox = ckpt.bbox();
        load_s = t.seconds();
        t.restart();
        if (f.o_dims->count() > 0 && !(c.dims == ckpt.grid.dims())) {
            grid = distill(ckpt.skinning, c.dims, bbox);
        } else {
            grid = ckpt.grid;
        }
        distill_s = t.seconds();
    }
    if (!f.config.empty()) inputs.push_back(f.config);
    manifest.input_hash = content_hash(inputs);

    SearchOptions opts = make_search_options(c, bbox, r);

    double precompute_s = 0.0, search_s = 0.0, shape_s = 0.0, write_s = 0.0;
    for (std::size_t fi = 0; fi < frames.size(); ++fi) {
        check_frame_dof(frames[fi], fi, dof);
        const std::vector<RigidTransform> bones = forward_kinematics(skeleton, frames[fi]);
        const VectorXd p = pose_vec(frames[fi]);

        TransformGrid tgrid;
        SearchContext ctx;
        ctx.bones = bones;
        if (opts.variant == SearchVariant::Voxel) {
            t.restart();
            tgrid = precompute_transform_grid(grid, bones, c.workers);
            precompute_s += t.seconds();
            ctx.grid = &grid;
            ctx.tgrid = &tgrid;
        }
        if (!analytic) ctx.mlp = &ckpt.skinning;

        t.restart();
        const std::vector<CorrespondenceSet> sets = batch_search(points, ctx, opts, c.workers);
        search_s += t.seconds();

        t.restart();
        std::vector<double> occ(sets.size(), 0.0);
        if (analytic) {
            for (std::size_t q = 0; q < sets.size(); ++q) {
                occ[q] = posed_occupancy(
                    sets[q], [&](const Vec3& x) { return double(body.occupancy(x, p)); });
            }
        } else {
            const VectorXd p_net = ckpt.occupancy.pose_width() > 0 ? p : VectorXd();
            const VectorXd pred = posed_occupancy_batch(sets, ckpt.occupancy, p_net);
            for (std::size_t q = 0; q < sets.size(); ++q) occ[q] = pred[Eigen::Index(q)];
        }
        shape_s += t.seconds();

        t.restart();
        save_correspondence_dump(
            sets, (fs::path(c.out) / frame_name("correspondences", fi, ".txt")).string());
        save_scalar_column(occ,
                           (fs::path(c.out) / frame_name("occupancy", fi, ".txt")).string());
        write_s += t.seconds();
    }

    manifest.config = r.snapshot();
    manifest.add_phase("load", load_s);
    manifest.add_phase("distill", distill_s);
    manifest.add_phase("precompute", precompute_s);
    manifest.add_phase("search", search_s);
    manifest.add_phase("shape-query", shape_s);
    manifest.add_phase("write", write_s);
    write_manifest(manifest, c.out);
    std::cout << "deform: " << frames.size() << " frame(s), " << points.size()
              << " queries, outputs in " << c.out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// train

TrainConfig resolve_train_config(Resolver& r, const CommonOpts& c) {
    TrainConfig cfg;
    cfg.epochs = int(r.integer(nullptr, 0, "epochs", cfg.epochs));
    cfg.batch_points = int(r.integer(nullptr, 0, "batch_points", cfg.batch_points));
    cfg.points_per_frame =
        int(r.integer(nullptr, 0, "points_per_frame", cfg.points_per_frame));
    cfg.learning_rate = r.real(nullptr, 0, "learning_rate", cfg.learning_rate);
    cfg.momentum = r.real(nullptr, 0, "momentum", cfg.momentum);
    cfg.cosine_decay = r.integer(nullptr, 0, "cosine_decay", cfg.cosine_decay ? 1 : 0) != 0;
    cfg.skinning_lr_scale = r.real(nullptr, 0, "skinning_lr_scale", cfg.skinning_lr_scale);
    cfg.pose_conditioning =
        r.integer(nullptr, 0, "pose_conditioning", cfg.pose_conditioning ? 1 : 0) != 0;
    cfg.skinning_head_decay =
        r.real(nullptr, 0, "skinning_head_decay", cfg.skinning_head_decay);
    cfg.bootstrap_epochs = int(r.integer(nullptr, 0, "bootstrap_epochs", cfg.bootstrap_epochs));
    cfg.bootstrap_weight = r.real(nullptr, 0, "bootstrap_weight", cfg.bootstrap_weight);
    cfg.bone_loss_samples =
        int(r.integer(nullptr, 0, "bone_loss_samples", cfg.bone_loss_samples));
    cfg.near_sigma_frac = r.real(nullptr, 0, "near_sigma_frac", cfg.near_sigma_frac);
    cfg.pad_frac = r.real(nullptr, 0, "pad_frac", cfg.pad_frac);
    cfg.val_samples = int(r.integer(nullptr, 0, "val_samples", cfg.val_samples));
    cfg.distill_dims = c.dims;
    cfg.seed = c.seed;
    cfg.workers = c.workers;
    return cfg;
}

void write_metrics_csv(const std::vector<EpochMetrics>& metrics, const std::string& path) {
    std::FILE* fp = std::fopen(path.c_str(), "w");
    if (!fp) throw std::runtime_error("cannot write metrics file: " + path);
    std::fprintf(fp, "epoch,mean_loss,val_iou\n");
    for (const EpochMetrics& m : metrics) {
        std::fprintf(fp, "%d,%.17g,%.17g\n", m.epoch, m.mean_loss, m.val_iou);
    }
    std::fclose(fp);
}

int cmd_train(const CommonFlags& f) {
    Resolver r(f.config);
    CommonOpts c = resolve_common(r, f);
    const std::string val_pose = r.str(nullptr, "", "val_pose", "");
    TrainConfig cfg = resolve_train_config(r, c);
    // The in-loop distillation grid is coarse by default; --grid-dims only
    // overrides it when given explicitly (the checkpoint grid is always
    // 64x64x16 regardless).
    if (!(f.o_dims && f.o_dims->count() > 0) && !r.file_has("grid_dims")) {
        cfg.distill_dims = GridDims{32, 32, 8};
        r.note("grid_dims", "32,32,8");
    }
    r.reject_unknown();
    require_input(c.skeleton, "--skeleton");
    require_input(c.pose, "--pose");
    fs::create_directories(c.out);

    RunManifest manifest;
    manifest.command = "train";
    manifest.seed = c.seed;

    std::vector<std::string> inputs{c.skeleton, c.pose};
    PhaseTimer t;
    const Skeleton skeleton = load_skeleton_json(c.skeleton);
    skeleton.validate();
    const CapsuleBody body = CapsuleBody::from_skeleton(skeleton);
    const std::vector<Pose> train_poses = load_pose_frames(c.pose);
    std::vector<Pose> val_poses;
    if (!val_pose.empty()) {
        require_input(val_pose, "val_pose");
        inputs.push_back(val_pose);
        val_poses = load_pose_frames(val_pose);
    }
    if (!f.config.empty()) inputs.push_back(f.config);
    manifest.input_hash = content_hash(inputs);
    const double load_s = t.seconds();

    t.restart();
    TrainResult result = train(cfg, body, skeleton, train_poses, val_poses);
    const double train_s = t.seconds();

    t.restart();
    Checkpoint ckpt{std::move(result.occupancy), std::move(result.skinning),
                    std::move(result.grid)};
    save_fsnf(ckpt, (fs::path(c.out) / "checkpoint.fsnf").string());
    write_metrics_csv(result.metrics, (fs::path(c.out) / "metrics.csv").string());
    const double write_s = t.seconds();

    manifest.config = r.snapshot();
    manifest.add_phase("load", load_s);
    manifest.add_phase("train", train_s);
    manifest.add_phase("write", write_s);
    write_manifest(manifest, c.out);

    const double final_iou = result.metrics.empty() ? 0.0 : result.metrics.back().val_iou;
    std::cout << "train: " << cfg.epochs << " epochs, final val IoU " << final_iou
              << ", label-1 points without roots: " << result.dropped_label1_empty << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// bench

Skeleton builtin_bench_skeleton() {
    Skeleton s;
    for (int i = 0; i < 3; ++i) {
        Bone b;
        b.name = "bone" + std::to_string(i);
        b.parent = i - 1;
        b.joint = Vec3(double(i), 0.0, 0.0);
        b.axis = Vec3::UnitZ();
        b.length = 1.0;
        b.radius = 0.12;
        s.bones.push_back(b);
    }
    return s;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

int cmd_bench(const CommonFlags& f, const std::vector<std::string>& queries_flag,
              const CLI::Option* o_queries) {
    Resolver r(f.config);
    CommonOpts c = resolve_common(r, f);

    const std::vector<std::string> query_strs =
        r.list(o_queries, queries_flag, "queries", {"200000"}, ',');
    const long long runs = r.integer(nullptr, 0, "runs", 5);
    if (runs < 1) throw UsageError("config key 'runs': must be >= 1");

    std::vector<std::string> dim_strs =
        r.list(f.o_dims, f.grid_dims_multi, "grid_dims", {"64,64,16"}, ';');
    std::vector<std::string> variant_strs =
        r.list(f.o_variant, f.variant_multi, "variant", {"mlp", "voxel"}, ',');
    r.reject_unknown();
    fs::create_directories(c.out);

    std::vector<GridDims> dims_list;
    for (const std::string& d : dim_strs) dims_list.push_back(parse_dims("--grid-dims", d));
    std::vector<SearchVariant> variants;
    for (const std::string& v : variant_strs) {
        variants.push_back(parse_variant("--variant", v));
    }
    std::vector<int> query_counts;
    for (const std::string& q : query_strs) {
        const long long n = parse_ll("queries", q);
        if (n < 1) throw UsageError("config key 'queries': must be >= 1");
        query_counts.push_back(int(n));
    }

    RunManifest manifest;
    manifest.command = "bench";
    manifest.seed = c.seed;

    PhaseTimer t;
    Skeleton skeleton;
    std::vector<std::string> inputs;
    if (!c.skeleton.empty()) {
        require_input(c.skeleton, "--skeleton");
        inputs.push_back(c.skeleton);
        skeleton = load_skeleton_json(c.skeleton);
    } else {
        skeleton = builtin_bench_skeleton();
    }
    skeleton.validate();
    if (!f.config.empty()) inputs.push_back(f.config);
    manifest.input_hash = inputs.empty() ? "none" : content_hash(inputs);

    const CapsuleBody body = CapsuleBody::from_skeleton(skeleton);
    const Aabb bbox = canonical_domain(body);
    const int n_b = skeleton.bone_count();
    const SkinningMlp skinning(n_b, c.seed);
    const OccupancyMlp occupancy(skeleton.dof(), c.seed ^ 0x9e3779b97f4a7c15ull);

    Pose pose = Pose::zero(skeleton.dof());
    for (double& a : pose.joint_angles) a = 0.4;
    const std::vector<RigidTransform> bones = forward_kinematics(skeleton, pose);
    const VectorXd p = pose_vec(pose);

    const int max_n = *std::max_element(query_counts.begin(), query_counts.end());
    std::mt19937_64 rng(c.seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    const Aabb qbox = posed_sampling_box(body, bones, p, 0.1);
    std::vector<Vec3> all_queries(static_cast<std::size_t>(max_n));
    for (Vec3& q : all_queries) {
        q = qbox.min + Vec3(uni(rng) * qbox.extent().x(), uni(rng) * qbox.extent().y(),
                            uni(rng) * qbox.extent().z());
    }
    const double setup_s = t.seconds();

    struct Row {
        SearchVariant variant;
        GridDims dims;
        int n = 0;
        double distill_ms = 0, precompute_ms = 0, search_ms = 0, shape_ms = 0, total_ms = 0;
        double search_qps = 0;
    };
    std::vector<Row> rows;
    double distill_wall = 0, precompute_wall = 0, search_wall = 0, shape_wall = 0;

    for (const GridDims& dims : dims_list) {
        for (const SearchVariant variant : variants) {
            for (const int n : query_counts) {
                const std::span<const Vec3> queries(all_queries.data(), std::size_t(n));
                std::vector<double> distill_t, precompute_t, search_t, shape_t, total_t;
                for (long long run = 0; run <= runs; ++run) {  // run 0 = discarded warm-up
                    PhaseTimer wall;
                    SkinningVoxelGrid grid;
                    TransformGrid tgrid;
                    SearchContext ctx;
                    ctx.bones = bones;
                    ctx.mlp = &skinning;
                    double d_s = 0, pre_s = 0;
                    if (variant == SearchVariant::Voxel) {
                        t.restart();
                        grid = distill(skinning, dims, bbox);
                        d_s = t.seconds();
                        t.restart();
                        tgrid = precompute_transform_grid(grid, bones, c.workers);
                        pre_s = t.seconds();
                        ctx.grid = &grid;
                        ctx.tgrid = &tgrid;
                    }
                    SearchOptions opts = make_search_options(c, bbox, r);
                    opts.variant = variant;

                    t.restart();
                    const std::vector<CorrespondenceSet> sets =
                        batch_search(queries, ctx, opts, c.workers);
                    const double s_s = t.seconds();

                    t.restart();
                    const VectorXd occ = posed_occupancy_batch(sets, occupancy, p);
                    (void)occ;
                    const double q_s = t.seconds();

                    distill_wall += d_s;
                    precompute_wall += pre_s;
                    search_wall += s_s;
                    shape_wall += q_s;
                    if (run == 0) continue;
                    distill_t.push_back(d_s);
                    precompute_t.push_back(pre_s);
                    search_t.push_back(s_s);
                    shape_t.push_back(q_s);
                    total_t.push_back(wall.seconds());
                }
                Row row;
                row.variant = variant;
                row.dims = dims;
                row.n = n;
                row.distill_ms = 1e3 * median(distill_t);
                row.precompute_ms = 1e3 * median(precompute_t);
                row.search_ms = 1e3 * median(search_t);
                row.shape_ms = 1e3 * median(shape_t);
                row.total_ms = 1e3 * median(total_t);
                row.search_qps = double(n) / (row.search_ms / 1e3);
                rows.push_back(row);
            }
        }
    }

    t.restart();
    const std::string csv_path = (fs::path(c.out) / "bench.csv").string();
    std::FILE* fp = std::fopen(csv_path.c_str(), "w");
    if (!fp) throw std::runtime_error("cannot write bench CSV: " + csv_path);
    std::fprintf(fp,
                 "variant,nx,ny,nz,n_points,runs,distill_ms,precompute_ms,search_ms,"
                 "shape_query_ms,total_ms,search_throughput_qps\n");
    for (const Row& row : rows) {
        std::fprintf(fp, "%s,%d,%d,%d,%d,%lld,%.6g,%.6g,%.6g,%.6g,%.6g,%.6g\n",
                     row.variant == SearchVariant::Mlp ? "mlp" : "voxel", row.dims.nx,
                     row.dims.ny, row.dims.nz, row.n, runs, row.distill_ms,
                     row.precompute_ms, row.search_ms, row.shape_ms, row.total_ms,
                     row.search_qps);
    }
    std::fclose(fp);
    const double write_s = t.seconds();

    for (const Row& row : rows) {
        std::printf("%-5s %3dx%3dx%3d  n=%-7d  distill %8.2f ms  precompute %8.2f ms  "
                    "search %10.2f ms  shape %8.2f ms  total %10.2f ms  %10.0f q/s\n",
                    row.variant == SearchVariant::Mlp ? "mlp" : "voxel", row.dims.nx,
                    row.dims.ny, row.dims.nz, row.n, row.distill_ms, row.precompute_ms,
                    row.search_ms, row.shape_ms, row.total_ms, row.search_qps);
    }
    for (const GridDims& dims : dims_list) {
        for (const int n : query_counts) {
            const Row* mlp_row = nullptr;
            const Row* vox_row = nullptr;
            for (const Row& row : rows) {
                if (!(row.dims == dims) || row.n != n) continue;
                if (row.variant == SearchVariant::Mlp) mlp_row = &row;
                if (row.variant == SearchVariant::Voxel) vox_row = &row;
            }
            if (mlp_row && vox_row) {
                std::printf("throughput ratio voxel/mlp at %dx%dx%d, n=%d: %.2f\n", dims.nx,
                            dims.ny, dims.nz, n, vox_row->search_qps / mlp_row->search_qps);
            }
        }
    }

    manifest.config = r.snapshot();
    manifest.add_phase("setup", setup_s);
    manifest.add_phase("distill", distill_wall);
    manifest.add_phase("precompute", precompute_wall);
    manifest.add_phase("search", search_wall);
    manifest.add_phase("shape-query", shape_wall);
    manifest.add_phase("write", write_s);
    write_manifest(manifest, c.out);
    return 0;
}

// ---------------------------------------------------------------------------
// extract

int cmd_extract(const CommonFlags& f, int resolution_flag, const CLI::Option* o_resolution) {
    Resolver r(f.config);
    CommonOpts c = resolve_common(r, f);
    const int resolution = int(r.integer(o_resolution, resolution_flag, "resolution", 64));
    r.reject_unknown();
    require_input(c.skeleton, "--skeleton");
    require_input(c.pose, "--pose");
    require_input(c.checkpoint, "--checkpoint");
    fs::create_directories(c.out);

    RunManifest manifest;
    manifest.command = "extract";
    manifest.seed = c.seed;

    std::vector<std::string> inputs{c.skeleton, c.pose, c.checkpoint};
    if (!f.config.empty()) inputs.push_back(f.config);
    manifest.input_hash = content_hash(inputs);

    PhaseTimer t;
    const Skeleton skeleton = load_skeleton_json(c.skeleton);
    skeleton.validate();
    const std::vector<Pose> frames = load_pose_frames(c.pose);
    Checkpoint ckpt = load_fsnf(c.checkpoint);
    if (ckpt.skinning.bone_count() != skeleton.bone_count()) {
        throw std::runtime_error("checkpoint has " +
                                 std::to_string(ckpt.skinning.bone_count()) +
                                 " bones, skeleton has " +
                                 std::to_string(skeleton.bone_count()));
    }
    const Aabb bbox = ckpt.bbox();
    const double load_s = t.seconds();

    SearchOptions opts = make_search_options(c, bbox, r);
    double precompute_s = 0, search_s = 0, shape_s = 0, mesh_s = 0, write_s = 0;

    for (std::size_t fi = 0; fi < frames.size(); ++fi) {
        check_frame_dof(frames[fi], fi, skeleton.dof());
        const std::vector<RigidTransform> bones = forward_kinematics(skeleton, frames[fi]);
        const VectorXd p = pose_vec(frames[fi]);

        TransformGrid tgrid;
        SearchContext ctx;
        ctx.bones = bones;
        ctx.mlp = &ckpt.skinning;
        if (opts.variant == SearchVariant::Voxel) {
            t.restart();
            tgrid = precompute_transform_grid(ckpt.grid, bones, c.workers);
            precompute_s += t.seconds();
            ctx.grid = &ckpt.grid;
            ctx.tgrid = &tgrid;
        }

        // Posed sampling box: the blend is convex over per-bone images of the
        // canonical box, so the union of transformed corners bounds the body.
        Aabb mesh_box = Aabb::empty();
        for (const RigidTransform& b : bones) {
            for (int corner = 0; corner < 8; ++corner) {
                const Vec3 extent = bbox.extent();
                const Vec3 x = bbox.min + Vec3((corner & 1) ? extent.x() : 0.0,
                                               (corner & 2) ? extent.y() : 0.0,
                                               (corner & 4) ? extent.z() : 0.0);
                mesh_box.expand(b.apply(x));
            }
        }
        mesh_box = mesh_box.padded(0.05 * mesh_box.diagonal());

        const VectorXd p_net = ckpt.occupancy.pose_width() > 0 ? p : VectorXd();
        const BatchField field = [&](std::span<const Vec3> xs, std::span<double> out) {
            PhaseTimer inner;
            const std::vector<CorrespondenceSet> sets =
                batch_search(xs, ctx, opts, c.workers);
            search_s += inner.seconds();
            inner.restart();
            const VectorXd occ = posed_occupancy_batch(sets, ckpt.occupancy, p_net);
            for (std::size_t i = 0; i < out.size(); ++i) out[i] = occ[Eigen::Index(i)];
            shape_s += inner.seconds();
        };

        t.restart();
        const TriMesh mesh = extract_mesh(field, mesh_box, resolution);
        mesh_s += t.seconds();

        t.restart();
        save_obj(mesh, (fs::path(c.out) / frame_name("mesh", fi, ".obj")).string());
        save_ply(mesh, (fs::path(c.out) / frame_name("mesh", fi, ".ply")).string());
        write_s += t.seconds();
        std::cout << "frame " << fi << ": " << mesh.vertices.size() << " vertices, "
                  << mesh.triangles.size() << " triangles\n";
    }

    manifest.config = r.snapshot();
    manifest.add_phase("load", load_s);
    manifest.add_phase("precompute", precompute_s);
    manifest.add_phase("search", search_s);
    manifest.add_phase("shape-query", shape_s);
    manifest.add_phase("mesh-topology", std::max(0.0, mesh_s - search_s - shape_s));
    manifest.add_phase("write", write_s);
    write_manifest(manifest, c.out);
    return 0;
}

// ---------------------------------------------------------------------------
// ablate

int cmd_ablate(const CommonFlags& f) {
    Resolver r(f.config);
    CommonOpts c = resolve_common(r, f);
    const std::string val_pose = r.str(nullptr, "", "val_pose", "");
    TrainConfig base_cfg = resolve_train_config(r, c);
    std::vector<std::string> dim_strs = r.list(f.o_dims, f.grid_dims_multi, "grid_dims",
                                               {"16,16,4", "32,32,8", "64,64,16"}, ';');
    r.reject_unknown();
    require_input(c.skeleton, "--skeleton");
    require_input(c.pose, "--pose");
    fs::create_directories(c.out);

    std::vector<GridDims> dims_list;
    for (const std::string& d : dim_strs) dims_list.push_back(parse_dims("--grid-dims", d));

    RunManifest manifest;
    manifest.command = "ablate";
    manifest.seed = c.seed;

    std::vector<std::string> inputs{c.skeleton, c.pose};
    PhaseTimer t;
    const Skeleton skeleton = load_skeleton_json(c.skeleton);
    skeleton.validate();
    const CapsuleBody body = CapsuleBody::from_skeleton(skeleton);
    const std::vector<Pose> train_poses = load_pose_frames(c.pose);
    std::vector<Pose> val_poses;
    if (!val_pose.empty()) {
        require_input(val_pose, "val_pose");
        inputs.push_back(val_pose);
        val_poses = load_pose_frames(val_pose);
    }
    if (!f.config.empty()) inputs.push_back(f.config);
    manifest.input_hash = content_hash(inputs);
    const double load_s = t.seconds();

    struct AblRow {
        GridDims dims;
        double final_iou = 0, final_loss = 0, seconds = 0;
    };
    std::vector<AblRow> rows;
    double train_s = 0;
    for (const GridDims& dims : dims_list) {
        TrainConfig cfg = base_cfg;
        cfg.distill_dims = dims;
        t.restart();
        const TrainResult result = train(cfg, body, skeleton, train_poses, val_poses);
        AblRow row;
        row.dims = dims;
        row.seconds = t.seconds();
        train_s += row.seconds;
        if (!result.metrics.empty()) {
            row.final_iou = result.metrics.back().val_iou;
            row.final_loss = result.metrics.back().mean_loss;
        }
        rows.push_back(row);
        std::printf("dims %dx%dx%d: final val IoU %.4f, loss %.5f, %.1f s\n", dims.nx,
                    dims.ny, dims.nz, row.final_iou, row.final_loss, row.seconds);
    }

    t.restart();
    const std::string csv_path = (fs::path(c.out) / "ablation.csv").string();
    std::FILE* fp = std::fopen(csv_path.c_str(), "w");
    if (!fp) throw std::runtime_error("cannot write ablation CSV: " + csv_path);
    std::fprintf(fp, "nx,ny,nz,final_val_iou,final_mean_loss,train_seconds\n");
    for (const AblRow& row : rows) {
        std::fprintf(fp, "%d,%d,%d,%.17g,%.17g,%.6g\n", row.dims.nx, row.dims.ny,
                     row.dims.nz, row.final_iou, row.final_loss, row.seconds);
    }
    std::fclose(fp);
    const double write_s = t.seconds();

    manifest.config = r.snapshot();
    manifest.add_phase("load", load_s);
    manifest.add_phase("train", train_s);
    manifest.add_phase("write", write_s);
    write_manifest(manifest, c.out);
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"articulated correspondence search, training, and meshing toolkit"};
    app.require_subcommand(1);

    CommonFlags deform_f, train_f, bench_f, extract_f, ablate_f;
    int resolution_flag = 64;

    CLI::App* deform = app.add_subcommand(
        "deform", "solve canonical correspondences and posed occupancy for query points");
    deform_f.add(deform);
    CLI::App* train_cmd =
        app.add_subcommand("train", "fit occupancy and skinning nets to a capsule body");
    train_f.add(train_cmd);
    CLI::App* bench =
        app.add_subcommand("bench", "time the search variants and report throughput");
    bench_f.add(bench, /*multi_dims=*/true, /*multi_variant=*/true);
    std::vector<std::string> bench_queries;
    const CLI::Option* o_queries =
        bench->add_option("--queries", bench_queries, "query count (repeatable)");
    CLI::App* extract =
        app.add_subcommand("extract", "mesh the posed surface of a trained model");
    extract_f.add(extract);
    const CLI::Option* o_resolution =
        extract->add_option("--resolution", resolution_flag, "marching cubes resolution");
    CLI::App* ablate = app.add_subcommand(
        "ablate", "train across several voxel resolutions and compare validation IoU");
    ablate_f.add(ablate, /*multi_dims=*/true);

    CLI11_PARSE(app, argc, argv);

    try {
        if (app.got_subcommand(deform)) return cmd_deform(deform_f);
        if (app.got_subcommand(train_cmd)) return cmd_train(train_f);
        if (app.got_subcommand(bench)) return cmd_bench(bench_f, bench_queries, o_queries);
        if (app.got_subcommand(extract)) return cmd_extract(extract_f, resolution_flag, o_resolution);
        if (app.got_subcommand(ablate)) return cmd_ablate(ablate_f);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
