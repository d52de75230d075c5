#include "fskin/shape.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <unordered_map>

#include "mc_tables.hpp"

namespace fskin {

CapsuleBody::CapsuleBody(std::vector<Capsule> capsules) : capsules_(std::move(capsules)) {
    for (const Capsule& c : capsules_) {
        if (!(c.radius > 0.0)) throw std::invalid_argument("capsule body: radius must be > 0");
    }
}

CapsuleBody CapsuleBody::from_skeleton(const Skeleton& skeleton) {
    std::vector<Capsule> caps;
    caps.reserve(skeleton.bone_count());
    for (int i = 0; i < skeleton.bone_count(); ++i) {
        const auto [head, tip] = skeleton.bone_segment(i);
        Capsule c;
        c.a = head;
        c.b = tip;
        c.radius = skeleton.bones[i].radius;
        c.radius_pose_coeff = skeleton.bones[i].radius_pose_coeff;
        c.bone = i;
        caps.push_back(c);
    }
    return CapsuleBody(std::move(caps));
}

double CapsuleBody::effective_radius(const Capsule& c, const VectorXd& pose_angles) const {
    if (c.radius_pose_coeff == 0.0 || pose_angles.size() == 0) return c.radius;
    const double r = c.radius * (1.0 + c.radius_pose_coeff * pose_angles.mean());
    return std::max(r, 0.01 * c.radius);
}

double CapsuleBody::signed_distance(const Vec3& x, const VectorXd& pose_angles) const {
    double best = std::numeric_limits<double>::infinity();
    for (const Capsule& c : capsules_) {
        const double d = point_segment_distance(x, c.a, c.b) - effective_radius(c, pose_angles);
        best = std::min(best, d);
    }
    return best;
}

int CapsuleBody::occupancy(const Vec3& x) const {
    return occupancy(x, VectorXd());
}

int CapsuleBody::occupancy(const Vec3& x, const VectorXd& pose_angles) const {
    return signed_distance(x, pose_angles) <= 0.0 ? 1 : 0;
}

double CapsuleBody::posed_signed_distance(const Vec3& x_prime,
                                          std::span<const RigidTransform> bones,
                                          const VectorXd& pose_angles) const {
    double best = std::numeric_limits<double>::infinity();
    for (const Capsule& c : capsules_) {
        const RigidTransform& t = bones[c.bone];
        const double d = point_segment_distance(x_prime, t.apply(c.a), t.apply(c.b)) -
                         effective_radius(c, pose_angles);
        best = std::min(best, d);
    }
    return best;
}

int CapsuleBody::posed_occupancy(const Vec3& x_prime, std::span<const RigidTransform> bones,
                                 const VectorXd& pose_angles) const {
    return posed_signed_distance(x_prime, bones, pose_angles) <= 0.0 ? 1 : 0;
}

int CapsuleBody::nearest_bone(const Vec3& x) const {
    int best = -1;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < capsules_.size(); ++i) {
        const Capsule& c = capsules_[i];
        const double d = point_segment_distance(x, c.a, c.b) - c.radius;
        if (d < best_d) {
            best_d = d;
            best = static_cast<int>(i);
        }
    }
    return best;
}

namespace {

void expand_capsule(Aabb& box, const Vec3& a, const Vec3& b, double r) {
    const Vec3 pad = Vec3::Constant(r);
    box.expand(a - pad);
    box.expand(a + pad);
    box.expand(b - pad);
    box.expand(b + pad);
}

}  // namespace

Aabb CapsuleBody::canonical_bounds(double pad) const {
    Aabb box = Aabb::empty();
    for (const Capsule& c : capsules_) expand_capsule(box, c.a, c.b, c.radius + pad);
    return box;
}

Aabb CapsuleBody::posed_bounds(std::span<const RigidTransform> bones,
                               const VectorXd& pose_angles, double pad) const {
    Aabb box = Aabb::empty();
    for (const Capsule& c : capsules_) {
        const RigidTransform& t = bones[c.bone];
        expand_capsule(box, t.apply(c.a), t.apply(c.b),
                       effective_radius(c, pose_angles) + pad);
    }
    return box;
}

namespace {

Vec3 unit_sphere_sample(std::mt19937_64& rng) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    Vec3 d;
    do {
        d = Vec3(gauss(rng), gauss(rng), gauss(rng));
    } while (d.norm() < 1e-12);
    return d.normalized();
}

}  // namespace

Vec3 CapsuleBody::sample_surface(std::mt19937_64& rng, const VectorXd& pose_angles,
                                 int* capsule_index) const {
    constexpr double kPi = 3.14159265358979323846;
    std::vector<double> area(capsules_.size());
    double total = 0.0;
    for (std::size_t i = 0; i < capsules_.size(); ++i) {
        const Capsule& c = capsules_[i];
        const double r = effective_radius(c, pose_angles);
        const double len = (c.b - c.a).norm();
        area[i] = 2.0 * kPi * r * len + 4.0 * kPi * r * r;
        total += area[i];
    }
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    double pick = uni(rng) * total;
    std::size_t ci = 0;
    while (ci + 1 < capsules_.size() && pick > area[ci]) {
        pick -= area[ci];
        ++ci;
    }
    if (capsule_index) *capsule_index = static_cast<int>(ci);

    const Capsule& c = capsules_[ci];
    const double r = effective_radius(c, pose_angles);
    const double len = (c.b - c.a).norm();
    const double side_area = 2.0 * kPi * r * len;
    const double cap_area = 4.0 * kPi * r * r;
    if (uni(rng) * (side_area + cap_area) < side_area && len > 1e-12) {
        const Vec3 axis = (c.b - c.a) / len;
        // Deterministic frame orthogonal to the axis.
        const Vec3 ref = std::abs(axis.x()) < 0.9 ? Vec3(1, 0, 0) : Vec3(0, 1, 0);
        const Vec3 u = axis.cross(ref).normalized();
        const Vec3 v = axis.cross(u);
        const double t = uni(rng);
        const double phi = 2.0 * kPi * uni(rng);
        return c.a + t * (c.b - c.a) + r * (std::cos(phi) * u + std::sin(phi) * v);
    }
    // Spherical caps: hemisphere picked by the direction's axial component.
    const Vec3 dir = unit_sphere_sample(rng);
    const Vec3 axis = len > 1e-12 ? Vec3((c.b - c.a) / len) : Vec3(0, 0, 1);
    const Vec3 center = dir.dot(axis) >= 0.0 ? c.b : c.a;
    return center + r * dir;
}

Vec3 CapsuleBody::sample_surface(std::mt19937_64& rng, int* capsule_index) const {
    return sample_surface(rng, VectorXd(), capsule_index);
}

OccupancyMlp::OccupancyMlp(int n_pose, std::uint64_t seed)
    : net_({3 + n_pose, 128, 128, 128, 1}, seed) {
    if (n_pose < 0) throw std::invalid_argument("occupancy mlp: negative pose width");
}

OccupancyMlp::OccupancyMlp(int n_pose, std::uint64_t seed, const Aabb& domain)
    : OccupancyMlp(n_pose, seed) {
    net_.condition_input(0.5 * (domain.min + domain.max), 0.5 * domain.extent());
}

OccupancyMlp::OccupancyMlp(Mlp net) : net_(std::move(net)) {
    if (net_.input_width() < 3 || net_.output_width() != 1) {
        throw std::invalid_argument("occupancy mlp: expected input >= 3, scalar output");
    }
}

void OccupancyMlp::check_pose(const VectorXd& p) const {
    if (p.size() != pose_width()) {
        throw std::invalid_argument("occupancy mlp: pose vector length " +
                                    std::to_string(p.size()) + ", field conditioned on " +
                                    std::to_string(pose_width()));
    }
}

double OccupancyMlp::occupancy(const Vec3& x, const VectorXd& p) const {
    check_pose(p);
    VectorXd in(3 + p.size());
    in.head<3>() = x;
    in.tail(p.size()) = p;
    const MatrixXd logit = net_.forward(in);
    return sigmoid(logit(0, 0));
}

double OccupancyMlp::occupancy(const Vec3& x) const {
    return occupancy(x, VectorXd());
}

VectorXd OccupancyMlp::occupancy_batch(const MatrixXd& X, const VectorXd& p) const {
    check_pose(p);
    if (X.rows() != 3) throw std::invalid_argument("occupancy mlp: expected 3-row point batch");
    MatrixXd in(3 + p.size(), X.cols());
    in.topRows(3) = X;
    if (p.size() > 0) in.bottomRows(p.size()).colwise() = p;
    const MatrixXd logits = net_.forward(in);
    VectorXd out(X.cols());
    for (Eigen::Index i = 0; i < X.cols(); ++i) out[i] = sigmoid(logits(0, i));
    return out;
}

double posed_occupancy(const CorrespondenceSet& corr,
                       const std::function<double(const Vec3&)>& canonical_occupancy) {
    double best = 0.0;
    for (const Root& r : corr.roots) best = std::max(best, canonical_occupancy(r.x));
    return best;
}

double posed_occupancy(const CorrespondenceSet& corr, const OccupancyMlp& field,
                       const VectorXd& p) {
    return posed_occupancy(corr, [&](const Vec3& x) { return field.occupancy(x, p); });
}

VectorXd posed_occupancy_batch(std::span<const CorrespondenceSet> sets,
                               const OccupancyMlp& field, const VectorXd& p,
                               std::vector<int>* argmax) {
    std::size_t total = 0;
    for (const auto& s : sets) total += s.roots.size();
    VectorXd pred = VectorXd::Zero(Eigen::Index(sets.size()));
    if (argmax) argmax->assign(sets.size(), -1);
    if (total == 0) return pred;

    MatrixXd X(3, Eigen::Index(total));
    Eigen::Index col = 0;
    for (const auto& s : sets) {
        for (const Root& r : s.roots) X.col(col++) = r.x;
    }
    const VectorXd occ = field.occupancy_batch(X, p);
    col = 0;
    for (std::size_t q = 0; q < sets.size(); ++q) {
        bool first = true;
        for (std::size_t r = 0; r < sets[q].roots.size(); ++r, ++col) {
            if (first || occ[col] > pred[Eigen::Index(q)]) {
                pred[Eigen::Index(q)] = occ[col];
                if (argmax) (*argmax)[q] = int(r);
                first = false;
            }
        }
    }
    return pred;
}

double TriMesh::surface_area() const {
    double area = 0.0;
    for (const auto& t : triangles) {
        const Vec3& a = vertices[t[0]];
        const Vec3& b = vertices[t[1]];
        const Vec3& c = vertices[t[2]];
        area += 0.5 * (b - a).cross(c - a).norm();
    }
    return area;
}

double TriMesh::signed_volume() const {
    double vol = 0.0;
    for (const auto& t : triangles) {
        const Vec3& a = vertices[t[0]];
        const Vec3& b = vertices[t[1]];
        const Vec3& c = vertices[t[2]];
        vol += a.dot(b.cross(c)) / 6.0;
    }
    return vol;
}

namespace {

struct McSampler {
    int n;  // cells per axis; n+1 samples
    Aabb bbox;
    Vec3 step;

    std::int64_t sample_index(int i, int j, int k) const {
        return (std::int64_t(k) * (n + 1) + j) * (n + 1) + i;
    }
    Vec3 position(int i, int j, int k) const {
        return bbox.min + Vec3(i * step.x(), j * step.y(), k * step.z());
    }
};

}  // namespace

TriMesh extract_mesh(const BatchField& field, const Aabb& bbox, int resolution, double iso) {
    if (resolution < 16) throw std::invalid_argument("extract_mesh: resolution must be >= 16");
    if (!(bbox.extent().minCoeff() > 0.0)) {
        throw std::invalid_argument("extract_mesh: bbox must have positive extent");
    }

    McSampler s;
    s.n = resolution;
    s.bbox = bbox;
    s.step = bbox.extent() / resolution;

    const std::int64_t n_samples =
        std::int64_t(resolution + 1) * (resolution + 1) * (resolution + 1);
    std::vector<double> values(static_cast<std::size_t>(n_samples));

    constexpr std::int64_t kChunk = 65536;
    std::vector<Vec3> pts;
    pts.reserve(std::size_t(std::min(kChunk, n_samples)));
    for (std::int64_t start = 0; start < n_samples; start += kChunk) {
        const std::int64_t count = std::min(kChunk, n_samples - start);
        pts.clear();
        for (std::int64_t f = start; f < start + count; ++f) {
            const int i = int(f % (resolution + 1));
            const int j = int((f / (resolution + 1)) % (resolution + 1));
            const int k = int(f / ((resolution + 1) * std::int64_t(resolution + 1)));
            pts.push_back(s.position(i, j, k));
        }
        field(pts, {values.data() + start, std::size_t(count)});
    }

    TriMesh mesh;
    // Shared vertex per crossed grid edge; key = sample index of the lower
    // corner * 3 + axis. First-encounter order in the fixed cell sweep makes
    // vertex ids deterministic.
    std::unordered_map<std::int64_t, int> edge_vertex;

    auto vertex_on_edge = [&](int ia, int ja, int ka, int ib, int jb, int kb) -> int {
        int axis;
        if (ia != ib) axis = 0;
        else if (ja != jb) axis = 1;
        else axis = 2;
        // Lower corner along the differing axis.
        if (ib < ia || jb < ja || kb < ka) {
            std::swap(ia, ib);
            std::swap(ja, jb);
            std::swap(ka, kb);
        }
        const std::int64_t key = s.sample_index(ia, ja, ka) * 3 + axis;
        auto it = edge_vertex.find(key);
        if (it != edge_vertex.end()) return it->second;

        const double va = values[std::size_t(s.sample_index(ia, ja, ka))];
        const double vb = values[std::size_t(s.sample_index(ib, jb, kb))];
        double t = 0.5;
        if (std::abs(vb - va) > 1e-300) t = (iso - va) / (vb - va);
        t = std::clamp(t, 0.0, 1.0);
        const Vec3 pa = s.position(ia, ja, ka);
        const Vec3 pb = s.position(ib, jb, kb);
        const int id = int(mesh.vertices.size());
        mesh.vertices.push_back(pa + t * (pb - pa));
        edge_vertex.emplace(key, id);
        return id;
    };

    for (int k = 0; k < resolution; ++k) {
        for (int j = 0; j < resolution; ++j) {
            for (int i = 0; i < resolution; ++i) {
                int cube = 0;
                for (int c = 0; c < 8; ++c) {
                    const auto& o = detail::kCornerOffset[c];
                    if (values[std::size_t(s.sample_index(i + o[0], j + o[1], k + o[2]))] <
                        iso) {
                        cube |= 1 << c;
                    }
                }
                const signed char* row = detail::kTriTable[cube];
                for (int t = 0; row[t] >= 0; t += 3) {
                    int ids[3];
                    for (int e = 0; e < 3; ++e) {
                        const int edge = row[t + e];
                        const auto& ca = detail::kCornerOffset[detail::kEdgeCorner[edge][0]];
                        const auto& cb = detail::kCornerOffset[detail::kEdgeCorner[edge][1]];
                        ids[e] = vertex_on_edge(i + ca[0], j + ca[1], k + ca[2],
                                                i + cb[0], j + cb[1], k + cb[2]);
                    }
                    // A corner sample exactly at iso can collapse a triangle.
                    if (ids[0] != ids[1] && ids[1] != ids[2] && ids[0] != ids[2]) {
                        mesh.triangles.push_back({ids[0], ids[1], ids[2]});
                    }
                }
            }
        }
    }
    return mesh;
}

TriMesh extract_mesh(const std::function<double(const Vec3&)>& field, const Aabb& bbox,
                     int resolution, double iso) {
    return extract_mesh(
        BatchField([&](std::span<const Vec3> pts, std::span<double> out) {
            for (std::size_t i = 0; i < pts.size(); ++i) out[i] = field(pts[i]);
        }),
        bbox, resolution, iso);
}

void save_obj(const TriMesh& mesh, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error(path + ": cannot open for writing");
    f.precision(9);
    for (const Vec3& v : mesh.vertices) {
        f << "v " << v.x() << ' ' << v.y() << ' ' << v.z() << '\n';
    }
    for (const auto& t : mesh.triangles) {
        f << "f " << t[0] + 1 << ' ' << t[1] + 1 << ' ' << t[2] + 1 << '\n';
    }
    if (!f) throw std::runtime_error(path + ": write failed");
}

void save_ply(const TriMesh& mesh, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error(path + ": cannot open for writing");
    f << "ply\nformat binary_little_endian 1.0\n"
      << "element vertex " << mesh.vertices.size() << "\n"
      << "property float x\nproperty float y\nproperty float z\n"
      << "element face " << mesh.triangles.size() << "\n"
      << "property list uchar int vertex_indices\nend_header\n";
    for (const Vec3& v : mesh.vertices) {
        const float xyz[3] = {float(v.x()), float(v.y()), float(v.z())};
        f.write(reinterpret_cast<const char*>(xyz), sizeof(xyz));
    }
    for (const auto& t : mesh.triangles) {
        const std::uint8_t n = 3;
        const std::int32_t idx[3] = {t[0], t[1], t[2]};
        f.write(reinterpret_cast<const char*>(&n), 1);
        f.write(reinterpret_cast<const char*>(idx), sizeof(idx));
    }
    if (!f) throw std::runtime_error(path + ": write failed");
}

}  // namespace fskin
