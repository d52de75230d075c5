#include "fskin/skeleton.hpp"

#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace fskin {

namespace {

Vec3 fallback_direction(const Vec3& axis) {
    // Any unit vector orthogonal to the rotation axis, picked deterministically.
    Vec3 a = axis.normalized();
    Vec3 d = Vec3::UnitX() - a.x() * a;
    if (d.norm() < 1e-6) d = Vec3::UnitY() - a.y() * a;
    return d.normalized();
}

}  // namespace

void Skeleton::validate() const {
    const int n = bone_count();
    if (n < 1) throw std::invalid_argument("Skeleton: at least one bone required");
    for (int i = 0; i < n; ++i) {
        const Bone& b = bones[i];
        if (b.parent >= n || b.parent == i) {
            throw std::invalid_argument("Skeleton: bone " + std::to_string(i) + " has invalid parent");
        }
        if (b.axis.norm() < 1e-12) {
            throw std::invalid_argument("Skeleton: bone " + std::to_string(i) + " has degenerate axis");
        }
        if (!(b.length > 0.0)) {
            throw std::invalid_argument("Skeleton: bone " + std::to_string(i) + " has non-positive length");
        }
        // Walk to the root; revisiting i means a cycle.
        int p = b.parent, steps = 0;
        while (p >= 0) {
            if (p == i || ++steps > n) {
                throw std::invalid_argument("Skeleton: parent indices contain a cycle");
            }
            p = bones[p].parent;
        }
    }
}

std::pair<Vec3, Vec3> Skeleton::bone_segment(int i) const {
    const Bone& b = bones.at(i);
    Vec3 dir;
    int child = -1;
    for (int c = 0; c < bone_count(); ++c) {
        if (bones[c].parent == i) { child = c; break; }
    }
    if (child >= 0 && (bones[child].joint - b.joint).norm() > 1e-9) {
        dir = (bones[child].joint - b.joint).normalized();
    } else if (b.parent >= 0 && (b.joint - bones[b.parent].joint).norm() > 1e-9) {
        dir = (b.joint - bones[b.parent].joint).normalized();
    } else {
        dir = fallback_direction(b.axis);
    }
    return {b.joint, b.joint + b.length * dir};
}

std::vector<RigidTransform> forward_kinematics(const Skeleton& skeleton, const Pose& pose) {
    skeleton.validate();
    const int n = skeleton.bone_count();
    if (pose.dof() != n) {
        throw std::invalid_argument("forward_kinematics: pose has " + std::to_string(pose.dof()) +
                                    " angles, skeleton expects " + std::to_string(n));
    }
    std::vector<RigidTransform> world(n);
    std::vector<char> done(n, 0);
    // Bones may reference parents at any index; resolve each chain on demand.
    auto resolve = [&](auto&& self, int i) -> const RigidTransform& {
        if (!done[i]) {
            const Bone& b = skeleton.bones[i];
            RigidTransform local =
                RigidTransform::about_axis(b.joint, b.axis, pose.joint_angles[i]);
            world[i] = (b.parent < 0) ? local : self(self, b.parent).compose(local);
            done[i] = 1;
        }
        return world[i];
    };
    for (int i = 0; i < n; ++i) resolve(resolve, i);
    return world;
}

namespace {

Vec3 parse_vec3(const nlohmann::json& j, const std::string& ctx) {
    if (!j.is_array() || j.size() != 3) {
        throw std::runtime_error(ctx + ": expected an array of 3 numbers");
    }
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

}  // namespace

Skeleton load_skeleton_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open skeleton file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
    if (!j.contains("bones") || !j["bones"].is_array()) {
        throw std::runtime_error(path + ": missing \"bones\" array");
    }
    Skeleton s;
    int idx = 0;
    for (const auto& jb : j["bones"]) {
        const std::string ctx = path + ": bones[" + std::to_string(idx) + "]";
        Bone b;
        if (!jb.contains("name") || !jb.contains("joint") || !jb.contains("axis") ||
            !jb.contains("length")) {
            throw std::runtime_error(ctx + ": requires name, parent, joint, axis, length");
        }
        b.name = jb["name"].get<std::string>();
        if (jb.contains("parent") && !jb["parent"].is_null()) {
            b.parent = jb["parent"].get<int>();
        }
        b.joint = parse_vec3(jb["joint"], ctx + ".joint");
        b.axis = parse_vec3(jb["axis"], ctx + ".axis");
        b.length = jb["length"].get<double>();
        if (jb.contains("radius")) b.radius = jb["radius"].get<double>();
        if (jb.contains("radius_pose_coeff")) {
            b.radius_pose_coeff = jb["radius_pose_coeff"].get<double>();
        }
        s.bones.push_back(std::move(b));
        ++idx;
    }
    s.validate();
    return s;
}

void save_skeleton_json(const Skeleton& skeleton, const std::string& path) {
    nlohmann::json j;
    j["bones"] = nlohmann::json::array();
    for (const Bone& b : skeleton.bones) {
        nlohmann::json jb;
        jb["name"] = b.name;
        if (b.parent >= 0) jb["parent"] = b.parent; else jb["parent"] = nullptr;
        jb["joint"] = {b.joint.x(), b.joint.y(), b.joint.z()};
        jb["axis"] = {b.axis.x(), b.axis.y(), b.axis.z()};
        jb["length"] = b.length;
        jb["radius"] = b.radius;
        if (b.radius_pose_coeff != 0.0) jb["radius_pose_coeff"] = b.radius_pose_coeff;
        j["bones"].push_back(std::move(jb));
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write skeleton file: " + path);
    out << j.dump(2) << "\n";
}

std::vector<Pose> load_pose_frames(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open pose file: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw std::runtime_error(path + ": " + e.what());
    }
    if (!j.is_array()) throw std::runtime_error(path + ": expected an array of angle vectors");
    std::vector<Pose> frames;
    for (size_t f = 0; f < j.size(); ++f) {
        if (!j[f].is_array()) {
            throw std::runtime_error(path + ": frame " + std::to_string(f) + " is not an array");
        }
        Pose p;
        for (const auto& v : j[f]) p.joint_angles.push_back(v.get<double>());
        frames.push_back(std::move(p));
    }
    return frames;
}

void save_pose_frames(const std::vector<Pose>& frames, const std::string& path) {
    nlohmann::json j = nlohmann::json::array();
    for (const Pose& p : frames) j.push_back(p.joint_angles);
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write pose file: " + path);
    out << j.dump() << "\n";
}

}  // namespace fskin
