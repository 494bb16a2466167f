// Copyright Contributors to the artsplat Project
// SPDX-License-Identifier: Apache-2.0
//
#include "artsplat/synthetic.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <random>
#include <sstream>

namespace artsplat {

void SyntheticSpec::validate() const {
    if (gaussiansPerBone <= 0 || verticesPerBone <= 0 || frames <= 0 || width <= 0 || height <= 0 ||
        evalCameras < 0 || !(cameraDistance > 0) || focal < 0) {
        throw std::invalid_argument("synthetic spec: counts, resolution and camera distance must be positive");
    }
    if (!(amplitude >= 0) || amplitude >= std::numbers::pi / 2) {
        throw std::invalid_argument("synthetic spec: amplitude must be in [0, pi/2)");
    }
    if (!(noise >= 0) || !std::isfinite(turn)) {
        throw std::invalid_argument("synthetic spec: noise must be non-negative and turn finite");
    }
    makeSkeleton(preset);
}

namespace {

std::string trimmed(const std::string &s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) {
        return {};
    }
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::string fmt(double v) {
    std::ostringstream ss;
    ss.precision(17);
    ss << v;
    return ss.str();
}

} // namespace

SyntheticSpec parseSyntheticSpec(const std::string &text, const fs::path &origin) {
    SyntheticSpec s;
    std::istringstream in(text);
    std::string line;
    std::size_t offset = 0;
    while (std::getline(in, line)) {
        const std::size_t lineOffset = offset;
        offset += line.size() + 1;
        const std::string body = trimmed(line.substr(0, line.find('#')));
        if (body.empty()) {
            continue;
        }
        const auto eq = body.find('=');
        if (eq == std::string::npos) {
            throw DataError(origin, "expected key = value", lineOffset);
        }
        const std::string key = trimmed(body.substr(0, eq));
        const std::string value = trimmed(body.substr(eq + 1));
        try {
            std::size_t used = 0;
            auto num = [&] {
                const double v = std::stod(value, &used);
                if (used != value.size()) {
                    throw std::invalid_argument("not a number");
                }
                return v;
            };
            auto integer = [&] {
                const long long v = std::stoll(value, &used);
                if (used != value.size()) {
                    throw std::invalid_argument("not an integer");
                }
                return v;
            };
            if (key == "preset") {
                s.preset = value;
            } else if (key == "gaussians_per_bone") {
                s.gaussiansPerBone = int(integer());
            } else if (key == "vertices_per_bone") {
                s.verticesPerBone = int(integer());
            } else if (key == "frames") {
                s.frames = int(integer());
            } else if (key == "width") {
                s.width = int(integer());
            } else if (key == "height") {
                s.height = int(integer());
            } else if (key == "amplitude") {
                s.amplitude = num();
            } else if (key == "turn") {
                s.turn = num();
            } else if (key == "noise") {
                s.noise = num();
            } else if (key == "seed") {
                s.seed = std::uint64_t(integer());
            } else if (key == "eval_cameras") {
                s.evalCameras = int(integer());
            } else if (key == "camera_distance") {
                s.cameraDistance = num();
            } else if (key == "focal") {
                s.focal = num();
            } else {
                throw DataError(origin, "unknown key '" + key + "'", lineOffset);
            }
        } catch (const DataError &) {
            throw;
        } catch (const std::exception &e) {
            throw DataError(origin, key + ": " + e.what(), lineOffset);
        }
    }
    try {
        s.validate();
    } catch (const std::invalid_argument &e) {
        throw DataError(origin, e.what());
    }
    return s;
}

std::string formatSyntheticSpec(const SyntheticSpec &s) {
    return "preset = " + s.preset + "\ngaussians_per_bone = " + std::to_string(s.gaussiansPerBone) +
           "\nvertices_per_bone = " + std::to_string(s.verticesPerBone) + "\nframes = " + std::to_string(s.frames) +
           "\nwidth = " + std::to_string(s.width) + "\nheight = " + std::to_string(s.height) +
           "\namplitude = " + fmt(s.amplitude) + "\nturn = " + fmt(s.turn) + "\nnoise = " + fmt(s.noise) +
           "\nseed = " + std::to_string(s.seed) + "\neval_cameras = " + std::to_string(s.evalCameras) +
           "\ncamera_distance = " + fmt(s.cameraDistance) + "\nfocal = " + fmt(s.focal) + "\n";
}

Skeleton makeSkeleton(const std::string &preset) {
    Skeleton s;
    auto addJoint = [&](int parent, double x, double y, double z) {
        s.parents.push_back(parent);
        const Eigen::Index n = s.joints.rows();
        s.joints.conservativeResize(n + 1, 3);
        s.joints.row(n) << x, y, z;
        return int(n);
    };
    auto joint = [&](int j) -> Eigen::Vector3d { return s.joints.row(j).transpose(); };
    auto bone = [&](int owner, const Eigen::Vector3d &a, const Eigen::Vector3d &b, double r) {
        s.bones.push_back(Bone{owner, a, b, r});
    };

    if (preset == "biped-15") {
        // y up, facing +z. The spine has two segments: pelvis -> spine -> head.
        const int pelvis = addJoint(-1, 0, 0.95, 0);
        const int spine = addJoint(pelvis, 0, 1.2, 0);
        const int head = addJoint(spine, 0, 1.5, 0);
        bone(pelvis, joint(pelvis), joint(spine), 0.13);
        bone(spine, joint(spine), joint(head), 0.12);
        bone(head, joint(head), joint(head) + Eigen::Vector3d(0, 0.25, 0), 0.09);
        for (double side : {1.0, -1.0}) {
            const int hip = addJoint(pelvis, 0.1 * side, 0.9, 0);
            const int knee = addJoint(hip, 0.1 * side, 0.5, 0);
            const int ankle = addJoint(knee, 0.1 * side, 0.1, 0);
            bone(pelvis, joint(pelvis), joint(hip), 0.07);
            bone(hip, joint(hip), joint(knee), 0.065);
            bone(knee, joint(knee), joint(ankle), 0.05);
            bone(ankle, joint(ankle), joint(ankle) + Eigen::Vector3d(0, -0.05, 0.16), 0.04);
        }
        for (double side : {1.0, -1.0}) {
            const int shoulder = addJoint(spine, 0.18 * side, 1.42, 0);
            const int elbow = addJoint(shoulder, 0.45 * side, 1.42, 0);
            const int wrist = addJoint(elbow, 0.7 * side, 1.42, 0);
            bone(spine, joint(spine), joint(shoulder), 0.06);
            bone(shoulder, joint(shoulder), joint(elbow), 0.045);
            bone(elbow, joint(elbow), joint(wrist), 0.04);
            bone(wrist, joint(wrist), joint(wrist) + Eigen::Vector3d(0.14 * side, 0, 0), 0.035);
        }
        return s;
    }
    if (preset.rfind("chain-", 0) == 0) {
        int n = 0;
        try {
            std::size_t used = 0;
            n = std::stoi(preset.substr(6), &used);
            if (used != preset.size() - 6) {
                n = 0;
            }
        } catch (const std::exception &) {
            n = 0;
        }
        if (n < 1 || n > 64) {
            throw std::invalid_argument("skeleton preset '" + preset + "': chain length must be in [1, 64]");
        }
        constexpr double kLink = 0.3;
        for (int j = 0; j < n; ++j) {
            addJoint(j - 1, 0, kLink * j, 0);
        }
        for (int j = 0; j < n; ++j) {
            bone(j, joint(j), joint(j) + Eigen::Vector3d(0, kLink, 0), 0.06);
        }
        return s;
    }
    throw std::invalid_argument("unknown skeleton preset '" + preset + "'");
}

namespace {

/// Unit vectors u, v with (u, v, axis) right-handed.
std::pair<Eigen::Vector3d, Eigen::Vector3d> perpendicularFrame(const Eigen::Vector3d &axis) {
    Eigen::Index k;
    axis.cwiseAbs().minCoeff(&k);
    const Eigen::Vector3d u = axis.cross(Eigen::Vector3d::Unit(k)).normalized();
    const Eigen::Vector3d v = axis.cross(u);
    return {u, v};
}

} // namespace

SkinnedTemplate makeTemplate(const Skeleton &skel, int verticesPerBone) {
    const int rings = std::max(1, verticesPerBone / 6);
    const int around = verticesPerBone / rings;
    PointMatrix vertices(Eigen::Index(skel.bones.size()) * rings * around, 3);
    Eigen::Index row = 0;
    for (const Bone &b : skel.bones) {
        const Eigen::Vector3d axis = (b.to - b.from).normalized();
        const auto [u, v] = perpendicularFrame(axis);
        for (int i = 0; i < rings; ++i) {
            const double t = (i + 0.5) / rings;
            for (int a = 0; a < around; ++a) {
                const double phi = 2 * std::numbers::pi * (a + 0.5 * (i % 2)) / around;
                const Eigen::Vector3d p =
                    b.from + t * (b.to - b.from) + b.radius * (std::cos(phi) * u + std::sin(phi) * v);
                vertices.row(row++) = p.transpose();
            }
        }
    }
    const int k = int(skel.parents.size());
    RowMatrixXd weights = RowMatrixXd::Zero(vertices.rows(), k);
    for (Eigen::Index i = 0; i < vertices.rows(); ++i) {
        const Eigen::VectorXd d = (skel.joints.rowwise() - vertices.row(i)).rowwise().norm();
        if (k == 1) {
            weights(i, 0) = 1;
            continue;
        }
        Eigen::Index a = 0, b = 1;
        if (d[b] < d[a]) {
            std::swap(a, b);
        }
        for (Eigen::Index j = 2; j < k; ++j) {
            if (d[j] < d[a]) {
                b = a;
                a = j;
            } else if (d[j] < d[b]) {
                b = j;
            }
        }
        const double wa = 1 / std::max(d[a], 1e-9), wb = 1 / std::max(d[b], 1e-9);
        weights(i, a) = wa / (wa + wb);
        weights(i, b) = wb / (wa + wb);
    }
    return SkinnedTemplate(skel.parents, skel.joints, std::move(vertices), std::move(weights));
}

RenderOutput<double> renderGroundTruth(const GaussianCloudd &cloud, const SkinnedTemplate &rig, const Pose &pose,
                                       const Camerad &cam, const Eigen::Vector3d &background) {
    DeformModel plain;
    plain.useLbsOffsets = false;
    plain.usePoseRefine = false;
    const RowMatrixXd weights = skinningWeights(cloud, rig, plain);
    return renderCached(cloud, rig, weights, pose, cam, background, cloud.shDegree);
}

std::vector<TrainFrame> SyntheticScene::trainFrames() const {
    std::vector<TrainFrame> out;
    for (const auto &v : views) {
        out.push_back(v.front());
    }
    return out;
}

std::vector<TrainFrame> SyntheticScene::testFrames() const {
    std::vector<TrainFrame> out;
    for (const auto &v : views) {
        out.insert(out.end(), v.begin() + 1, v.end());
    }
    return out;
}

namespace {

double quantize8(double v) { return double(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)) / 255.0; }

GaussianCloudd placeGaussians(const Skeleton &skel, int perBone, std::mt19937_64 &rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const Eigen::Vector3d palette[] = {{0.85, 0.35, 0.30}, {0.30, 0.65, 0.85}, {0.90, 0.80, 0.35},
                                       {0.40, 0.80, 0.45}, {0.75, 0.45, 0.85}, {0.95, 0.60, 0.25},
                                       {0.35, 0.45, 0.90}, {0.80, 0.80, 0.80}};
    GaussianCloudd cloud(0);
    cloud.resize(Eigen::Index(skel.bones.size()) * perBone, 0);
    Eigen::Index row = 0;
    for (std::size_t bi = 0; bi < skel.bones.size(); ++bi) {
        const Bone &b = skel.bones[bi];
        const double length = (b.to - b.from).norm();
        const Eigen::Vector3d axis = (b.to - b.from) / length;
        const auto [u, v] = perpendicularFrame(axis);
        const double patch = std::sqrt(2 * std::numbers::pi * b.radius * length / perBone);
        const Eigen::Vector3d base = palette[bi % std::size(palette)];
        for (int g = 0; g < perBone; ++g, ++row) {
            const double t = unit(rng);
            const double phi = 2 * std::numbers::pi * unit(rng);
            const double r = b.radius * (0.75 + 0.25 * unit(rng));
            const Eigen::Vector3d normal = std::cos(phi) * u + std::sin(phi) * v;
            const Eigen::Vector3d tangent = -std::sin(phi) * u + std::cos(phi) * v;
            cloud.positions.row(row) = (b.from + t * (b.to - b.from) + r * normal).transpose();

            Eigen::Matrix3d rot;
            rot.col(0) = axis;
            rot.col(1) = tangent;
            rot.col(2) = axis.cross(tangent);
            const Eigen::Quaterniond q(rot);
            cloud.rotations.row(row) << q.w(), q.x(), q.y(), q.z();
            const double s = 0.6 * patch * (0.8 + 0.4 * unit(rng));
            cloud.logScales.row(row) << std::log(s), std::log(s * (0.8 + 0.4 * unit(rng))),
                std::log(std::max(0.25 * s, 0.006));
            cloud.rawOpacities[row] = logit(0.85 + 0.1 * unit(rng));

            const double wave = 0.12 * std::sin(4 * std::numbers::pi * t + phi) + 0.06 * std::cos(2 * phi);
            const Eigen::Vector3d color = (base.array() + wave).min(0.95).max(0.05).matrix();
            for (int c = 0; c < 3; ++c) {
                cloud.sh(row, c) = (color[c] - 0.5) / kShC0;
            }
        }
    }
    return cloud;
}

} // namespace

SyntheticScene generateSynthetic(const SyntheticSpec &spec) {
    spec.validate();
    SyntheticScene scene;
    scene.spec = spec;
    const Skeleton skel = makeSkeleton(spec.preset);
    scene.rig = makeTemplate(skel, spec.verticesPerBone);
    const int k = scene.rig.jointCount();

    std::mt19937_64 rng(spec.seed);
    scene.groundTruth = placeGaussians(skel, spec.gaussiansPerBone, rng);

    // Trajectory: per-joint sinusoid about a random axis, plus a root yaw sweep.
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<Eigen::Vector3d> axes(static_cast<std::size_t>(k));
    std::vector<double> freq(static_cast<std::size_t>(k)), phase(static_cast<std::size_t>(k));
    for (int j = 0; j < k; ++j) {
        Eigen::Vector3d a(normal(rng), normal(rng), normal(rng));
        axes[std::size_t(j)] = a.norm() > 0 ? a.normalized() : Eigen::Vector3d::UnitX();
        freq[std::size_t(j)] = 1 + double(rng() % 2);
        phase[std::size_t(j)] = 2 * std::numbers::pi * unit(rng);
    }
    std::mt19937_64 noiseRng(spec.seed ^ 0x5851f42d4c957f2dULL);
    for (int f = 0; f < spec.frames; ++f) {
        Pose p = Pose::zero(k);
        const double s = double(f) / spec.frames;
        for (int j = 0; j < k; ++j) {
            if (j == scene.rig.root()) {
                const double yaw = spec.turn * s;
                p.jointRotations.row(j) << 0, std::atan2(std::sin(yaw), std::cos(yaw)), 0;
            } else {
                const auto uj = std::size_t(j);
                p.jointRotations.row(j) =
                    (spec.amplitude * std::sin(2 * std::numbers::pi * freq[uj] * s + phase[uj]) * axes[uj]).transpose();
            }
        }
        Pose noisy = p;
        if (spec.noise > 0) {
            for (int j = 0; j < k; ++j) {
                if (j != scene.rig.root()) {
                    for (int c = 0; c < 3; ++c) {
                        noisy.jointRotations(j, c) += spec.noise * normal(noiseRng);
                    }
                }
            }
        }
        scene.cleanPoses.push_back(p);
        scene.givenPoses.push_back(noisy);
    }

    const auto [center, radius] = scene.rig.extent();
    const double focal =
        spec.focal > 0 ? spec.focal : 0.5 * std::min(spec.width, spec.height) * spec.cameraDistance / (1.05 * radius);
    auto place = [&](double azimuth, double lift) {
        const Eigen::Vector3d eye =
            center + spec.cameraDistance * Eigen::Vector3d(std::sin(azimuth), lift, std::cos(azimuth)).normalized();
        return Camerad::lookAt(eye, center, Eigen::Vector3d::UnitY(), focal, spec.width, spec.height);
    };
    scene.cameras[0] = place(0.0, 0.1);
    for (int c = 0; c < spec.evalCameras; ++c) {
        const double azimuth = 2 * std::numbers::pi * (c + 0.5) / spec.evalCameras;
        scene.cameras[c + 1] = place(azimuth, c % 2 ? 0.3 : -0.05);
    }

    for (int f = 0; f < spec.frames; ++f) {
        std::vector<TrainFrame> perCamera;
        for (const auto &[id, cam] : scene.cameras) {
            const auto out = renderGroundTruth(scene.groundTruth, scene.rig, scene.cleanPoses[std::size_t(f)], cam);
            TrainFrame v;
            v.camera = cam;
            v.frame = f;
            v.pose = scene.givenPoses[std::size_t(f)];
            v.image = out.color;
            v.image.data = v.image.data.unaryExpr(&quantize8);
            v.mask = out.alpha;
            v.mask.data = (out.alpha.data > 0.5).cast<double>();
            perCamera.push_back(std::move(v));
        }
        scene.views.push_back(std::move(perCamera));
    }
    return scene;
}

void writeSynthetic(const fs::path &dir, const SyntheticScene &scene) {
    fs::create_directories(dir);
    Dataset ds;
    ds.cameras = scene.cameras;
    Split split;
    char name[64];
    for (std::size_t f = 0; f < scene.views.size(); ++f) {
        std::snprintf(name, sizeof(name), "poses/f%03zu.json", f);
        writePose(dir / name, scene.givenPoses[f]);
        std::snprintf(name, sizeof(name), "ground_truth/poses/f%03zu.json", f);
        writePose(dir / name, scene.cleanPoses[f]);
        std::size_t c = 0;
        for (const auto &[id, cam] : scene.cameras) {
            const TrainFrame &v = scene.views[f][c++];
            DatasetRecord r;
            r.camera = id;
            r.frame = int(f);
            std::snprintf(name, sizeof(name), "poses/f%03zu.json", f);
            r.pose = name;
            std::snprintf(name, sizeof(name), "images/c%d_f%03zu.ppm", id, f);
            r.image = name;
            writePpm(dir / r.image, v.image);
            std::snprintf(name, sizeof(name), "masks/c%d_f%03zu.pgm", id, f);
            r.mask = name;
            writePgm(dir / r.mask, v.mask);
            (id == 0 ? split.train : split.test).push_back(int(ds.records.size()));
            ds.records.push_back(std::move(r));
        }
    }
    writeTemplate(dir / ds.templatePath, scene.rig);
    writeDataset(dir, ds);
    writeSplit(dir / "split.json", split);
    writePly(dir / "ground_truth" / "cloud.ply", scene.groundTruth);
    writeFileAtomic(dir / "ground_truth" / "spec.txt", formatSyntheticSpec(scene.spec));
}

} // namespace artsplat
