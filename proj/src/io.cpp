// Copyright Contributors to the artsplat Project
// SPDX-License-Identifier: Apache-2.0
//
#include "artsplat/io.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <functional>
#include <sstream>

namespace artsplat {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

using nlohmann::json;

namespace {

std::string describe(const fs::path &path, const std::string &what, std::optional<std::size_t> offset) {
    std::string msg = path.string();
    if (offset) {
        msg += " (byte " + std::to_string(*offset) + ")";
    }
    return msg + ": " + what;
}

} // namespace

DataError::DataError(const fs::path &path, const std::string &what, std::optional<std::size_t> offset)
    : std::runtime_error(describe(path, what, offset)), mPath(path), mOffset(offset) {}

std::string readFile(const fs::path &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw DataError(path, "cannot open file");
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void writeFileAtomic(const fs::path &path, const std::string &bytes) {
    if (path.has_parent_path()) {
        fs::create_directories(path.parent_path());
    }
    fs::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw DataError(tmp, "cannot open file for writing");
        }
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!out) {
            throw DataError(tmp, "write failed");
        }
    }
    fs::rename(tmp, path);
}

// ---------------------------------------------------------------------------------------------
// Netpbm

namespace {

struct NetpbmHeader {
    int width = 0;
    int height = 0;
    int maxval = 0;
    std::size_t dataOffset = 0;
};

NetpbmHeader parseNetpbm(const fs::path &path, const std::string &bytes, const char *magic) {
    if (bytes.size() < 2 || bytes.compare(0, 2, magic) != 0) {
        throw DataError(path, std::string("expected magic ") + magic, 0);
    }
    std::size_t pos = 2;
    std::size_t tokenStart = pos;
    auto nextInt = [&]() {
        for (;;) {
            while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) {
                ++pos;
            }
            if (pos < bytes.size() && bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') {
                    ++pos;
                }
                continue;
            }
            break;
        }
        const std::size_t start = pos;
        tokenStart = start;
        long value = 0;
        while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
            value = value * 10 + (bytes[pos] - '0');
            if (value > 1 << 20) {
                throw DataError(path, "header value too large", start);
            }
            ++pos;
        }
        if (pos == start) {
            throw DataError(path, "expected an integer in the header", start);
        }
        return static_cast<int>(value);
    };
    NetpbmHeader h;
    h.width = nextInt();
    h.height = nextInt();
    h.maxval = nextInt();
    const std::size_t maxvalOffset = tokenStart;
    if (h.width <= 0 || h.height <= 0) {
        throw DataError(path, "image dimensions must be positive", 2);
    }
    if (h.maxval != 255) {
        throw DataError(path, "only 8-bit images (maxval 255) are supported", maxvalOffset);
    }
    if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        throw DataError(path, "missing whitespace after the header", pos);
    }
    h.dataOffset = pos + 1;
    return h;
}

ImageD readNetpbm(const fs::path &path, const char *magic, int channels) {
    const std::string bytes = readFile(path);
    const NetpbmHeader h = parseNetpbm(path, bytes, magic);
    const std::size_t need = std::size_t(h.width) * std::size_t(h.height) * std::size_t(channels);
    if (bytes.size() - h.dataOffset < need) {
        throw DataError(path, "truncated pixel data: expected " + std::to_string(need) + " bytes", bytes.size());
    }
    ImageD img(h.width, h.height, channels);
    for (std::size_t i = 0; i < need; ++i) {
        img.data[Eigen::Index(i)] = double(static_cast<unsigned char>(bytes[h.dataOffset + i])) / 255.0;
    }
    return img;
}

void writeNetpbm(const fs::path &path, const ImageD &img, const char *magic, int channels) {
    if (img.channels != channels) {
        throw std::invalid_argument(path.string() + ": wrong channel count for this image format");
    }
    std::string bytes = std::string(magic) + "\n" + std::to_string(img.width) + " " + std::to_string(img.height) +
                        "\n255\n";
    const std::size_t header = bytes.size();
    bytes.resize(header + std::size_t(img.data.size()));
    for (Eigen::Index i = 0; i < img.data.size(); ++i) {
        const double v = std::clamp(img.data[i], 0.0, 1.0);
        bytes[header + std::size_t(i)] = static_cast<char>(static_cast<unsigned char>(std::lround(v * 255.0)));
    }
    writeFileAtomic(path, bytes);
}

} // namespace

ImageD readPpm(const fs::path &path) { return readNetpbm(path, "P6", 3); }
void writePpm(const fs::path &path, const ImageD &image) { writeNetpbm(path, image, "P6", 3); }
ImageD readPgm(const fs::path &path) { return readNetpbm(path, "P5", 1); }
void writePgm(const fs::path &path, const ImageD &image) { writeNetpbm(path, image, "P5", 1); }

// ---------------------------------------------------------------------------------------------
// JSON helpers

namespace {

json parseJson(const fs::path &path) {
    const std::string text = readFile(path);
    try {
        return json::parse(text);
    } catch (const json::parse_error &e) {
        throw DataError(path, "invalid JSON", e.byte > 0 ? e.byte - 1 : 0);
    }
}

// Wraps field access so type errors name the file.
template <typename F> auto withPath(const fs::path &path, F &&f) -> decltype(f()) {
    try {
        return f();
    } catch (const json::exception &e) {
        throw DataError(path, e.what());
    } catch (const std::invalid_argument &e) {
        throw DataError(path, e.what());
    }
}

json vec3Json(const Eigen::Vector3d &v) { return json::array({v.x(), v.y(), v.z()}); }

Eigen::Vector3d vec3From(const json &j) {
    if (!j.is_array() || j.size() != 3) {
        throw std::invalid_argument("expected an array of three numbers");
    }
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

json pointsJson(const PointMatrix &m) {
    json a = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        a.push_back(vec3Json(m.row(i).transpose()));
    }
    return a;
}

PointMatrix pointsFrom(const json &j) {
    if (!j.is_array()) {
        throw std::invalid_argument("expected an array of points");
    }
    PointMatrix m(Eigen::Index(j.size()), 3);
    for (std::size_t i = 0; i < j.size(); ++i) {
        m.row(Eigen::Index(i)) = vec3From(j[i]).transpose();
    }
    return m;
}

json poseJson(const Pose &p) {
    return json{{"rotations", pointsJson(p.jointRotations)}, {"translation", vec3Json(p.rootTranslation)}};
}

Pose poseFrom(const json &j) {
    Pose p;
    p.jointRotations = pointsFrom(j.at("rotations"));
    p.rootTranslation = vec3From(j.at("translation"));
    if (!p.jointRotations.allFinite() || !p.rootTranslation.allFinite()) {
        throw std::invalid_argument("pose values must be finite");
    }
    return p;
}

json cameraJson(int id, const Camerad &c) {
    json r = json::array();
    for (int i = 0; i < 3; ++i) {
        for (int k = 0; k < 3; ++k) {
            r.push_back(c.rotation(i, k));
        }
    }
    return json{{"id", id},         {"fx", c.fx},         {"fy", c.fy},
                {"cx", c.cx},       {"cy", c.cy},         {"width", c.width},
                {"height", c.height}, {"rotation", r},    {"translation", vec3Json(c.translation)},
                {"near", c.nearClip}};
}

Camerad cameraFrom(const json &j) {
    Camerad c;
    c.fx = j.at("fx").get<double>();
    c.fy = j.at("fy").get<double>();
    c.cx = j.at("cx").get<double>();
    c.cy = j.at("cy").get<double>();
    c.width = j.at("width").get<int>();
    c.height = j.at("height").get<int>();
    const json &r = j.at("rotation");
    if (!r.is_array() || r.size() != 9) {
        throw std::invalid_argument("camera rotation must hold 9 numbers (row-major)");
    }
    for (int i = 0; i < 3; ++i) {
        for (int k = 0; k < 3; ++k) {
            c.rotation(i, k) = r[std::size_t(3 * i + k)].get<double>();
        }
    }
    c.translation = vec3From(j.at("translation"));
    if (j.contains("near")) {
        c.nearClip = j.at("near").get<double>();
    }
    if (c.width <= 0 || c.height <= 0 || !(c.fx > 0) || !(c.fy > 0)) {
        throw std::invalid_argument("camera needs positive resolution and focal lengths");
    }
    return c;
}

std::string dumpJson(const json &j) { return j.dump(1) + "\n"; }

} // namespace

SkinnedTemplate readTemplate(const fs::path &path) {
    const json j = parseJson(path);
    return withPath(path, [&] {
        const int k = j.at("joint_count").get<int>();
        auto parents = j.at("parents").get<std::vector<int>>();
        PointMatrix joints = pointsFrom(j.at("rest_joints"));
        PointMatrix vertices = pointsFrom(j.at("vertices"));
        if (int(parents.size()) != k || joints.rows() != k) {
            throw std::invalid_argument("parents and rest_joints must have joint_count entries");
        }
        const json &w = j.at("weights");
        if (!w.is_array() || w.size() != std::size_t(vertices.rows())) {
            throw std::invalid_argument("weights must have one entry per vertex");
        }
        RowMatrixXd weights = RowMatrixXd::Zero(vertices.rows(), k);
        for (std::size_t v = 0; v < w.size(); ++v) {
            for (const json &e : w[v]) {
                const int joint = e.at(0).get<int>();
                if (joint < 0 || joint >= k) {
                    throw std::invalid_argument("weight joint index out of range at vertex " + std::to_string(v));
                }
                weights(Eigen::Index(v), joint) = e.at(1).get<double>();
            }
        }
        return SkinnedTemplate(std::move(parents), std::move(joints), std::move(vertices), std::move(weights));
    });
}

void writeTemplate(const fs::path &path, const SkinnedTemplate &rig) {
    json w = json::array();
    for (Eigen::Index v = 0; v < rig.vertexCount(); ++v) {
        json row = json::array();
        for (int k = 0; k < rig.jointCount(); ++k) {
            if (rig.weights()(v, k) != 0) {
                row.push_back(json::array({k, rig.weights()(v, k)}));
            }
        }
        w.push_back(row);
    }
    const json j{{"joint_count", rig.jointCount()},
                 {"parents", rig.parents()},
                 {"rest_joints", pointsJson(rig.restJoints())},
                 {"vertices", pointsJson(rig.vertices())},
                 {"weights", w}};
    writeFileAtomic(path, dumpJson(j));
}

Pose readPose(const fs::path &path) {
    const json j = parseJson(path);
    return withPath(path, [&] { return poseFrom(j); });
}

void writePose(const fs::path &path, const Pose &pose) { writeFileAtomic(path, dumpJson(poseJson(pose))); }

namespace {

json camerasJson(const std::map<int, Camerad> &cameras) {
    json a = json::array();
    for (const auto &[id, c] : cameras) {
        a.push_back(cameraJson(id, c));
    }
    return a;
}

std::map<int, Camerad> camerasFrom(const json &a) {
    std::map<int, Camerad> out;
    for (const json &c : a) {
        const int id = c.at("id").get<int>();
        if (!out.emplace(id, cameraFrom(c)).second) {
            throw std::invalid_argument("duplicate camera id " + std::to_string(id));
        }
    }
    return out;
}

} // namespace

std::map<int, Camerad> readCameras(const fs::path &path) {
    const json j = parseJson(path);
    return withPath(path, [&] { return camerasFrom(j.at("cameras")); });
}

void writeCameras(const fs::path &path, const std::map<int, Camerad> &cameras) {
    writeFileAtomic(path, dumpJson(json{{"cameras", camerasJson(cameras)}}));
}

Dataset readDataset(const fs::path &dir) {
    const fs::path path = dir / "dataset.json";
    const json j = parseJson(path);
    return withPath(path, [&] {
        Dataset ds;
        ds.templatePath = j.at("template").get<std::string>();
        ds.cameras = camerasFrom(j.at("cameras"));
        for (const json &r : j.at("records")) {
            DatasetRecord rec;
            rec.image = r.at("image").get<std::string>();
            rec.mask = r.at("mask").get<std::string>();
            rec.pose = r.at("pose").get<std::string>();
            rec.camera = r.at("camera").get<int>();
            rec.frame = r.at("frame").get<int>();
            if (!ds.cameras.count(rec.camera)) {
                throw std::invalid_argument("record references unknown camera " + std::to_string(rec.camera));
            }
            ds.records.push_back(std::move(rec));
        }
        return ds;
    });
}

void writeDataset(const fs::path &dir, const Dataset &ds) {
    json records = json::array();
    for (const auto &r : ds.records) {
        records.push_back(
            json{{"image", r.image}, {"mask", r.mask}, {"pose", r.pose}, {"camera", r.camera}, {"frame", r.frame}});
    }
    const json j{{"template", ds.templatePath}, {"cameras", camerasJson(ds.cameras)}, {"records", records}};
    writeFileAtomic(dir / "dataset.json", dumpJson(j));
}

Split readSplit(const fs::path &path) {
    const json j = parseJson(path);
    return withPath(path, [&] {
        Split s;
        s.train = j.at("train").get<std::vector<int>>();
        s.test = j.value("test", std::vector<int>{});
        return s;
    });
}

void writeSplit(const fs::path &path, const Split &split) {
    writeFileAtomic(path, dumpJson(json{{"train", split.train}, {"test", split.test}}));
}

std::vector<TrainFrame> loadFrames(const fs::path &dir, const Dataset &ds, const std::vector<int> &indices) {
    std::vector<int> rows = indices;
    if (rows.empty()) {
        for (int i = 0; i < int(ds.records.size()); ++i) {
            rows.push_back(i);
        }
    }
    std::vector<TrainFrame> frames;
    frames.reserve(rows.size());
    for (int idx : rows) {
        if (idx < 0 || idx >= int(ds.records.size())) {
            throw DataError(dir / "dataset.json", "record index " + std::to_string(idx) + " out of range");
        }
        const DatasetRecord &r = ds.records[std::size_t(idx)];
        TrainFrame f;
        f.camera = ds.cameras.at(r.camera);
        f.frame = r.frame;
        f.image = readPpm(dir / r.image);
        f.mask = readPgm(dir / r.mask);
        f.pose = readPose(dir / r.pose);
        if (f.image.width != f.camera.width || f.image.height != f.camera.height) {
            throw DataError(dir / r.image, "image size does not match camera " + std::to_string(r.camera));
        }
        if (f.mask.width != f.camera.width || f.mask.height != f.camera.height) {
            throw DataError(dir / r.mask, "mask size does not match camera " + std::to_string(r.camera));
        }
        frames.push_back(std::move(f));
    }
    return frames;
}

// ---------------------------------------------------------------------------------------------
// Config

namespace {

struct ConfigKey {
    const char *name;
    std::function<void(TrainConfig &, const std::string &)> set;
    std::function<std::string(const TrainConfig &)> get;
};

std::string fmt(double v) {
    std::ostringstream ss;
    ss.precision(17);
    ss << v;
    return ss.str();
}

double toDouble(const std::string &s) {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) {
        throw std::invalid_argument("not a number: " + s);
    }
    return v;
}

long long toInt(const std::string &s) {
    std::size_t used = 0;
    const long long v = std::stoll(s, &used);
    if (used != s.size()) {
        throw std::invalid_argument("not an integer: " + s);
    }
    return v;
}

bool toBool(const std::string &s) {
    if (s == "true" || s == "1" || s == "on" || s == "yes") {
        return true;
    }
    if (s == "false" || s == "0" || s == "off" || s == "no") {
        return false;
    }
    throw std::invalid_argument("not a boolean: " + s);
}

#define ARTSPLAT_DOUBLE(key, field)                                                                                    \
    ConfigKey {                                                                                                        \
        key, [](TrainConfig &c, const std::string &v) { c.field = toDouble(v); },                                      \
            [](const TrainConfig &c) { return fmt(c.field); }                                                          \
    }
#define ARTSPLAT_INT(key, field)                                                                                       \
    ConfigKey {                                                                                                        \
        key, [](TrainConfig &c, const std::string &v) { c.field = static_cast<decltype(c.field)>(toInt(v)); },         \
            [](const TrainConfig &c) { return std::to_string(c.field); }                                               \
    }
#define ARTSPLAT_BOOL(key, field)                                                                                      \
    ConfigKey {                                                                                                        \
        key, [](TrainConfig &c, const std::string &v) { c.field = toBool(v); },                                        \
            [](const TrainConfig &c) { return std::string(c.field ? "true" : "false"); }                               \
    }

const std::vector<ConfigKey> &configKeys() {
    static const std::vector<ConfigKey> keys = {
        ARTSPLAT_INT("iterations", iterations),
        ARTSPLAT_INT("seed", seed),
        ARTSPLAT_DOUBLE("lr_position", lr.position),
        ARTSPLAT_DOUBLE("lr_position_final", lr.positionFinal),
        ARTSPLAT_DOUBLE("lr_rotation", lr.rotation),
        ARTSPLAT_DOUBLE("lr_scale", lr.logScale),
        ARTSPLAT_DOUBLE("lr_opacity", lr.opacity),
        ARTSPLAT_DOUBLE("lr_sh", lr.sh),
        ARTSPLAT_DOUBLE("lr_sh_rest_divisor", lr.shRestDivisor),
        ARTSPLAT_DOUBLE("lr_networks", lr.networks),
        ARTSPLAT_DOUBLE("lr_pose_network", lr.poseNetwork),
        ARTSPLAT_INT("max_sh_degree", maxShDegree),
        ARTSPLAT_INT("sh_promotion_interval", shPromotionInterval),
        ConfigKey{"background",
                  [](TrainConfig &c, const std::string &v) {
                      std::stringstream ss(v);
                      std::string part;
                      int i = 0;
                      while (std::getline(ss, part, ',')) {
                          if (i >= 3) {
                              throw std::invalid_argument("background takes three comma-separated values");
                          }
                          c.background[i++] = toDouble(part);
                      }
                      if (i != 3) {
                          throw std::invalid_argument("background takes three comma-separated values");
                      }
                  },
                  [](const TrainConfig &c) {
                      return fmt(c.background[0]) + "," + fmt(c.background[1]) + "," + fmt(c.background[2]);
                  }},
        ARTSPLAT_DOUBLE("lambda_mask", loss.mask),
        ARTSPLAT_DOUBLE("lambda_ssim", loss.ssim),
        ARTSPLAT_BOOL("pose_refine", usePoseRefine),
        ARTSPLAT_BOOL("lbs_offsets", useLbsOffsets),
        ARTSPLAT_BOOL("lbs_grad_to_positions", lbsGradToPositions),
        ConfigKey{"init",
                  [](TrainConfig &c, const std::string &v) {
                      if (v == "template") {
                          c.init = InitMode::Template;
                      } else if (v == "random") {
                          c.init = InitMode::Random;
                      } else {
                          throw std::invalid_argument("init must be template or random");
                      }
                  },
                  [](const TrainConfig &c) { return std::string(c.init == InitMode::Template ? "template" : "random"); }},
        ARTSPLAT_INT("random_init_count", randomInitCount),
        ARTSPLAT_DOUBLE("densify_grad_threshold", densify.gradThreshold),
        ARTSPLAT_DOUBLE("kl_split_clone_min", densify.klSplitCloneMin),
        ARTSPLAT_DOUBLE("kl_merge_max", densify.klMergeMax),
        ARTSPLAT_DOUBLE("scale_split_fraction", densify.scaleSplitFraction),
        ARTSPLAT_DOUBLE("opacity_prune_min", densify.opacityPruneMin),
        ARTSPLAT_DOUBLE("max_scale_fraction", densify.maxScaleFraction),
        ARTSPLAT_DOUBLE("template_distance_max", densify.templateDistanceMax),
        ARTSPLAT_INT("densify_interval", densify.interval),
        ARTSPLAT_INT("densify_start", densify.start),
        ARTSPLAT_INT("densify_stop", densify.stop),
        ARTSPLAT_DOUBLE("merge_scale_factor", densify.mergeScaleFactor),
        ARTSPLAT_DOUBLE("split_scale_divisor", densify.splitScaleDivisor),
        ARTSPLAT_BOOL("merge", densify.enableMerge),
        ARTSPLAT_BOOL("opacity_reset", densify.opacityReset),
        ARTSPLAT_INT("opacity_reset_interval", densify.opacityResetInterval),
        ARTSPLAT_INT("max_gaussians", densify.maxGaussians),
    };
    return keys;
}

#undef ARTSPLAT_DOUBLE
#undef ARTSPLAT_INT
#undef ARTSPLAT_BOOL

std::string trim(const std::string &s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) {
        return {};
    }
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

} // namespace

TrainConfig parseConfig(const std::string &text, const fs::path &origin) {
    TrainConfig cfg;
    std::size_t offset = 0;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        const std::size_t lineOffset = offset;
        offset += line.size() + 1;
        const std::string body = trim(line.substr(0, line.find('#')));
        if (body.empty()) {
            continue;
        }
        const auto eq = body.find('=');
        if (eq == std::string::npos) {
            throw DataError(origin, "expected key = value", lineOffset);
        }
        const std::string key = trim(body.substr(0, eq));
        const std::string value = trim(body.substr(eq + 1));
        const auto &keys = configKeys();
        const auto it = std::find_if(keys.begin(), keys.end(), [&](const ConfigKey &k) { return key == k.name; });
        if (it == keys.end()) {
            throw DataError(origin, "unknown key '" + key + "'", lineOffset);
        }
        try {
            it->set(cfg, value);
        } catch (const std::exception &e) {
            throw DataError(origin, key + ": " + e.what(), lineOffset);
        }
    }
    try {
        cfg.validate();
    } catch (const std::invalid_argument &e) {
        throw DataError(origin, e.what());
    }
    return cfg;
}

TrainConfig readConfig(const fs::path &path) { return parseConfig(readFile(path), path); }

std::string formatConfig(const TrainConfig &cfg) {
    std::string out;
    for (const auto &k : configKeys()) {
        out += std::string(k.name) + " = " + k.get(cfg) + "\n";
    }
    return out;
}

// ---------------------------------------------------------------------------------------------
// Binary helpers

namespace {

class ByteWriter {
  public:
    template <typename T> void put(T v) {
        static_assert(std::is_trivially_copyable_v<T>);
        const auto *p = reinterpret_cast<const char *>(&v);
        mBytes.append(p, sizeof(T));
    }
    template <typename T> void putArray(const T *data, std::size_t n) {
        mBytes.append(reinterpret_cast<const char *>(data), n * sizeof(T));
    }
    template <typename Derived> void putDoubles(const Eigen::DenseBase<Derived> &m) {
        put<std::int64_t>(m.size());
        const Eigen::Array<double, Eigen::Dynamic, 1> flatCopy =
            Eigen::Map<const Eigen::Array<double, Eigen::Dynamic, 1>>(m.derived().data(), m.size());
        putArray(flatCopy.data(), std::size_t(flatCopy.size()));
    }
    void putString(const std::string &s) { mBytes += s; }
    std::string &bytes() { return mBytes; }

  private:
    std::string mBytes;
};

class ByteReader {
  public:
    ByteReader(fs::path path, std::string bytes) : mPath(std::move(path)), mBytes(std::move(bytes)) {}

    template <typename T> T get() {
        need(sizeof(T));
        T v;
        std::memcpy(&v, mBytes.data() + mPos, sizeof(T));
        mPos += sizeof(T);
        return v;
    }
    template <typename T> void getArray(T *out, std::size_t n) {
        need(n * sizeof(T));
        std::memcpy(out, mBytes.data() + mPos, n * sizeof(T));
        mPos += n * sizeof(T);
    }
    /// Reads a length-prefixed double block into `m`, which must already have the expected size.
    template <typename Derived> void getDoubles(Eigen::PlainObjectBase<Derived> &m) {
        const std::size_t at = mPos;
        const auto n = get<std::int64_t>();
        if (n != m.size()) {
            throw DataError(mPath, "block size mismatch", at);
        }
        getArray(m.data(), std::size_t(n));
    }
    void expect(const std::string &magic) {
        need(magic.size());
        if (mBytes.compare(mPos, magic.size(), magic) != 0) {
            throw DataError(mPath, "bad magic, expected " + magic, mPos);
        }
        mPos += magic.size();
    }
    std::size_t position() const { return mPos; }
    std::size_t remaining() const { return mBytes.size() - mPos; }
    const std::string &bytes() const { return mBytes; }
    [[noreturn]] void fail(const std::string &what) const { throw DataError(mPath, what, mPos); }

  private:
    void need(std::size_t n) const {
        if (mBytes.size() - mPos < n) {
            throw DataError(mPath, "unexpected end of file", mPos);
        }
    }
    fs::path mPath;
    std::string mBytes;
    std::size_t mPos = 0;
};

} // namespace

// ---------------------------------------------------------------------------------------------
// PLY

void writePly(const fs::path &path, const GaussianCloudd &cloud) {
    const int b = cloud.shCoeffCount();
    std::string header = "ply\nformat binary_little_endian 1.0\nelement vertex " + std::to_string(cloud.size()) + "\n";
    std::vector<std::string> names = {"x", "y", "z", "rot_0", "rot_1", "rot_2", "rot_3",
                                      "scale_0", "scale_1", "scale_2", "opacity", "f_dc_0", "f_dc_1", "f_dc_2"};
    for (int i = 0; i < 3 * (b - 1); ++i) {
        names.push_back("f_rest_" + std::to_string(i));
    }
    for (const auto &n : names) {
        header += "property float " + n + "\n";
    }
    header += "end_header\n";

    ByteWriter w;
    w.putString(header);
    for (Eigen::Index i = 0; i < cloud.size(); ++i) {
        for (int c = 0; c < 3; ++c) {
            w.put(float(cloud.positions(i, c)));
        }
        for (int c = 0; c < 4; ++c) {
            w.put(float(cloud.rotations(i, c)));
        }
        for (int c = 0; c < 3; ++c) {
            w.put(float(cloud.logScales(i, c)));
        }
        w.put(float(cloud.rawOpacities[i]));
        for (int c = 0; c < 3; ++c) {
            w.put(float(cloud.sh(i, c)));
        }
        // channel-major rest coefficients
        for (int c = 0; c < 3; ++c) {
            for (int k = 1; k < b; ++k) {
                w.put(float(cloud.sh(i, 3 * k + c)));
            }
        }
    }
    writeFileAtomic(path, w.bytes());
}

GaussianCloudd readPly(const fs::path &path) {
    std::string bytes = readFile(path);
    const std::string endTag = "end_header\n";
    const auto end = bytes.find(endTag);
    if (bytes.compare(0, 4, "ply\n") != 0 || end == std::string::npos) {
        throw DataError(path, "not a PLY file", 0);
    }
    std::istringstream header(bytes.substr(0, end));
    std::string line;
    long long count = -1;
    std::vector<std::string> props;
    std::size_t lineOffset = 0;
    while (std::getline(header, line)) {
        std::istringstream ls(line);
        std::string word;
        ls >> word;
        if (word == "format" ) {
            std::string fmtName;
            ls >> fmtName;
            if (fmtName != "binary_little_endian") {
                throw DataError(path, "only binary_little_endian PLY is supported", lineOffset);
            }
        } else if (word == "element") {
            std::string kind;
            ls >> kind >> count;
            if (kind != "vertex" || count < 0) {
                throw DataError(path, "expected a single vertex element", lineOffset);
            }
        } else if (word == "property") {
            std::string type, name;
            ls >> type >> name;
            if (type != "float") {
                throw DataError(path, "only float properties are supported", lineOffset);
            }
            props.push_back(name);
        }
        lineOffset += line.size() + 1;
    }
    const std::size_t restCount = props.size() >= 14 ? props.size() - 14 : 0;
    const int b = int(restCount / 3) + 1;
    int degree = -1;
    for (int d = 0; d <= kMaxShDegree; ++d) {
        if (shBasisCount(d) == b) {
            degree = d;
        }
    }
    if (count < 0 || props.size() < 14 || restCount % 3 != 0 || degree < 0 || props[0] != "x" ||
        props[10] != "opacity") {
        throw DataError(path, "unexpected property layout", 0);
    }
    ByteReader r(path, std::move(bytes));
    for (std::size_t i = 0; i < end + endTag.size(); ++i) {
        r.get<char>();
    }
    GaussianCloudd cloud(degree);
    cloud.resize(count, degree);
    for (Eigen::Index i = 0; i < count; ++i) {
        for (int c = 0; c < 3; ++c) {
            cloud.positions(i, c) = r.get<float>();
        }
        for (int c = 0; c < 4; ++c) {
            cloud.rotations(i, c) = r.get<float>();
        }
        for (int c = 0; c < 3; ++c) {
            cloud.logScales(i, c) = r.get<float>();
        }
        cloud.rawOpacities[i] = r.get<float>();
        for (int c = 0; c < 3; ++c) {
            cloud.sh(i, c) = r.get<float>();
        }
        for (int c = 0; c < 3; ++c) {
            for (int k = 1; k < b; ++k) {
                cloud.sh(i, 3 * k + c) = r.get<float>();
            }
        }
    }
    if (!cloud.parametersFinite()) {
        throw DataError(path, "non-finite parameter values");
    }
    return cloud;
}

// ---------------------------------------------------------------------------------------------
// Checkpoints

namespace {

json mlpJson(const Mlp &m, std::size_t offset) {
    return json{{"widths", m.widths()}, {"offset", offset}, {"count", m.parameterCount()}};
}

Mlp mlpFrom(const json &j, const std::vector<float> &values, const fs::path &binPath) {
    const auto widths = j.at("widths").get<std::vector<int>>();
    const auto offset = j.at("offset").get<std::size_t>();
    const auto count = j.at("count").get<std::size_t>();
    if (widths.empty() && count == 0) {
        return Mlp();
    }
    Mlp m(widths, 0);
    if (std::size_t(m.parameterCount()) != count || offset + count > values.size()) {
        throw DataError(binPath, "network parameter block does not match its widths");
    }
    for (std::size_t i = 0; i < count; ++i) {
        m.parameters()[Eigen::Index(i)] = values[offset + i];
    }
    return m;
}

std::vector<float> readFloats(const fs::path &path, std::size_t expected) {
    const std::string bytes = readFile(path);
    if (bytes.size() != expected * sizeof(float)) {
        throw DataError(path, "expected " + std::to_string(expected * sizeof(float)) + " bytes",
                        std::min(bytes.size(), expected * sizeof(float)));
    }
    std::vector<float> v(expected);
    std::memcpy(v.data(), bytes.data(), bytes.size());
    return v;
}

} // namespace

void saveCheckpoint(const fs::path &dir, const TrainedModel &m, const std::map<int, Camerad> &cameras,
                    const TrainerState *state) {
    fs::path staging = dir;
    staging += ".partial";
    fs::remove_all(staging);
    fs::create_directories(staging);

    writePly(staging / "cloud.ply", m.cloud);

    ByteWriter nets;
    const auto &lbs = m.model.lbsNet.parameters();
    const auto &pose = m.model.poseNet.parameters();
    for (Eigen::Index i = 0; i < lbs.size(); ++i) {
        nets.put(float(lbs[i]));
    }
    for (Eigen::Index i = 0; i < pose.size(); ++i) {
        nets.put(float(pose[i]));
    }
    writeFileAtomic(staging / "networks.bin", nets.bytes());
    const json netJson{{"lbs_offsets", mlpJson(m.model.lbsNet, 0)},
                       {"pose_refine", mlpJson(m.model.poseNet, std::size_t(lbs.size()))},
                       {"use_lbs_offsets", m.model.useLbsOffsets},
                       {"use_pose_refine", m.model.usePoseRefine},
                       {"lbs_grad_to_positions", m.model.lbsGradToPositions},
                       {"sh_degree", m.shDegree},
                       {"background", vec3Json(m.background)}};
    writeFileAtomic(staging / "networks.json", dumpJson(netJson));

    ByteWriter weights;
    for (Eigen::Index i = 0; i < m.weights.rows(); ++i) {
        for (Eigen::Index k = 0; k < m.weights.cols(); ++k) {
            weights.put(float(m.weights(i, k)));
        }
    }
    writeFileAtomic(staging / "weights.bin", weights.bytes());
    json inputs = json::array(), refined = json::array();
    for (std::size_t i = 0; i < m.inputPoses.size(); ++i) {
        inputs.push_back(poseJson(m.inputPoses[i]));
        refined.push_back(poseJson(m.refinedPoses[i]));
    }
    const json inference{{"gaussians", m.weights.rows()},
                         {"joint_count", m.weights.cols()},
                         {"frames", m.frames},
                         {"input_poses", inputs},
                         {"refined_poses", refined}};
    writeFileAtomic(staging / "inference.json", dumpJson(inference));

    writeTemplate(staging / "template.json", m.rig);
    writeCameras(staging / "cameras.json", cameras);
    if (state) {
        saveTrainerState(staging / "state.bin", *state);
    }

    fs::remove_all(dir);
    fs::rename(staging, dir);
}

Checkpoint loadCheckpoint(const fs::path &dir) {
    if (!fs::is_directory(dir)) {
        throw DataError(dir, "checkpoint directory not found");
    }
    Checkpoint ck;
    TrainedModel &m = ck.model;
    m.rig = readTemplate(dir / "template.json");
    ck.cameras = readCameras(dir / "cameras.json");
    m.cloud = readPly(dir / "cloud.ply");

    const fs::path netPath = dir / "networks.json";
    const json nets = parseJson(netPath);
    withPath(netPath, [&] {
        const std::size_t total =
            nets.at("lbs_offsets").at("count").get<std::size_t>() + nets.at("pose_refine").at("count").get<std::size_t>();
        const std::vector<float> values = readFloats(dir / "networks.bin", total);
        m.model.lbsNet = mlpFrom(nets.at("lbs_offsets"), values, dir / "networks.bin");
        m.model.poseNet = mlpFrom(nets.at("pose_refine"), values, dir / "networks.bin");
        m.model.useLbsOffsets = nets.at("use_lbs_offsets").get<bool>();
        m.model.usePoseRefine = nets.at("use_pose_refine").get<bool>();
        m.model.lbsGradToPositions = nets.value("lbs_grad_to_positions", false);
        m.shDegree = nets.at("sh_degree").get<int>();
        m.background = vec3From(nets.at("background"));
        if (m.model.lbsNet.outputWidth() != m.rig.jointCount()) {
            throw std::invalid_argument("skinning network output does not match the template joint count");
        }
        return 0;
    });

    const fs::path infPath = dir / "inference.json";
    const json inf = parseJson(infPath);
    withPath(infPath, [&] {
        const auto u = inf.at("gaussians").get<Eigen::Index>();
        const auto k = inf.at("joint_count").get<Eigen::Index>();
        if (u != m.cloud.size() || k != m.rig.jointCount()) {
            throw std::invalid_argument("cached weights do not match the cloud or the template");
        }
        const std::vector<float> w = readFloats(dir / "weights.bin", std::size_t(u * k));
        m.weights.resize(u, k);
        for (Eigen::Index i = 0; i < u * k; ++i) {
            m.weights(i / k, i % k) = w[std::size_t(i)];
        }
        m.frames = inf.at("frames").get<std::vector<int>>();
        for (const json &p : inf.at("input_poses")) {
            m.inputPoses.push_back(poseFrom(p));
        }
        for (const json &p : inf.at("refined_poses")) {
            m.refinedPoses.push_back(poseFrom(p));
        }
        if (m.inputPoses.size() != m.frames.size() || m.refinedPoses.size() != m.frames.size()) {
            throw std::invalid_argument("cached pose lists do not match the frame list");
        }
        return 0;
    });
    return ck;
}

// ---------------------------------------------------------------------------------------------
// Trainer state

namespace {

const std::string kStateMagic = "ARTSPLAT-STATE-1";

void putMlp(ByteWriter &w, const Mlp &m) {
    w.put<std::int32_t>(std::int32_t(m.widths().size()));
    for (int x : m.widths()) {
        w.put<std::int32_t>(x);
    }
    w.putDoubles(m.parameters());
}

Mlp getMlp(ByteReader &r) {
    const auto n = r.get<std::int32_t>();
    if (n == 0) {
        return Mlp();
    }
    if (n < 2 || n > 64) {
        r.fail("bad network layer count");
    }
    std::vector<int> widths(static_cast<std::size_t>(n));
    for (auto &x : widths) {
        x = r.get<std::int32_t>();
        if (x <= 0) {
            r.fail("bad network width");
        }
    }
    Mlp m(widths, 0);
    r.getDoubles(m.parameters());
    return m;
}

} // namespace

void saveTrainerState(const fs::path &path, const TrainerState &s) {
    ByteWriter w;
    w.putString(kStateMagic);
    w.put<std::int64_t>(s.iteration);
    const auto &c = s.cloud;
    w.put<std::int32_t>(c.shDegree);
    w.put<std::int64_t>(c.size());
    w.putDoubles(c.positions);
    w.putDoubles(c.rotations);
    w.putDoubles(c.logScales);
    w.putDoubles(c.rawOpacities);
    w.putDoubles(c.sh);
    w.putDoubles(c.gradAccum);
    w.putArray(c.gradCount.data(), std::size_t(c.gradCount.size()));
    w.putDoubles(c.posGradAccum);
    w.put<std::uint8_t>(s.model.useLbsOffsets);
    w.put<std::uint8_t>(s.model.usePoseRefine);
    w.put<std::uint8_t>(s.model.lbsGradToPositions);
    putMlp(w, s.model.lbsNet);
    putMlp(w, s.model.poseNet);
    for (const AdamState &a : s.adam) {
        w.put<std::int64_t>(a.step);
        w.put<std::int64_t>(a.skippedSteps);
        w.putDoubles(a.m);
        w.putDoubles(a.v);
    }
    writeFileAtomic(path, w.bytes());
}

TrainerState loadTrainerState(const fs::path &path) {
    ByteReader r(path, readFile(path));
    r.expect(kStateMagic);
    TrainerState s;
    s.iteration = r.get<std::int64_t>();
    const auto degree = r.get<std::int32_t>();
    const auto n = r.get<std::int64_t>();
    if (degree < 0 || degree > kMaxShDegree || n < 0 || n > (std::int64_t(1) << 32)) {
        r.fail("bad cloud header");
    }
    auto &c = s.cloud;
    c.resize(n, degree);
    r.getDoubles(c.positions);
    r.getDoubles(c.rotations);
    r.getDoubles(c.logScales);
    r.getDoubles(c.rawOpacities);
    r.getDoubles(c.sh);
    r.getDoubles(c.gradAccum);
    r.getArray(c.gradCount.data(), std::size_t(c.gradCount.size()));
    r.getDoubles(c.posGradAccum);
    s.model.useLbsOffsets = r.get<std::uint8_t>() != 0;
    s.model.usePoseRefine = r.get<std::uint8_t>() != 0;
    s.model.lbsGradToPositions = r.get<std::uint8_t>() != 0;
    s.model.lbsNet = getMlp(r);
    s.model.poseNet = getMlp(r);
    for (AdamState &a : s.adam) {
        a.step = r.get<std::int64_t>();
        a.skippedSteps = r.get<std::int64_t>();
        const std::size_t at = r.position();
        const auto mSize = r.get<std::int64_t>();
        if (mSize < 0 || std::size_t(mSize) * sizeof(double) > r.remaining()) {
            throw DataError(path, "bad optimizer block", at);
        }
        a.m.resize(mSize);
        r.getArray(a.m.data(), std::size_t(mSize));
        a.v.resize(mSize);
        r.getDoubles(a.v);
    }
    if (r.remaining() != 0) {
        r.fail("trailing bytes");
    }
    return s;
}

std::string formatTrainingLog(const std::vector<LogRow> &rows) {
    std::string out = "iter,loss,psnr,count,ms_per_iter\n";
    char buf[160];
    for (const auto &r : rows) {
        std::snprintf(buf, sizeof(buf), "%lld,%.17g,%.17g,%lld,%.3f\n", static_cast<long long>(r.iteration), r.loss,
                      r.psnr, static_cast<long long>(r.count), r.msPerIter);
        out += buf;
    }
    return out;
}

std::string formatDensifyLog(const std::vector<DensifyStats> &rows) {
    std::string out = "step,count_before,n_split,n_clone,n_merge,n_prune,count_after\n";
    for (const auto &r : rows) {
        out += std::to_string(r.step) + "," + std::to_string(r.countBefore) + "," + std::to_string(r.split) + "," +
               std::to_string(r.clone) + "," + std::to_string(r.merge) + "," + std::to_string(r.prune) + "," +
               std::to_string(r.countAfter) + "\n";
    }
    return out;
}

} // namespace artsplat
