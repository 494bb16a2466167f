// Copyright Contributors to the artsplat Project
// SPDX-License-Identifier: Apache-2.0
//
// On-disk formats: PPM/PGM images, JSON template/pose/dataset/split files, flat key=value
// training configs, binary PLY clouds, checkpoints and resumable trainer state.
//
#pragma once

#include "artsplat/trainer.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace artsplat {

namespace fs = std::filesystem;

/// Malformed or missing input. The message names the file and, when known, the byte offset.
class DataError : public std::runtime_error {
  public:
    DataError(const fs::path &path, const std::string &what, std::optional<std::size_t> offset = std::nullopt);
    const fs::path &path() const { return mPath; }
    std::optional<std::size_t> offset() const { return mOffset; }

  private:
    fs::path mPath;
    std::optional<std::size_t> mOffset;
};

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
void writeFileAtomic(const fs::path &path, const std::string &bytes);
std::string readFile(const fs::path &path);

/// Binary 8-bit PPM (P6) in [0, 1]; values are clamped and rounded on write.
ImageD readPpm(const fs::path &path);
void writePpm(const fs::path &path, const ImageD &image);
/// Binary 8-bit PGM (P5), one channel.
ImageD readPgm(const fs::path &path);
void writePgm(const fs::path &path, const ImageD &image);

SkinnedTemplate readTemplate(const fs::path &path);
void writeTemplate(const fs::path &path, const SkinnedTemplate &rig);

/// {"rotations": [[x, y, z], ...], "translation": [x, y, z]}
Pose readPose(const fs::path &path);
void writePose(const fs::path &path, const Pose &pose);

struct DatasetRecord {
    std::string image; // relative to the dataset directory
    std::string mask;
    std::string pose;
    int camera = 0;
    int frame = 0;
};

struct Dataset {
    std::string templatePath = "template.json";
    std::map<int, Camerad> cameras;
    std::vector<DatasetRecord> records;
};

/// dataset.json inside `dir`.
Dataset readDataset(const fs::path &dir);
void writeDataset(const fs::path &dir, const Dataset &ds);

std::map<int, Camerad> readCameras(const fs::path &path);
void writeCameras(const fs::path &path, const std::map<int, Camerad> &cameras);

/// Record indices into Dataset::records.
struct Split {
    std::vector<int> train;
    std::vector<int> test;
};
Split readSplit(const fs::path &path);
void writeSplit(const fs::path &path, const Split &split);

/// Loads images, masks and poses of the given records (all records when `indices` is empty) and
/// checks them against the camera resolution.
std::vector<TrainFrame> loadFrames(const fs::path &dir, const Dataset &ds, const std::vector<int> &indices = {});

/// Flat `key = value` lines; '#' starts a comment. Unknown keys are an error.
TrainConfig parseConfig(const std::string &text, const fs::path &origin = "<config>");
TrainConfig readConfig(const fs::path &path);
std::string formatConfig(const TrainConfig &cfg);

/// Binary little-endian float32 PLY with the usual splatting property names.
void writePly(const fs::path &path, const GaussianCloudd &cloud);
GaussianCloudd readPly(const fs::path &path);

struct Checkpoint {
    TrainedModel model;
    std::map<int, Camerad> cameras;
};

/// Directory with cloud.ply, networks.json/.bin, weights.bin, inference.json, template.json and
/// cameras.json. Files are written into a staging directory that replaces `dir` at the end.
void saveCheckpoint(const fs::path &dir, const TrainedModel &model, const std::map<int, Camerad> &cameras,
                    const TrainerState *state = nullptr);
Checkpoint loadCheckpoint(const fs::path &dir);

void saveTrainerState(const fs::path &path, const TrainerState &state);
TrainerState loadTrainerState(const fs::path &path);

std::string formatTrainingLog(const std::vector<LogRow> &rows);
std::string formatDensifyLog(const std::vector<DensifyStats> &rows);

} // namespace artsplat
