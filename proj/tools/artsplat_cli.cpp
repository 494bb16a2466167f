// Copyright Contributors to the artsplat Project
// SPDX-License-Identifier: Apache-2.0
//
// artsplat: synth | train | render | eval | inspect
//
#include "artsplat/io.hpp"
#include "artsplat/synthetic.hpp"
#include "artsplat/trainer.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <iostream>

using namespace artsplat;

namespace {

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

int runSynth(const fs::path &specPath, const fs::path &out) {
    const SyntheticSpec spec = parseSyntheticSpec(readFile(specPath), specPath);
    const SyntheticScene scene = generateSynthetic(spec);
    writeSynthetic(out, scene);
    std::printf("wrote %zu frames x %zu cameras, %lld ground-truth Gaussians to %s\n", scene.views.size(),
                scene.cameras.size(), static_cast<long long>(scene.groundTruth.size()), out.c_str());
    return kOk;
}

int runTrain(const fs::path &data, const fs::path &configPath, const fs::path &out, const fs::path &splitPath,
             const fs::path &resume, int progress) {
    const TrainConfig cfg = readConfig(configPath);
    const Dataset ds = readDataset(data);
    const fs::path split = splitPath.empty() ? data / "split.json" : splitPath;
    std::vector<int> indices;
    if (fs::exists(split)) {
        indices = readSplit(split).train;
    }
    Trainer trainer(readTemplate(data / ds.templatePath), loadFrames(data, ds, indices), cfg);
    if (!resume.empty()) {
        trainer.restore(loadTrainerState(resume / "state.bin"));
    }
    const auto start = std::chrono::steady_clock::now();
    while (!trainer.done()) {
        trainer.step();
        if (progress > 0 && trainer.iteration() % progress == 0) {
            const LogRow &r = trainer.log().back();
            std::fprintf(stderr, "iter %lld loss %.5f psnr %.2f count %lld\n", static_cast<long long>(r.iteration),
                         r.loss, r.psnr, static_cast<long long>(r.count));
        }
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    const TrainedModel model = trainer.finalize();
    saveCheckpoint(out, model, ds.cameras, &trainer.state());
    writeFileAtomic(out / "train_log.csv", formatTrainingLog(trainer.log()));
    writeFileAtomic(out / "densify_log.csv", formatDensifyLog(trainer.densifyLog()));
    writeFileAtomic(out / "config.txt", formatConfig(cfg));
    std::printf("trained %lld iterations in %.1f s; final count %lld\n", static_cast<long long>(trainer.iteration()),
                seconds, static_cast<long long>(model.cloud.size()));
    return kOk;
}

int runRender(const fs::path &ckpt, int cameraId, const fs::path &posePath, const fs::path &out, int repeat) {
    const Checkpoint ck = loadCheckpoint(ckpt);
    const auto cam = ck.cameras.find(cameraId);
    if (cam == ck.cameras.end()) {
        throw DataError(ckpt / "cameras.json", "no camera with id " + std::to_string(cameraId));
    }
    const Pose pose = readPose(posePath);
    if (pose.jointCount() != ck.model.rig.jointCount()) {
        throw DataError(posePath, "pose joint count does not match the template");
    }
    RenderOutput<double> r;
    const auto start = std::chrono::steady_clock::now();
    for (int i = 0; i < std::max(1, repeat); ++i) {
        r = renderModel(ck.model, pose, cam->second);
    }
    const double ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count() / std::max(1, repeat);
    writePpm(out, r.color);
    std::printf("%.3f ms/frame (%.1f FPS)\n", ms, 1000.0 / ms);
    return kOk;
}

int runEval(const fs::path &ckpt, const fs::path &data, const fs::path &splitPath, const fs::path &out) {
    const Checkpoint ck = loadCheckpoint(ckpt);
    const Dataset ds = readDataset(data);
    const Split split = readSplit(splitPath);
    if (split.test.empty()) {
        throw DataError(splitPath, "split has no test records");
    }
    const std::vector<TrainFrame> views = loadFrames(data, ds, split.test);
    const std::vector<ViewScore> scores = evaluate(ck.model, views);
    std::string csv = "record,camera,frame,psnr,ssim\n";
    char line[160];
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const int rec = split.test[i];
        std::snprintf(line, sizeof(line), "%d,%d,%d,%.6f,%.6f\n", rec, ds.records[std::size_t(rec)].camera,
                      scores[i].frame, scores[i].psnr, scores[i].ssim);
        csv += line;
    }
    if (out.empty()) {
        std::fputs(csv.c_str(), stdout);
    } else {
        writeFileAtomic(out, csv);
    }
    std::fprintf(out.empty() ? stderr : stdout, "mean psnr %.4f dB, mean ssim %.5f over %zu views\n",
                 meanPsnr(scores), meanSsim(scores), scores.size());
    return kOk;
}

void printStats(const char *name, const Eigen::ArrayXd &v) {
    if (v.size() == 0) {
        return;
    }
    std::printf("  %-14s min %.5g  mean %.5g  max %.5g\n", name, v.minCoeff(), v.mean(), v.maxCoeff());
}

int runInspect(const fs::path &ckpt) {
    const Checkpoint ck = loadCheckpoint(ckpt);
    const TrainedModel &m = ck.model;
    const GaussianCloudd &c = m.cloud;
    std::printf("gaussians %lld\n", static_cast<long long>(c.size()));
    std::printf("sh degree %d (stored %d)\n", m.shDegree, c.shDegree);
    std::printf("joints %d, template vertices %lld, cached frames %zu\n", m.rig.jointCount(),
                static_cast<long long>(m.rig.vertexCount()), m.frames.size());
    Eigen::ArrayXd opacity(c.size()), maxScale(c.size());
    for (Eigen::Index i = 0; i < c.size(); ++i) {
        opacity[i] = sigmoid(c.rawOpacities[i]);
        maxScale[i] = activateScale<double>(c.logScales.row(i).transpose()).maxCoeff();
    }
    printStats("opacity", opacity);
    printStats("max scale", maxScale);
    printStats("x", c.positions.col(0).array());
    printStats("y", c.positions.col(1).array());
    printStats("z", c.positions.col(2).array());
    std::uintmax_t bytes = 0;
    for (const auto &e : fs::directory_iterator(ckpt)) {
        if (e.is_regular_file() && e.path().filename() != "state.bin") {
            bytes += e.file_size();
        }
    }
    const double cloudBytes = double(c.size()) * double(14 + 3 * (c.shCoeffCount() - 1)) * 4;
    std::printf("network parameters %lld + %lld\n", static_cast<long long>(m.model.lbsNet.parameterCount()),
                static_cast<long long>(m.model.poseNet.parameterCount()));
    std::printf("memory: cloud %.2f MB, checkpoint on disk %.2f MB\n", cloudBytes / 1e6, double(bytes) / 1e6);
    return kOk;
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"Articulated Gaussian splatting: synthesize, train, render, evaluate"};
    app.require_subcommand(1);

    fs::path specPath, out, data, configPath, splitPath, resume, ckpt, posePath;
    int cameraId = 0, repeat = 1, progress = 0;

    auto *synth = app.add_subcommand("synth", "Generate a synthetic articulated dataset");
    synth->add_option("--spec", specPath, "Scene spec (key = value)")->required();
    synth->add_option("--out", out, "Output dataset directory")->required();

    auto *train = app.add_subcommand("train", "Train on a dataset");
    train->add_option("--data", data, "Dataset directory")->required();
    train->add_option("--config", configPath, "Training config (key = value)")->required();
    train->add_option("--out", out, "Checkpoint directory")->required();
    train->add_option("--split", splitPath, "Split file (default: DATA/split.json when present)");
    train->add_option("--resume", resume, "Continue from a checkpoint's saved state");
    train->add_option("--progress", progress, "Print a line every N iterations");

    auto *render = app.add_subcommand("render", "Render one posed frame from a checkpoint");
    render->add_option("--ckpt", ckpt, "Checkpoint directory")->required();
    render->add_option("--camera", cameraId, "Camera id")->required();
    render->add_option("--pose", posePath, "Pose JSON")->required();
    render->add_option("--out", out, "Output PPM")->required();
    render->add_option("--repeat", repeat, "Render N times for timing");

    auto *eval = app.add_subcommand("eval", "PSNR/SSIM on held-out views");
    eval->add_option("--ckpt", ckpt, "Checkpoint directory")->required();
    eval->add_option("--data", data, "Dataset directory")->required();
    eval->add_option("--split", splitPath, "Split file")->required();
    eval->add_option("--out", out, "CSV output (default stdout)");

    auto *inspect = app.add_subcommand("inspect", "Summarize a checkpoint");
    inspect->add_option("--ckpt", ckpt, "Checkpoint directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    try {
        if (synth->parsed()) {
            return runSynth(specPath, out);
        }
        if (train->parsed()) {
            return runTrain(data, configPath, out, splitPath, resume, progress);
        }
        if (render->parsed()) {
            return runRender(ckpt, cameraId, posePath, out, repeat);
        }
        if (eval->parsed()) {
            return runEval(ckpt, data, splitPath, out);
        }
        if (inspect->parsed()) {
            return runInspect(ckpt);
        }
    } catch (const NumericError &e) {
        std::fprintf(stderr, "artsplat: numeric failure: %s\n", e.what());
        return kNumeric;
    } catch (const DataError &e) {
        std::fprintf(stderr, "artsplat: %s\n", e.what());
        return kData;
    } catch (const std::exception &e) {
        std::fprintf(stderr, "artsplat: %s\n", e.what());
        return kData;
    }
    return kUsage;
}
