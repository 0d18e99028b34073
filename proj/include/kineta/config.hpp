#pragma once

// Experiment configuration: one JSON document covering every subsystem, with
// full flag-override mirroring in the CLI. Each run writes its resolved
// configuration next to its outputs so any completed run can be reproduced
// from the snapshot and seed alone.

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "kineta/align.hpp"
#include "kineta/core.hpp"
#include "kineta/diffusion.hpp"
#include "kineta/evalmetrics.hpp"
#include "kineta/motion_gen.hpp"

namespace kineta::config {

using json = nlohmann::json;

enum class AlignMode { fine_grained, full };

inline const char* align_mode_name(AlignMode m) { return m == AlignMode::fine_grained ? "fine_grained" : "full"; }

struct ExperimentConfig {
    uint64_t seed = 1;
    int threads = 2; // replica width for data-parallel training
    std::string out_dir;

    motion::GeneratorConfig dataset;
    int dataset_count = 2000;

    AlignMode align_mode = AlignMode::fine_grained;
    align::AlignerConfig aligner;
    align::AlignerTrainConfig aligner_train;

    diffusion::DenoiserConfig denoiser;
    diffusion::TrainConfig diffusion_train;
    diffusion::ScheduleKind schedule_kind = diffusion::ScheduleKind::linear;
    double guidance_w = 2.5;
    int rounds = 3;
    std::vector<double> fractions = {1.0, 0.5, 0.25};

    metrics::EvaluatorConfig evaluator;
    metrics::EvaluatorTrainConfig evaluator_train;

    void validate() const {
        dataset.validate();
        if (dataset_count < 1) throw ValidationError("config: dataset.count must be >= 1");
        if (diffusion_train.lambda_kp < 0.0) throw ValidationError("config: lambda_kp must be >= 0");
        if (rounds < 1) throw ValidationError("config: rounds must be >= 1");
        if (int(fractions.size()) < rounds)
            throw ValidationError("config: need one re-diffusion fraction per round");
        if (threads < 1) throw ValidationError("config: threads must be >= 1");
        if (denoiser.t_steps < 1) throw ValidationError("config: t_steps must be >= 1");
    }

    json to_json() const {
        return json{
            {"seed", seed},
            {"threads", threads},
            {"out_dir", out_dir},
            {"dataset",
             json{{"count", dataset_count},
                  {"min_commands", dataset.min_commands},
                  {"max_commands", dataset.max_commands},
                  {"min_duration", dataset.min_duration},
                  {"max_duration", dataset.max_duration},
                  {"min_magnitude", dataset.min_magnitude},
                  {"max_magnitude", dataset.max_magnitude},
                  {"fps", dataset.fps}}},
            {"align",
             json{{"mode", align_mode_name(align_mode)},
                  {"model", aligner.to_json()},
                  {"train", aligner_train.to_json()}}},
            {"diffusion",
             json{{"model", denoiser.to_json()},
                  {"train", diffusion_train.to_json()},
                  {"schedule", diffusion::schedule_kind_name(schedule_kind)},
                  {"guidance_w", guidance_w},
                  {"rounds", rounds},
                  {"fractions", fractions}}},
            {"evaluator", json{{"model", evaluator.to_json()}, {"train", evaluator_train.to_json()}}}};
    }

    static ExperimentConfig from_json(const json& j) {
        ExperimentConfig c;
        c.seed = j.value("seed", uint64_t(1));
        c.threads = j.value("threads", 2);
        c.out_dir = j.value("out_dir", std::string());
        if (j.contains("dataset")) {
            const auto& d = j.at("dataset");
            c.dataset_count = d.value("count", c.dataset_count);
            c.dataset.min_commands = d.value("min_commands", c.dataset.min_commands);
            c.dataset.max_commands = d.value("max_commands", c.dataset.max_commands);
            c.dataset.min_duration = d.value("min_duration", c.dataset.min_duration);
            c.dataset.max_duration = d.value("max_duration", c.dataset.max_duration);
            c.dataset.min_magnitude = d.value("min_magnitude", c.dataset.min_magnitude);
            c.dataset.max_magnitude = d.value("max_magnitude", c.dataset.max_magnitude);
            c.dataset.fps = d.value("fps", c.dataset.fps);
        }
        if (j.contains("align")) {
            const auto& a = j.at("align");
            std::string mode = a.value("mode", std::string("fine_grained"));
            if (mode == "fine_grained")
                c.align_mode = AlignMode::fine_grained;
            else if (mode == "full")
                c.align_mode = AlignMode::full;
            else
                throw ValidationError("config: unknown align.mode '" + mode + "'");
            if (a.contains("model")) c.aligner = align::AlignerConfig::from_json(a.at("model"));
            if (a.contains("train")) {
                const auto& t = a.at("train");
                c.aligner_train.epochs = t.value("epochs", c.aligner_train.epochs);
                c.aligner_train.batch = t.value("batch", c.aligner_train.batch);
                c.aligner_train.lr = t.value("lr", c.aligner_train.lr);
                c.aligner_train.tau = t.value("tau", c.aligner_train.tau);
                c.aligner_train.full_align = t.value("full_align", c.aligner_train.full_align);
                c.aligner_train.seed = t.value("seed", c.aligner_train.seed);
            }
        }
        if (j.contains("diffusion")) {
            const auto& d = j.at("diffusion");
            if (d.contains("model")) c.denoiser = diffusion::DenoiserConfig::from_json(d.at("model"));
            if (d.contains("train")) {
                const auto& t = d.at("train");
                c.diffusion_train.epochs = t.value("epochs", c.diffusion_train.epochs);
                c.diffusion_train.batch = t.value("batch", c.diffusion_train.batch);
                c.diffusion_train.lr = t.value("lr", c.diffusion_train.lr);
                c.diffusion_train.lambda_kp = t.value("lambda_kp", c.diffusion_train.lambda_kp);
                c.diffusion_train.p_uncond = t.value("p_uncond", c.diffusion_train.p_uncond);
                c.diffusion_train.p_mask = t.value("p_mask", c.diffusion_train.p_mask);
                c.diffusion_train.tau = t.value("tau", c.diffusion_train.tau);
                c.diffusion_train.use_guide = t.value("use_guide", c.diffusion_train.use_guide);
                c.diffusion_train.guide_t_fraction =
                    t.value("guide_t_fraction", c.diffusion_train.guide_t_fraction);
                c.diffusion_train.replicas = t.value("replicas", c.diffusion_train.replicas);
                c.diffusion_train.seed = t.value("seed", c.diffusion_train.seed);
            }
            std::string sk = d.value("schedule", std::string("linear"));
            if (sk == "linear")
                c.schedule_kind = diffusion::ScheduleKind::linear;
            else if (sk == "cosine")
                c.schedule_kind = diffusion::ScheduleKind::cosine;
            else
                throw ValidationError("config: unknown schedule '" + sk + "'");
            c.guidance_w = d.value("guidance_w", c.guidance_w);
            c.rounds = d.value("rounds", c.rounds);
            if (d.contains("fractions")) c.fractions = d.at("fractions").get<std::vector<double>>();
        }
        if (j.contains("evaluator")) {
            const auto& e = j.at("evaluator");
            if (e.contains("model")) c.evaluator = metrics::EvaluatorConfig::from_json(e.at("model"));
            if (e.contains("train")) {
                const auto& t = e.at("train");
                c.evaluator_train.epochs = t.value("epochs", c.evaluator_train.epochs);
                c.evaluator_train.batch = t.value("batch", c.evaluator_train.batch);
                c.evaluator_train.lr = t.value("lr", c.evaluator_train.lr);
                c.evaluator_train.target_margin = t.value("target_margin", c.evaluator_train.target_margin);
                c.evaluator_train.seed = t.value("seed", c.evaluator_train.seed);
            }
        }
        return c;
    }
};

inline ExperimentConfig load_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ValidationError("config: cannot open " + path);
    json j;
    try {
        j = json::parse(is);
    } catch (const json::parse_error& e) {
        throw ParseError("config: malformed JSON in " + path + ": " + e.what(), e.byte);
    }
    return ExperimentConfig::from_json(j);
}

// Resolved snapshot written into the run's output directory.
inline void write_resolved_config(const ExperimentConfig& cfg, const std::string& out_dir,
                                  const std::string& subcommand, const json& run_args) {
    std::filesystem::create_directories(out_dir);
    json j = cfg.to_json();
    j["run"] = json{{"subcommand", subcommand}, {"args", run_args}};
    std::ofstream os(std::filesystem::path(out_dir) / "config.resolved.json");
    os << j.dump(2) << '\n';
    if (!os) throw ValidationError("config: cannot write resolved snapshot in " + out_dir);
}

}  // namespace kineta::config
