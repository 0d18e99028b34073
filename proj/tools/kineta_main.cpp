// kineta command-line interface.
//
// Subcommands: datagen | train-aligner | train-evaluator | train | sample |
// refine | eval | extract-kp | decompose | report. Every run resolves its
// configuration (defaults < --config file < explicit flags), writes the
// resolved snapshot into its output directory, and is exactly reproducible
// from that snapshot and seed. Exit codes: 0 success, 2 validation error,
// 1 runtime failure. Lines starting with "@metric " form the machine-readable
// metrics channel; everything else is human-oriented logging.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "kineta/align.hpp"
#include "kineta/checkpoint.hpp"
#include "kineta/config.hpp"
#include "kineta/core.hpp"
#include "kineta/diffusion.hpp"
#include "kineta/evalmetrics.hpp"
#include "kineta/kp.hpp"
#include "kineta/llm.hpp"
#include "kineta/motion_gen.hpp"
#include "kineta/motion_io.hpp"
#include "kineta/report.hpp"
#include "kineta/text.hpp"

namespace fs = std::filesystem;
using namespace kineta;
using nlohmann::json;

namespace {

void metric_line(const json& j) { std::printf("@metric %s\n", j.dump().c_str()); }

void log_line(const std::string& s) { std::printf("%s\n", s.c_str()); }

// Marks the output directory incomplete until the run finishes.
struct RunGuard {
    fs::path marker;
    bool armed = false;

    explicit RunGuard(const std::string& out_dir) {
        fs::create_directories(out_dir);
        marker = fs::path(out_dir) / ".incomplete";
        std::ofstream(marker) << "run in progress\n";
        armed = true;
    }
    void complete() {
        if (armed) fs::remove(marker);
        armed = false;
    }
};

struct CommonArgs {
    std::string config_path;
    std::string out_dir;
    uint64_t seed = 0;
    bool seed_set = false;

    config::ExperimentConfig resolve() const {
        auto cfg = config_path.empty() ? config::ExperimentConfig{} : config::load_config_file(config_path);
        if (seed_set) cfg.seed = seed;
        if (!out_dir.empty()) cfg.out_dir = out_dir;
        return cfg;
    }
};

kp::KpCatalog catalog_for(const motion::Skeleton& skel) { return kp::default_catalog(skel); }

align::AlignerConfig aligner_config_for(const config::ExperimentConfig& cfg, const kp::KpCatalog& cat) {
    auto a = cfg.aligner;
    a.n_kp = cat.n_kp();
    a.seed = derive_seed(cfg.seed, 0xa);
    return a;
}

// ---- datagen ----

struct DatagenArgs {
    CommonArgs common;
    int count = -1;
};

int run_datagen(const DatagenArgs& args) {
    auto cfg = args.common.resolve();
    if (args.count >= 0) cfg.dataset_count = args.count;
    cfg.validate();
    if (cfg.out_dir.empty()) throw ValidationError("datagen: --out is required");
    RunGuard guard(cfg.out_dir);
    config::write_resolved_config(cfg, cfg.out_dir, "datagen", json{{"count", cfg.dataset_count}});
    log_line("generating " + std::to_string(cfg.dataset_count) + " records (seed " + std::to_string(cfg.seed) +
             ")");
    auto records = motion::generate_dataset(cfg.dataset_count, cfg.dataset, cfg.seed);
    motion::write_dataset(records, cfg.out_dir, cfg.seed);
    metric_line(json{{"event", "datagen"}, {"count", records.size()}, {"dir", cfg.out_dir}});
    guard.complete();
    return 0;
}

// ---- extract-kp ----

struct ExtractArgs {
    CommonArgs common;
    std::string motion_path;
    std::string mode = "hard";
    double tau = 1.0;
};

int run_extract(const ExtractArgs& args) {
    auto cfg = args.common.resolve();
    if (cfg.out_dir.empty()) throw ValidationError("extract-kp: --out is required");
    RunGuard guard(cfg.out_dir);
    config::write_resolved_config(cfg, cfg.out_dir, "extract-kp",
                                  json{{"motion", args.motion_path}, {"mode", args.mode}, {"tau", args.tau}});
    auto rec = motion::read_motion_file(args.motion_path);
    auto cat = catalog_for(rec.motion.skeleton);
    kp::KpSequence seq;
    if (args.mode == "hard")
        seq = kp::extract_hard(rec.motion, cat);
    else if (args.mode == "smooth")
        seq = kp::extract_smooth(rec.motion, cat, args.tau);
    else
        throw ValidationError("extract-kp: mode must be hard or smooth");
    kp::write_kp_csv(seq, cat, rec.motion.skeleton, (fs::path(cfg.out_dir) / "kp.csv").string());
    std::ofstream cat_os(fs::path(cfg.out_dir) / "catalog.json");
    cat_os << kp::catalog_to_json(cat).dump(2) << '\n';
    metric_line(json{{"event", "extract-kp"}, {"frames", seq.t_len}, {"n_kp", seq.n_kp}});
    guard.complete();
    return 0;
}

// ---- decompose ----

struct DecomposeArgs {
    CommonArgs common;
    std::string prompt;
    bool use_llm = false;
};

int run_decompose(const DecomposeArgs& args) {
    text::DecomposedPrompt parts;
    if (args.use_llm)
        parts = text::decompose_llm(args.prompt, text::LlmClientConfig::from_env());
    else
        parts = text::decompose_rules(args.prompt);
    for (size_t i = 0; i < parts.parts.size(); ++i)
        log_line(std::to_string(i + 1) + ". " + parts.parts[i]);
    metric_line(json{{"event", "decompose"},
                     {"n", parts.parts.size()},
                     {"source", text::prompt_source_name(parts.source)}});
    if (!args.common.out_dir.empty()) {
        auto cfg = args.common.resolve();
        RunGuard guard(cfg.out_dir);
        config::write_resolved_config(cfg, cfg.out_dir, "decompose",
                                      json{{"text", args.prompt}, {"llm", args.use_llm}});
        json out{{"full_text", parts.full_text},
                 {"parts", parts.parts},
                 {"source", text::prompt_source_name(parts.source)}};
        std::ofstream os(fs::path(cfg.out_dir) / "parts.json");
        os << out.dump(2) << '\n';
        guard.complete();
    }
    return 0;
}

// ---- train-aligner ----

struct TrainAlignerArgs {
    CommonArgs common;
    std::string data_dir;
    int epochs = -1;
    std::string mode;
};

int run_train_aligner(const TrainAlignerArgs& args) {
    auto cfg = args.common.resolve();
    if (args.epochs >= 0) cfg.aligner_train.epochs = args.epochs;
    if (!args.mode.empty()) {
        if (args.mode == "fine_grained")
            cfg.align_mode = config::AlignMode::fine_grained;
        else if (args.mode == "full")
            cfg.align_mode = config::AlignMode::full;
        else
            throw ValidationError("train-aligner: --mode must be fine_grained or full");
    }
    cfg.aligner_train.full_align = cfg.align_mode == config::AlignMode::full;
    cfg.validate();
    if (cfg.out_dir.empty()) throw ValidationError("train-aligner: --out is required");
    RunGuard guard(cfg.out_dir);
    config::write_resolved_config(cfg, cfg.out_dir, "train-aligner", json{{"data", args.data_dir}});

    auto records = motion::read_dataset(args.data_dir);
    if (records.empty()) throw ValidationError("train-aligner: empty dataset");
    auto cat = catalog_for(records[0].motion.skeleton);
    align::AlignerModel model(aligner_config_for(cfg, cat));
    cfg.aligner_train.seed = derive_seed(cfg.seed, 0xa7);

    auto ckpt_path = (fs::path(cfg.out_dir) / "aligner.ckpt").string();
    auto stats = align::train_aligner(model, records, cat, cfg.aligner_train, [&](int epoch, double loss) {
        metric_line(json{{"event", "aligner_epoch"}, {"epoch", epoch}, {"loss", loss}});
        align::save_aligner(ckpt_path, model,
                            json{{"align_mode", config::align_mode_name(cfg.align_mode)}, {"epoch", epoch}});
    });
    align::save_aligner(ckpt_path, model,
                        json{{"align_mode", config::align_mode_name(cfg.align_mode)},
                             {"epochs", cfg.aligner_train.epochs}});
    double localization = align::localization_rate(model, records, cfg.aligner_train.full_align);
    double reduction = stats.initial_loss > 0 ? 1.0 - stats.final_loss / stats.initial_loss : 0.0;
    metric_line(json{{"event", "aligner_done"},
                     {"initial_loss", stats.initial_loss},
                     {"final_loss", stats.final_loss},
                     {"loss_reduction", reduction},
                     {"localization_rate", localization}});
    json summary{{"initial_loss", stats.initial_loss},
                 {"final_loss", stats.final_loss},
                 {"loss_reduction", reduction},
                 {"localization_rate", localization},
                 {"epoch_loss", stats.epoch_loss}};
    std::ofstream os(fs::path(cfg.out_dir) / "training.json");
    os << summary.dump(2) << '\n';
    guard.complete();
    return 0;
}

// ---- train-evaluator ----

struct TrainEvaluatorArgs {
    CommonArgs common;
    std::string data_dir;
    std::string val_dir;
    int epochs = -1;
};

int run_train_evaluator(const TrainEvaluatorArgs& args) {
    auto cfg = args.common.resolve();
    if (args.epochs >= 0) cfg.evaluator_train.epochs = args.epochs;
    cfg.validate();
    if (cfg.out_dir.empty()) throw ValidationError("train-evaluator: --out is required");
    RunGuard guard(cfg.out_dir);
    config::write_resolved_config(cfg, cfg.out_dir, "train-evaluator",
                                  json{{"data", args.data_dir}, {"val", args.val_dir}});

    auto records = motion::read_dataset(args.data_dir);
    std::vector<motion::DatasetRecord> val;
    if (!args.val_dir.empty()) {
        val = motion::read_dataset(args.val_dir);
    } else {
        // hold out the last sixth when no separate validation set is given
        size_t keep = records.size() - records.size() / 6;
        val.assign(records.begin() + long(keep), records.end());
        records.resize(keep);
    }
    auto ecfg = cfg.evaluator;
    ecfg.input_dim = records.at(0).motion.skeleton.n_joints() * 3;
    ecfg.seed = derive_seed(cfg.seed, 0xe);
    cfg.evaluator_train.seed = derive_seed(cfg.seed, 0xe7);
    metrics::Evaluator model(ecfg);
    auto stats = metrics::train_evaluator(model, records, val, cfg.evaluator_train, [&](int epoch, double loss) {
        metric_line(json{{"event", "evaluator_epoch"}, {"epoch", epoch}, {"loss", loss}});
    });
    if (!stats.margin_reached)
        log_line("warning: validation margin " + std::to_string(stats.val_margin) + " below target " +
                 std::to_string(cfg.evaluator_train.target_margin) + "; model saved anyway");
    metrics::save_evaluator((fs::path(cfg.out_dir) / "evaluator.ckpt").string(), model,
                            json{{"val_margin", stats.val_margin}, {"matched_rate", stats.val_matched_rate}});
    metric_line(json{{"event", "evaluator_done"},
                     {"val_margin", stats.val_margin},
                     {"matched_rate", stats.val_matched_rate}});
    guard.complete();
    return 0;
}

// ---- train ----

struct TrainArgs {
    CommonArgs common;
    std::string data_dir;
    std::string aligner_path;
    std::string backbone;
    double lambda_kp = -1.0;
    int epochs = -1;
    int guide_flag = -1; // -1 auto, 0 off, 1 on
};

int run_train(const TrainArgs& args) {
    auto cfg = args.common.resolve();
    if (args.lambda_kp >= 0.0) cfg.diffusion_train.lambda_kp = args.lambda_kp;
    if (args.epochs >= 0) cfg.diffusion_train.epochs = args.epochs;
    if (!args.backbone.empty()) {
        if (args.backbone == "encoder")
            cfg.denoiser.backbone = diffusion::Backbone::encoder;
        else if (args.backbone == "decoder")
            cfg.denoiser.backbone = diffusion::Backbone::decoder;
        else
            throw ValidationError("train: --backbone must be encoder or decoder");
    }
    cfg.validate();
    if (cfg.out_dir.empty()) throw ValidationError("train: --out is required");
    if (args.aligner_path.empty()) throw ValidationError("train: --aligner is required");
    RunGuard guard(cfg.out_dir);

    auto records = motion::read_dataset(args.data_dir);
    if (records.empty()) throw ValidationError("train: empty dataset");
    auto cat = catalog_for(records[0].motion.skeleton);
    auto aligner = align::load_aligner(args.aligner_path);

    auto dcfg = cfg.denoiser;
    dcfg.input_dim = records[0].motion.skeleton.n_joints() * 3;
    dcfg.n_kp = cat.n_kp();
    dcfg.d_text = aligner.cfg.d_text;
    dcfg.seed = derive_seed(cfg.seed, 0xd);

    auto tcfg = cfg.diffusion_train;
    tcfg.replicas = cfg.threads;
    tcfg.seed = derive_seed(cfg.seed, 0xd7);
    if (args.guide_flag >= 0)
        tcfg.use_guide = args.guide_flag == 1;
    else
        tcfg.use_guide = dcfg.backbone == diffusion::Backbone::decoder && tcfg.lambda_kp > 0.0;
    if (tcfg.use_guide && dcfg.backbone != diffusion::Backbone::decoder)
        throw ValidationError("train: guide tokens require the decoder backbone");

    config::write_resolved_config(cfg, cfg.out_dir, "train",
                                  json{{"data", args.data_dir},
                                       {"aligner", args.aligner_path},
                                       {"backbone", diffusion::backbone_name(dcfg.backbone)},
                                       {"use_guide", tcfg.use_guide}});

    auto sched = diffusion::make_schedule(dcfg.t_steps, cfg.schedule_kind);
    diffusion::Denoiser model(dcfg);
    auto fingerprint = ckpt::fingerprint(aligner.params);
    auto ckpt_path = (fs::path(cfg.out_dir) / "model.ckpt").string();
    log_line("training " + std::string(diffusion::backbone_name(dcfg.backbone)) +
             " backbone, lambda_kp=" + std::to_string(tcfg.lambda_kp) +
             ", guide=" + (tcfg.use_guide ? "on" : "off"));
    auto stats = diffusion::train(model, records, &aligner, cat, sched, tcfg, [&](int epoch, double loss) {
        metric_line(json{{"event", "train_epoch"}, {"epoch", epoch}, {"loss", loss}});
        diffusion::save_denoiser(ckpt_path, model, sched, cat, fingerprint,
                                 json{{"epoch", epoch}, {"train", tcfg.to_json()}});
    });
    diffusion::save_denoiser(ckpt_path, model, sched, cat, fingerprint,
                             json{{"epochs", tcfg.epochs}, {"train", tcfg.to_json()}});
    json summary{{"epoch_loss", stats.epoch_loss},
                 {"epoch_recon", stats.epoch_recon},
                 {"epoch_align", stats.epoch_align}};
    std::ofstream os(fs::path(cfg.out_dir) / "training.json");
    os << summary.dump(2) << '\n';
    metric_line(json{{"event", "train_done"}, {"final_loss", stats.epoch_loss.back()}});
    guard.complete();
    return 0;
}

// ---- sample / refine ----

struct SampleArgs {
    CommonArgs common;
    std::string model_path;
    std::string aligner_path;
    std::vector<std::string> prompts;
    std::string prompts_dir;
    int prompt_count = 0; // 0 = all
    int frames = 120;
    double guidance = -1.0;
    bool use_llm = false;
    int rounds = -1; // refine only
    std::string fractions_csv;
};

std::vector<double> parse_fractions(const std::string& csv) {
    std::vector<double> out;
    std::string cur;
    for (char c : csv + ",") {
        if (c == ',') {
            if (!trim(cur).empty()) out.push_back(std::stod(trim(cur)));
            cur.clear();
        } else
            cur += c;
    }
    return out;
}

int run_sample(const SampleArgs& args, bool refine_mode) {
    auto cfg = args.common.resolve();
    if (args.guidance >= 0.0) cfg.guidance_w = args.guidance;
    if (refine_mode && args.rounds >= 0) cfg.rounds = args.rounds;
    if (!args.fractions_csv.empty()) cfg.fractions = parse_fractions(args.fractions_csv);
    cfg.validate();
    if (cfg.out_dir.empty()) throw ValidationError("sample: --out is required");
    RunGuard guard(cfg.out_dir);

    auto loaded = diffusion::load_denoiser(args.model_path);
    auto aligner = align::load_aligner(args.aligner_path);
    auto skel = motion::default_skeleton();
    double fps = 20.0;

    struct Job {
        text::DecomposedPrompt prompt;
        int t_len = 0;
    };
    std::vector<Job> jobs;
    if (!args.prompts_dir.empty()) {
        auto records = motion::read_dataset(args.prompts_dir);
        size_t n = args.prompt_count > 0 ? std::min(records.size(), size_t(args.prompt_count)) : records.size();
        for (size_t i = 0; i < n; ++i)
            jobs.push_back({text::script_to_ground_truth(records[i].script), records[i].motion.t_len});
        if (!records.empty()) {
            skel = records[0].motion.skeleton;
            fps = records[0].motion.fps;
        }
    }
    for (const auto& p : args.prompts) {
        text::DecomposedPrompt prompt = args.use_llm
                                            ? text::decompose_llm(p, text::LlmClientConfig::from_env())
                                            : text::decompose_rules(p);
        jobs.push_back({std::move(prompt), args.frames});
    }
    if (jobs.empty()) throw ValidationError("sample: provide --text or --prompts");

    config::write_resolved_config(cfg, cfg.out_dir, refine_mode ? "refine" : "sample",
                                  json{{"model", args.model_path},
                                       {"aligner", args.aligner_path},
                                       {"prompts", jobs.size()},
                                       {"rounds", refine_mode ? cfg.rounds : 1}});

    auto cat = loaded.catalog;
    std::ofstream diag(fs::path(cfg.out_dir) / "diagnostics.csv");
    diag << "prompt,round,mean_guide_norm,mean_d_hat\n";

    struct Result {
        motion::MotionSequence m;
        std::vector<diffusion::RoundDiagnostics> rounds;
        std::string full_text;
    };
    std::vector<Result> results(jobs.size());
    parallel_for(
        jobs.size(),
        [&](size_t i) {
            Rng rng(derive_seed(cfg.seed, i));
            const auto& job = jobs[i];
            Result res;
            res.full_text = job.prompt.full_text;
            if (refine_mode) {
                auto r = diffusion::refine(loaded.model, aligner, job.prompt, cat, loaded.schedule, cfg.rounds,
                                           cfg.fractions, cfg.guidance_w, job.t_len, skel, fps, rng);
                res.m = std::move(r.motion);
                res.rounds = std::move(r.rounds);
            } else {
                auto cond = diffusion::make_condition(aligner, job.prompt);
                res.m = diffusion::sample(loaded.model, cond, loaded.schedule, cfg.guidance_w, job.t_len, skel,
                                          fps, rng);
                auto targets = align::part_targets(aligner, job.prompt, job.t_len);
                diffusion::RoundDiagnostics d;
                d.round = 1;
                d.mean_guide_norm = diffusion::mean_guide_norm(diffusion::compute_guide(res.m, targets, cat));
                d.mean_similarity = align::text_motion_similarity(aligner, job.prompt, res.m, cat).mean;
                res.rounds = {d};
            }
            results[i] = std::move(res);
        },
        size_t(cfg.threads));

    char buf[64];
    for (size_t i = 0; i < results.size(); ++i) {
        motion::DatasetRecord rec;
        rec.motion = results[i].m;
        rec.script.commands.push_back({motion::Verb::idle, results[i].m.t_len, 0.0});
        rec.segment_bounds = {{0, results[i].m.t_len}};
        rec.full_text = results[i].full_text;
        std::snprintf(buf, sizeof(buf), "sample_%04zu.kmo", i);
        motion::write_motion_file(rec, (fs::path(cfg.out_dir) / buf).string(), "sampler");
        for (const auto& r : results[i].rounds) {
            std::snprintf(buf, sizeof(buf), "%zu,%d,%.6f,%.6f", i, r.round, r.mean_guide_norm,
                          r.mean_similarity);
            diag << buf << '\n';
        }
    }
    metric_line(json{{"event", refine_mode ? "refine" : "sample"}, {"prompts", jobs.size()}});
    guard.complete();
    return 0;
}

// ---- eval ----

struct EvalArgs {
    CommonArgs common;
    std::string data_dir;
    std::string evaluator_path;
    std::string aligner_path;
    std::vector<std::string> systems; // name=ckpt[,refine]
    double guidance = -1.0;
};

int run_eval(const EvalArgs& args) {
    auto cfg = args.common.resolve();
    if (args.guidance >= 0.0) cfg.guidance_w = args.guidance;
    cfg.validate();
    if (cfg.out_dir.empty()) throw ValidationError("eval: --out is required");
    if (args.systems.empty()) throw ValidationError("eval: at least one --system is required");
    RunGuard guard(cfg.out_dir);
    config::write_resolved_config(cfg, cfg.out_dir, "eval",
                                  json{{"data", args.data_dir},
                                       {"evaluator", args.evaluator_path},
                                       {"aligner", args.aligner_path},
                                       {"systems", args.systems}});

    auto test = motion::read_dataset(args.data_dir);
    auto evaluator = metrics::load_evaluator(args.evaluator_path);
    auto aligner = align::load_aligner(args.aligner_path);
    auto cat = catalog_for(test.at(0).motion.skeleton);
    auto real = metrics::real_features(evaluator, test);

    std::vector<metrics::MetricReport> rows;
    rows.push_back(metrics::real_control_row(real, test, aligner, cat, derive_seed(cfg.seed, 0xfe)));
    metric_line(json{{"event", "eval_row"}, {"system", "real"}, {"fid", rows.back().fid_value}});

    for (const auto& sys : args.systems) {
        auto eq = sys.find('=');
        if (eq == std::string::npos) throw ValidationError("eval: --system expects name=checkpoint[,refine]");
        std::string name = sys.substr(0, eq);
        std::string rest = sys.substr(eq + 1);
        bool use_refine = false;
        auto comma = rest.find(',');
        std::string path = rest;
        if (comma != std::string::npos) {
            std::string flag = rest.substr(comma + 1);
            path = rest.substr(0, comma);
            if (flag == "refine")
                use_refine = true;
            else
                throw ValidationError("eval: unknown system flag '" + flag + "'");
        }
        auto loaded = diffusion::load_denoiser(path);
        metrics::SystemSpec spec;
        spec.name = name;
        spec.model = &loaded.model;
        spec.schedule = &loaded.schedule;
        spec.guidance_w = cfg.guidance_w;
        spec.use_refine = use_refine;
        spec.rounds = cfg.rounds;
        spec.fractions = cfg.fractions;
        log_line("evaluating system " + name + (use_refine ? " (guided refinement)" : ""));
        auto ev = metrics::evaluate_system(spec, test, evaluator, aligner, cat, real,
                                           derive_seed(cfg.seed, fnv1a(name.data(), name.size())));
        rows.push_back(ev.report);
        metric_line(json{{"event", "eval_row"},
                         {"system", name},
                         {"r_top3", ev.report.r_top3},
                         {"fid", ev.report.fid_value},
                         {"diversity", ev.report.diversity_value},
                         {"mean_d_hat", ev.report.mean_d_hat}});
    }
    metrics::write_reports_csv(rows, (fs::path(cfg.out_dir) / "report.csv").string());
    guard.complete();
    return 0;
}

// ---- report ----

struct ReportArgs {
    CommonArgs common;
    std::vector<std::string> inputs;
};

int run_report(const ReportArgs& args) {
    auto cfg = args.common.resolve();
    if (args.inputs.empty()) throw ValidationError("report: at least one --in file is required");
    std::vector<metrics::MetricReport> rows;
    for (const auto& path : args.inputs) {
        auto some = metrics::read_reports_csv(path);
        rows.insert(rows.end(), some.begin(), some.end());
    }
    auto table = report::comparison_table(rows);
    for (const auto& w : table.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
    std::fputs(table.text.c_str(), stdout);
    if (!cfg.out_dir.empty()) {
        RunGuard guard(cfg.out_dir);
        config::write_resolved_config(cfg, cfg.out_dir, "report", json{{"inputs", args.inputs}});
        std::ofstream os(fs::path(cfg.out_dir) / "table.txt");
        os << table.text;
        report::write_metric_series(rows, cfg.out_dir);
        guard.complete();
    }
    return 0;
}

void add_common(CLI::App* sub, CommonArgs& common) {
    sub->add_option("--config", common.config_path, "experiment config JSON");
    sub->add_option("--out", common.out_dir, "output directory");
    auto* seed_opt = sub->add_option("--seed", common.seed, "random seed");
    seed_opt->each([&common](const std::string&) { common.seed_set = true; });
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"kineta: text-to-motion generation with kinematic-phrase alignment"};
    app.require_subcommand(1);

    DatagenArgs datagen;
    auto* sub_datagen = app.add_subcommand("datagen", "generate a synthetic motion dataset");
    add_common(sub_datagen, datagen.common);
    sub_datagen->add_option("--count", datagen.count, "number of records");

    ExtractArgs extract;
    auto* sub_extract = app.add_subcommand("extract-kp", "extract kinematic phrases from a motion file");
    add_common(sub_extract, extract.common);
    sub_extract->add_option("--motion", extract.motion_path, "motion file")->required();
    sub_extract->add_option("--mode", extract.mode, "hard|smooth");
    sub_extract->add_option("--tau", extract.tau, "smooth temperature");

    DecomposeArgs decompose;
    auto* sub_decompose = app.add_subcommand("decompose", "decompose a prompt into sub-sentences");
    add_common(sub_decompose, decompose.common);
    sub_decompose->add_option("--text", decompose.prompt, "prompt text")->required();
    sub_decompose->add_flag("--llm", decompose.use_llm, "use the chat-completion agent (env-configured)");

    TrainAlignerArgs ta;
    auto* sub_ta = app.add_subcommand("train-aligner", "train the text-KP aligner");
    add_common(sub_ta, ta.common);
    sub_ta->add_option("--data", ta.data_dir, "training dataset directory")->required();
    sub_ta->add_option("--epochs", ta.epochs, "training epochs");
    sub_ta->add_option("--mode", ta.mode, "fine_grained|full");

    TrainEvaluatorArgs te;
    auto* sub_te = app.add_subcommand("train-evaluator", "train the contrastive evaluator");
    add_common(sub_te, te.common);
    sub_te->add_option("--data", te.data_dir, "training dataset directory")->required();
    sub_te->add_option("--val", te.val_dir, "validation dataset directory");
    sub_te->add_option("--epochs", te.epochs, "training epochs");

    TrainArgs train;
    auto* sub_train = app.add_subcommand("train", "train a motion generator");
    add_common(sub_train, train.common);
    sub_train->add_option("--data", train.data_dir, "training dataset directory")->required();
    sub_train->add_option("--aligner", train.aligner_path, "aligner checkpoint")->required();
    sub_train->add_option("--backbone", train.backbone, "encoder|decoder");
    sub_train->add_option("--lambda-kp", train.lambda_kp, "alignment loss coefficient");
    sub_train->add_option("--epochs", train.epochs, "training epochs");
    sub_train->add_flag("--guide", [&train](int64_t) { train.guide_flag = 1; },
                        "train with guide tokens (decoder only)");
    sub_train->add_flag("--no-guide", [&train](int64_t) { train.guide_flag = 0; },
                        "train without guide tokens");

    SampleArgs sample;
    auto* sub_sample = app.add_subcommand("sample", "generate motions from prompts");
    add_common(sub_sample, sample.common);
    sub_sample->add_option("--model", sample.model_path, "generator checkpoint")->required();
    sub_sample->add_option("--aligner", sample.aligner_path, "aligner checkpoint")->required();
    sub_sample->add_option("--text", sample.prompts, "prompt text (repeatable)");
    sub_sample->add_option("--prompts", sample.prompts_dir, "dataset directory supplying prompts");
    sub_sample->add_option("--count", sample.prompt_count, "prompt limit when using --prompts");
    sub_sample->add_option("--frames", sample.frames, "frames for --text prompts");
    sub_sample->add_option("--guidance", sample.guidance, "classifier-free guidance strength");
    sub_sample->add_flag("--llm", sample.use_llm, "decompose --text prompts with the chat agent");

    SampleArgs refine;
    auto* sub_refine = app.add_subcommand("refine", "generate with guided iterative refinement");
    add_common(sub_refine, refine.common);
    sub_refine->add_option("--model", refine.model_path, "generator checkpoint (decoder)")->required();
    sub_refine->add_option("--aligner", refine.aligner_path, "aligner checkpoint")->required();
    sub_refine->add_option("--text", refine.prompts, "prompt text (repeatable)");
    sub_refine->add_option("--prompts", refine.prompts_dir, "dataset directory supplying prompts");
    sub_refine->add_option("--count", refine.prompt_count, "prompt limit when using --prompts");
    sub_refine->add_option("--frames", refine.frames, "frames for --text prompts");
    sub_refine->add_option("--guidance", refine.guidance, "classifier-free guidance strength");
    sub_refine->add_option("--rounds", refine.rounds, "refinement rounds");
    sub_refine->add_option("--fractions", refine.fractions_csv, "re-diffusion fractions, comma separated");
    sub_refine->add_flag("--llm", refine.use_llm, "decompose --text prompts with the chat agent");

    EvalArgs eval;
    auto* sub_eval = app.add_subcommand("eval", "evaluate generator systems");
    add_common(sub_eval, eval.common);
    sub_eval->add_option("--data", eval.data_dir, "held-out test dataset directory")->required();
    sub_eval->add_option("--evaluator", eval.evaluator_path, "evaluator checkpoint")->required();
    sub_eval->add_option("--aligner", eval.aligner_path, "aligner checkpoint")->required();
    sub_eval->add_option("--system", eval.systems, "system spec name=checkpoint[,refine] (repeatable)");
    sub_eval->add_option("--guidance", eval.guidance, "classifier-free guidance strength");

    ReportArgs report_args;
    auto* sub_report = app.add_subcommand("report", "render comparison tables from metric reports");
    add_common(sub_report, report_args.common);
    sub_report->add_option("--in", report_args.inputs, "metric report CSV (repeatable)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        if (*sub_datagen) return run_datagen(datagen);
        if (*sub_extract) return run_extract(extract);
        if (*sub_decompose) return run_decompose(decompose);
        if (*sub_ta) return run_train_aligner(ta);
        if (*sub_te) return run_train_evaluator(te);
        if (*sub_train) return run_train(train);
        if (*sub_sample) return run_sample(sample, false);
        if (*sub_refine) return run_sample(refine, true);
        if (*sub_eval) return run_eval(eval);
        if (*sub_report) return run_report(report_args);
    } catch (const ValidationError& e) {
        std::fprintf(stderr, "validation error: %s\n", e.what());
        return 2;
    } catch (const ParseError& e) {
        std::fprintf(stderr, "parse error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
