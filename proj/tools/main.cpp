#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "owdet/coco.hpp"
#include "owdet/container.hpp"
#include "owdet/experiment.hpp"

namespace fs = std::filesystem;
using namespace owdet;

namespace {

struct CommonOpts {
    std::string config_path;
    std::string out_dir = "owdet-out";
    std::optional<std::uint64_t> seed;
    std::optional<double> tau;
    std::optional<std::int64_t> shots;
};

ExperimentConfig load_config(const CommonOpts& opts) {
    ExperimentConfig config;
    if (!opts.config_path.empty()) config = ExperimentConfig::from_json(read_json(opts.config_path));
    if (opts.seed) config.seed = *opts.seed;
    if (opts.tau) config.retrieval.tau = *opts.tau;
    if (opts.shots) config.task.shots = *opts.shots;
    config.validate();
    return config;
}

void add_common(CLI::App* cmd, CommonOpts& opts) {
    cmd->add_option("--config", opts.config_path, "experiment config JSON (all keys optional)");
    cmd->add_option("--out-dir", opts.out_dir, "artifact directory");
    cmd->add_option("--seed", opts.seed, "override the config seed");
    cmd->add_option("--tau", opts.tau, "override the retrieval threshold");
    cmd->add_option("--shots", opts.shots, "override shots per class");
}

ContinualTask task_for(const ExperimentConfig& config, const std::string& out_dir) {
    const std::string task_dir = out_dir + "/task";
    if (fs::exists(task_dir + "/task.json")) return load_task(task_dir);
    ContinualTask task = generate_synthetic_task(config.task, config.seed);
    fs::create_directories(task_dir);
    save_task(task, task_dir);
    return task;
}

Detector base_for(const ExperimentConfig& config, const ContinualTask& task,
                  const std::string& out_dir, RunManifest& manifest) {
    const std::string ckpt = out_dir + "/base.ckpt";
    if (fs::exists(ckpt)) return Detector::load_checkpoint(ckpt);
    Detector base = pretrain_base(config, task, &manifest);
    base.save_checkpoint(ckpt);
    manifest.note_file("base.ckpt", ckpt);
    return base;
}

void write_manifest(RunManifest& manifest, const ExperimentConfig& config,
                    const std::string& out_dir) {
    manifest.data["config"] = config.to_json();
    const std::string dump = config.to_json().dump();
    manifest.data["config_crc32"] =
        crc32(reinterpret_cast<const std::uint8_t*>(dump.data()), dump.size());
    manifest.save(out_dir + "/manifest.json");
}

int cmd_gen_task(const CommonOpts& opts, bool ppm) {
    const ExperimentConfig config = load_config(opts);
    fs::create_directories(opts.out_dir + "/task");
    ContinualTask task = generate_synthetic_task(config.task, config.seed);
    save_task(task, opts.out_dir + "/task");
    fs::create_directories(opts.out_dir + "/coco");
    for (std::size_t i = 0; i < task.subsets.size(); ++i) {
        const auto ds = dataset_from_samples(task.subsets[i].eval, task.subsets[i].labels,
                                             static_cast<std::int64_t>(i + 1) * 1000);
        write_json(coco_gt_to_json(ds),
                   opts.out_dir + "/coco/subset" + std::to_string(i + 1) + "_eval.json");
    }
    write_json(coco_gt_to_json(dataset_from_samples(task.unseen_eval, task.unseen_labels, 900000)),
               opts.out_dir + "/coco/unseen_eval.json");
    if (ppm) {
        fs::create_directories(opts.out_dir + "/preview");
        for (std::size_t i = 0; i < task.subsets.size() && i < 3; ++i)
            write_ppm(task.subsets[i].train.at(0),
                      opts.out_dir + "/preview/subset" + std::to_string(i + 1) + ".ppm");
        if (!task.unseen_eval.empty())
            write_ppm(task.unseen_eval[0], opts.out_dir + "/preview/unseen.ppm");
    }
    RunManifest manifest;
    manifest.note_file("task.json", opts.out_dir + "/task/task.json");
    manifest.note_file("images.bin", opts.out_dir + "/task/images.bin");
    write_manifest(manifest, config, opts.out_dir);
    std::printf("task written to %s (%zu subsets, %zu unseen images)\n", opts.out_dir.c_str(),
                task.subsets.size(), task.unseen_eval.size());
    return 0;
}

int cmd_pretrain(const CommonOpts& opts) {
    const ExperimentConfig config = load_config(opts);
    fs::create_directories(opts.out_dir);
    ContinualTask task = task_for(config, opts.out_dir);
    RunManifest manifest;
    Detector base = pretrain_base(config, task, &manifest);
    base.save_checkpoint(opts.out_dir + "/base.ckpt");
    manifest.note_file("base.ckpt", opts.out_dir + "/base.ckpt");
    write_manifest(manifest, config, opts.out_dir);
    std::printf("pretrained base written to %s/base.ckpt (eval AP %.3f)\n", opts.out_dir.c_str(),
                manifest.data["pretrain"]["ap"].get<double>());
    return 0;
}

int cmd_train(const CommonOpts& opts) {
    const ExperimentConfig config = load_config(opts);
    fs::create_directories(opts.out_dir);
    ContinualTask task = task_for(config, opts.out_dir);
    RunManifest manifest;
    Detector base = base_for(config, task, opts.out_dir, manifest);
    MemoryPool pool = continual_train(config, task, base, &manifest);
    save_pool(pool, opts.out_dir + "/pool.owmp");
    manifest.note_file("pool.owmp", opts.out_dir + "/pool.owmp");
    write_manifest(manifest, config, opts.out_dir);
    std::printf("memory pool with %zu triplets written to %s/pool.owmp\n", pool.size(),
                opts.out_dir.c_str());
    return 0;
}

int cmd_eval(const CommonOpts& opts, const std::string& mode_name) {
    const ExperimentConfig config = load_config(opts);
    const EvalMode mode = eval_mode_from_string(mode_name);
    fs::create_directories(opts.out_dir);
    ContinualTask task = task_for(config, opts.out_dir);
    RunManifest manifest;
    Detector base = base_for(config, task, opts.out_dir, manifest);
    MemoryPool pool;
    if (fs::exists(opts.out_dir + "/pool.owmp")) {
        pool = load_pool(opts.out_dir + "/pool.owmp");
    } else if (mode != EvalMode::ZeroShot) {
        throw InputError("no pool at " + opts.out_dir + "/pool.owmp; run `owdet train` first");
    }
    EvalReport report = evaluate(config, task, base, pool, mode, opts.out_dir, &manifest);
    write_manifest(manifest, config, opts.out_dir);

    std::printf("mode=%s\n", mode_name.c_str());
    for (std::size_t i = 0; i < report.per_subset_ap.size(); ++i)
        std::printf("  %s AP: %s\n", report.subset_names[i].c_str(),
                    report.per_subset_ap[i] ? std::to_string(*report.per_subset_ap[i]).c_str()
                                            : "absent");
    std::printf("  seen: %s  unseen: %s\n",
                report.ap_seen ? std::to_string(*report.ap_seen).c_str() : "absent",
                report.ap_unseen ? std::to_string(*report.ap_unseen).c_str() : "absent");
    if (report.unseen_fallback_rate >= 0)
        std::printf("  unseen fallback rate: %.3f\n", report.unseen_fallback_rate);
    return 0;
}

int cmd_ablate(const CommonOpts& opts, const std::string& kind) {
    const ExperimentConfig config = load_config(opts);
    fs::create_directories(opts.out_dir);
    ContinualTask task = task_for(config, opts.out_dir);
    RunManifest manifest;
    Detector base = base_for(config, task, opts.out_dir, manifest);
    AblationBundle bundle = run_ablation(kind, config, task, base, &manifest);
    std::ofstream(opts.out_dir + "/ablation_" + kind + ".csv", std::ios::trunc) << bundle.csv;
    std::ofstream(opts.out_dir + "/ablation_" + kind + ".txt", std::ios::trunc) << bundle.table;
    if (!bundle.details.empty())
        write_json(bundle.details, opts.out_dir + "/ablation_" + kind + "_details.json");
    manifest.note_file("ablation_" + kind + ".csv", opts.out_dir + "/ablation_" + kind + ".csv");
    write_manifest(manifest, config, opts.out_dir);
    std::printf("%s", bundle.table.c_str());
    return 0;
}

int cmd_rank(const std::string& input_csv, const std::string& output_path) {
    // input: method,subset,ap rows; the "unseen" subset feeds the unseen rank
    std::ifstream in(input_csv);
    if (!in) throw DataError("cannot open: " + input_csv);
    std::string line;
    std::getline(in, line);  // header
    std::map<std::string, std::map<std::string, double>> seen;
    std::map<std::string, double> unseen;
    std::set<std::string> subset_names;
    std::vector<std::string> method_order;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string method, subset, ap_str;
        if (!std::getline(ss, method, ',') || !std::getline(ss, subset, ',') ||
            !std::getline(ss, ap_str))
            throw DataError("rank: malformed CSV line: " + line);
        const double ap = std::stod(ap_str);
        if (!seen.count(method)) {
            method_order.push_back(method);
            seen[method];
        }
        if (subset == "unseen") {
            unseen[method] = ap;
        } else {
            seen[method][subset] = ap;
            subset_names.insert(subset);
        }
    }
    std::vector<RankInput> inputs;
    for (const auto& method : method_order) {
        RankInput r;
        r.method = method;
        for (const auto& s : subset_names) {
            const auto it = seen[method].find(s);
            if (it == seen[method].end())
                throw InputError("rank: method '" + method + "' missing subset '" + s + "'");
            r.seen_aps.push_back(it->second);
        }
        const auto u = unseen.find(method);
        if (u == unseen.end()) throw InputError("rank: method '" + method + "' missing unseen row");
        r.unseen_ap = u->second;
        inputs.push_back(std::move(r));
    }
    const auto results = average_rank(inputs);
    std::ostringstream os;
    os << "method,r_seen,r_unseen,r_avg\n";
    for (const auto& r : results) {
        char buf[160];
        std::snprintf(buf, sizeof(buf), "%s,%.17g,%.17g,%.17g\n", r.method.c_str(), r.r_seen,
                      r.r_unseen, r.r_avg);
        os << buf;
    }
    if (output_path.empty()) {
        std::printf("%s", os.str().c_str());
    } else {
        std::ofstream(output_path, std::ios::trunc) << os.str();
    }
    return 0;
}

int cmd_score(const std::string& gt_path, const std::string& pred_path, bool ap50_only) {
    const CocoDataset gt = load_coco_ground_truth(gt_path);
    std::vector<CocoPrediction> preds;
    if (!pred_path.empty()) preds = load_coco_predictions(pred_path);
    const auto evals = pair_coco(gt, preds);
    const auto names = gt.class_names();
    const auto map_coco = compute_ap(evals, names, ApOptions::coco());
    const auto map_50 = compute_ap(evals, names, ApOptions::at50());
    if (!ap50_only)
        std::printf("mAP[.50:.95]: %s\n",
                    map_coco ? std::to_string(*map_coco).c_str() : "absent (no ground truth)");
    std::printf("AP50:         %s\n",
                map_50 ? std::to_string(*map_50).c_str() : "absent (no ground truth)");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale continual open-vocabulary detection with memory and retrieval"};
    app.require_subcommand(1);

    CommonOpts opts;
    bool ppm = false;
    std::string mode = "threshold";
    std::string kind = "components";
    std::string rank_input, rank_output;
    std::string gt_path, pred_path;
    bool ap50_only = false;

    auto* gen = app.add_subcommand("gen-task", "generate the synthetic continual task");
    add_common(gen, opts);
    gen->add_flag("--ppm", ppm, "dump PPM previews");

    auto* pre = app.add_subcommand("pretrain", "pretrain and freeze the base detector");
    add_common(pre, opts);

    auto* train = app.add_subcommand("train", "continual-train the memory pool");
    add_common(train, opts);

    auto* eval = app.add_subcommand("eval", "evaluate a trained pool");
    add_common(eval, opts);
    eval->add_option("--mode", mode, "threshold | oracle | zero-shot | last-triplet");

    auto* ablate = app.add_subcommand("ablate", "run an ablation protocol");
    add_common(ablate, opts);
    ablate->add_option("--kind", kind, "components | layers | joint | oracle | shots");

    auto* rank = app.add_subcommand("rank", "average ranks from a method,subset,ap CSV");
    rank->add_option("--input", rank_input, "CSV with method,subset,ap rows")->required();
    rank->add_option("--output", rank_output, "output CSV (stdout when omitted)");

    auto* score = app.add_subcommand("score", "score COCO-format GT/prediction files");
    score->add_option("--gt", gt_path, "COCO annotation JSON")->required();
    score->add_option("--pred", pred_path, "COCO results JSON");
    score->add_flag("--ap50", ap50_only, "report AP50 only");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) return cmd_gen_task(opts, ppm);
        if (pre->parsed()) return cmd_pretrain(opts);
        if (train->parsed()) return cmd_train(opts);
        if (eval->parsed()) return cmd_eval(opts, mode);
        if (ablate->parsed()) return cmd_ablate(opts, kind);
        if (rank->parsed()) return cmd_rank(rank_input, rank_output);
        if (score->parsed()) return cmd_score(gt_path, pred_path, ap50_only);
    } catch (const ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 3;
    } catch (const InputError& e) {
        std::fprintf(stderr, "input error: %s\n", e.what());
        return 3;
    } catch (const NumericError& e) {
        std::fprintf(stderr, "numerical failure: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
