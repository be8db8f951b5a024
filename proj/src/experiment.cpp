#include "owdet/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numeric>

#include "owdet/coco.hpp"
#include "owdet/container.hpp"
#include "owdet/losses.hpp"

namespace owdet {

namespace {

double now_seconds() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

std::vector<GroundTruth> ground_truths_for(const ImageSample& image, const ClassSentence& sentence) {
    std::vector<GroundTruth> gts;
    for (std::size_t b = 0; b < image.boxes.size(); ++b) {
        for (std::size_t c = 0; c < sentence.class_names.size(); ++c) {
            if (sentence.class_names[c] == image.class_names[b]) {
                gts.push_back({image.boxes[b], static_cast<int>(c)});
                break;
            }
        }
    }
    return gts;
}

}  // namespace

void TrainingConfig::validate() const {
    if (lr_candidates.empty() || epoch_candidates.empty())
        throw ConfigError("candidate lists must be non-empty");
    for (const double lr : lr_candidates)
        if (!(lr > 0)) throw ConfigError("learning rates must be positive");
    for (const std::int64_t e : epoch_candidates)
        if (e <= 0) throw ConfigError("epoch candidates must be positive");
    if (!std::is_sorted(epoch_candidates.begin(), epoch_candidates.end()))
        throw ConfigError("epoch candidates must be ascending");
    if (batch_size != 1) throw ConfigError("only batch size 1 is supported");
    if (mode != "decoupled" && mode != "joint")
        throw ConfigError("training mode must be 'decoupled' or 'joint'");
}

nlohmann::json TrainingConfig::to_json() const {
    return {{"lr_candidates", lr_candidates}, {"epoch_candidates", epoch_candidates},
            {"weight_decay", weight_decay},   {"batch_size", batch_size},
            {"grid_search", grid_search},     {"mode", mode}};
}

TrainingConfig TrainingConfig::from_json(const nlohmann::json& j) {
    TrainingConfig c;
    c.lr_candidates = j.value("lr_candidates", c.lr_candidates);
    c.epoch_candidates = j.value("epoch_candidates", c.epoch_candidates);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.grid_search = j.value("grid_search", c.grid_search);
    c.mode = j.value("mode", c.mode);
    return c;
}

nlohmann::json PretrainBudget::to_json() const {
    return {{"lr", lr},
            {"weight_decay", weight_decay},
            {"max_epochs", max_epochs},
            {"eval_every", eval_every},
            {"ap_floor", ap_floor}};
}

PretrainBudget PretrainBudget::from_json(const nlohmann::json& j) {
    PretrainBudget c;
    c.lr = j.value("lr", c.lr);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.eval_every = j.value("eval_every", c.eval_every);
    c.ap_floor = j.value("ap_floor", c.ap_floor);
    return c;
}

void ExperimentConfig::validate() const {
    retrieval.validate();
    training.validate();
    if (pretrain.max_epochs <= 0 || pretrain.eval_every <= 0)
        throw ConfigError("pretrain budget must be positive");
    // detector.validate() needs the vocabulary, deferred until the task binds it
}

nlohmann::json ExperimentConfig::to_json() const {
    return {{"seed", seed},
            {"detector", detector.to_json()},
            {"retrieval",
             {{"tau", retrieval.tau}, {"nms_iou", retrieval.nms_iou},
              {"score_floor", retrieval.score_floor}}},
            {"task", task.to_json()},
            {"training", training.to_json()},
            {"pretrain", pretrain.to_json()},
            {"prototypes",
             {{"crops_per_class", prototypes.crops_per_class}, {"margin", prototypes.margin},
              {"margin_jitter", prototypes.margin_jitter}}}};
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
    ExperimentConfig c;
    c.seed = j.value("seed", c.seed);
    if (j.contains("detector")) c.detector = DetectorConfig::from_json(j["detector"]);
    if (j.contains("retrieval")) {
        const auto& r = j["retrieval"];
        c.retrieval.tau = r.value("tau", c.retrieval.tau);
        c.retrieval.nms_iou = r.value("nms_iou", c.retrieval.nms_iou);
        c.retrieval.score_floor = r.value("score_floor", c.retrieval.score_floor);
    }
    if (j.contains("task")) c.task = TaskConfig::from_json(j["task"]);
    if (j.contains("training")) c.training = TrainingConfig::from_json(j["training"]);
    if (j.contains("pretrain")) c.pretrain = PretrainBudget::from_json(j["pretrain"]);
    if (j.contains("prototypes")) {
        const auto& p = j["prototypes"];
        c.prototypes.crops_per_class = p.value("crops_per_class", c.prototypes.crops_per_class);
        c.prototypes.margin = p.value("margin", c.prototypes.margin);
        c.prototypes.margin_jitter = p.value("margin_jitter", c.prototypes.margin_jitter);
    }
    return c;
}

EvalMode eval_mode_from_string(const std::string& s) {
    if (s == "threshold") return EvalMode::Threshold;
    if (s == "oracle") return EvalMode::Oracle;
    if (s == "zero-shot") return EvalMode::ZeroShot;
    if (s == "last-triplet" || s == "no-retrieval-last-triplet") return EvalMode::LastTriplet;
    throw ConfigError("unknown eval mode: '" + s + "'");
}

std::string eval_mode_name(EvalMode mode) {
    switch (mode) {
        case EvalMode::Threshold: return "threshold";
        case EvalMode::Oracle: return "oracle";
        case EvalMode::ZeroShot: return "zero-shot";
        case EvalMode::LastTriplet: return "last-triplet";
    }
    return "?";
}

RunManifest::RunManifest() {
    data["source"] = kVersion;
    data["files"] = nlohmann::json::object();
}

void RunManifest::note_file(const std::string& key, const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("manifest: cannot digest missing file " + path);
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                    std::istreambuf_iterator<char>());
    data["files"][key] = {{"path", path},
                          {"bytes", bytes.size()},
                          {"crc32", crc32(bytes.data(), bytes.size())}};
}

void RunManifest::save(const std::string& path) const {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw DataError("cannot write manifest: " + path);
    out << data.dump(2) << "\n";
}

namespace {

// One gradient pass over a single image; returns the loss value.
double train_one(const Detector& base, const ImageSample& image, const ClassSentence& sentence,
                 const ConceptMemory& con, const InteractionMemory& inc, ParamStore& store,
                 AdamW& opt) {
    Tape::instance().clear();
    store.zero_grads();
    PipelineOutput out = base.run(image, sentence, &con, &inc);
    const auto gts = ground_truths_for(image, sentence);
    const auto assignment = match_predictions(out.boxes, out.logits, gts);
    Tensor loss = detection_loss(out.boxes, out.logits, gts, assignment);
    const double value = loss.item();
    if (!std::isfinite(value)) throw NumericError("training diverged: non-finite loss");
    backward(loss);
    opt.step(store);
    return value;
}

struct StageResult {
    ConceptMemory con;
    InteractionMemory inc;
    double best_loss = 0.0;
    double best_lr = 0.0;
    std::int64_t best_epochs = 0;
    nlohmann::json cells = nlohmann::json::array();
    nlohmann::json curves = nlohmann::json::object();
};

// Grid search over (lr, epochs) selecting by mean train loss over the final
// epoch. Every lr trajectory is deterministic given its stream, so an
// (lr, e) cell is exactly the e-epoch run: one trajectory per lr serves every
// epoch candidate. The cosine horizon is shared (max epochs) across cells,
// which is what makes the prefix property exact.
StageResult train_stage(const Detector& base, const std::vector<ImageSample>& images,
                        const ClassSentence& sentence, const ConceptMemory& con0,
                        const InteractionMemory& inc0, bool train_con, bool train_inc,
                        const TrainingConfig& tcfg, const Rng& stage_rng) {
    std::vector<double> lrs = tcfg.lr_candidates;
    std::vector<std::int64_t> epochs = tcfg.epoch_candidates;
    if (!tcfg.grid_search) {
        lrs = {tcfg.lr_candidates.front()};
        epochs = {tcfg.epoch_candidates.back()};
    }
    const std::int64_t max_epochs = epochs.back();
    const std::int64_t horizon = max_epochs * static_cast<std::int64_t>(images.size());

    StageResult result;
    bool have_best = false;
    for (std::size_t li = 0; li < lrs.size(); ++li) {
        ConceptMemory con = con0.clone();
        InteractionMemory inc = inc0.clone();
        ParamStore store = memory_param_store(con, train_con, inc, train_inc);
        if (store.trainable_params() == 0)
            throw ContractError("training stage has no trainable memory parameters");
        AdamW opt({.base_lr = lrs[li],
                   .weight_decay = tcfg.weight_decay,
                   .schedule_horizon = horizon});
        Rng traj_rng = stage_rng.child("lr", li);

        std::vector<std::size_t> order(images.size());
        std::iota(order.begin(), order.end(), 0);
        nlohmann::json curve = nlohmann::json::array();
        std::size_t next_candidate = 0;
        for (std::int64_t epoch = 1; epoch <= max_epochs; ++epoch) {
            shuffle(order, traj_rng);
            double total = 0.0;
            for (const std::size_t idx : order)
                total += train_one(base, images[idx], sentence, con, inc, store, opt);
            const double mean_loss = total / static_cast<double>(images.size());
            curve.push_back(mean_loss);
            if (next_candidate < epochs.size() && epochs[next_candidate] == epoch) {
                result.cells.push_back({{"lr", lrs[li]}, {"epochs", epoch}, {"loss", mean_loss}});
                if (!have_best || mean_loss < result.best_loss) {
                    have_best = true;
                    result.best_loss = mean_loss;
                    result.best_lr = lrs[li];
                    result.best_epochs = epoch;
                    result.con = con.clone();
                    result.inc = inc.clone();
                }
                ++next_candidate;
            }
        }
        result.curves["lr/" + std::to_string(lrs[li])] = curve;
    }
    return result;
}

std::optional<double> eval_subset_ap(const ExperimentConfig& config, const Detector& base,
                                     const MemoryPool& pool,
                                     const std::vector<ImageSample>& images,
                                     const std::vector<std::string>& labels, EvalMode mode,
                                     std::optional<std::int64_t> oracle_step,
                                     std::vector<ImageEval>* evals_out = nullptr,
                                     double* fallback_rate = nullptr) {
    std::vector<ImageEval> evals;
    std::int64_t fallbacks = 0;
    for (const auto& image : images) {
        std::vector<Detection> dets;
        switch (mode) {
            case EvalMode::Threshold: {
                RetrievalOutcome outcome;
                dets = infer(base, pool, image, config.retrieval, labels, &outcome);
                fallbacks += outcome.fallback ? 1 : 0;
                break;
            }
            case EvalMode::Oracle: {
                const RetrievalOutcome outcome = oracle_retrieve(pool, oracle_step);
                dets = infer_with_outcome(base, pool, image, outcome, config.retrieval, labels);
                fallbacks += outcome.fallback ? 1 : 0;
                break;
            }
            case EvalMode::ZeroShot:
                dets = infer_zero_shot(base, image, config.retrieval, labels);
                break;
            case EvalMode::LastTriplet:
                dets = infer_last_triplet(base, pool, image, config.retrieval, labels);
                break;
        }
        evals.push_back({std::move(dets), image.boxes, image.class_names});
    }
    if (fallback_rate)
        *fallback_rate = images.empty() ? 0.0
                                        : static_cast<double>(fallbacks) /
                                              static_cast<double>(images.size());
    if (evals_out) *evals_out = evals;
    return compute_ap(evals, labels);
}

}  // namespace

Detector pretrain_base(const ExperimentConfig& config, const ContinualTask& task,
                       RunManifest* manifest) {
    const double t0 = now_seconds();
    DetectorConfig dc = config.detector;
    dc.vocab = task.vocab;
    Rng root(config.seed);
    Rng init_rng = root.child("pretrain/init");
    Detector det(dc, init_rng);

    const auto& images = task.pretrain_train_images();
    if (images.empty()) throw ContractError("pretrain split is empty");
    ClassSentence sentence = build_class_sentence(task.pretrain.labels, dc.vocab);
    ParamStore& store = det.params();

    AdamW opt({.base_lr = config.pretrain.lr,
               .weight_decay = config.pretrain.weight_decay,
               .schedule_horizon =
                   config.pretrain.max_epochs * static_cast<std::int64_t>(images.size())});
    Rng train_rng = root.child("pretrain/train");

    std::vector<std::size_t> order(images.size());
    std::iota(order.begin(), order.end(), 0);
    nlohmann::json curve = nlohmann::json::array();
    double last_ap = 0.0;
    bool reached = false;
    std::int64_t epochs_run = 0;
    for (std::int64_t epoch = 1; epoch <= config.pretrain.max_epochs && !reached; ++epoch) {
        shuffle(order, train_rng);
        double total = 0.0;
        for (const std::size_t idx : order) {
            Tape::instance().clear();
            store.zero_grads();
            PipelineOutput out = det.run(images[idx], sentence);
            const auto gts = ground_truths_for(images[idx], sentence);
            const auto assignment = match_predictions(out.boxes, out.logits, gts);
            Tensor loss = detection_loss(out.boxes, out.logits, gts, assignment);
            const double value = loss.item();
            if (!std::isfinite(value)) throw NumericError("pretraining diverged: non-finite loss");
            backward(loss);
            opt.step(store);
            total += value;
        }
        curve.push_back(total / static_cast<double>(images.size()));
        epochs_run = epoch;
        if (epoch % config.pretrain.eval_every == 0 || epoch == config.pretrain.max_epochs) {
            std::vector<ImageEval> evals;
            for (const auto& image : task.pretrain_eval_images())
                evals.push_back({infer_zero_shot(det, image, config.retrieval, task.pretrain.labels),
                                 image.boxes, image.class_names});
            const auto ap = compute_ap(evals, task.pretrain.labels);
            last_ap = ap.value_or(0.0);
            if (last_ap >= config.pretrain.ap_floor) reached = true;
        }
    }
    if (!reached)
        throw NumericError("pretraining failed to reach AP floor " +
                           std::to_string(config.pretrain.ap_floor) + " (best " +
                           std::to_string(last_ap) + "); loss curve: " + curve.dump());

    det.freeze();
    if (manifest) {
        manifest->data["pretrain"] = {{"epochs", epochs_run},
                                      {"ap", last_ap},
                                      {"loss_curve", curve},
                                      {"wall_clock_seconds", now_seconds() - t0}};
    }
    return det;
}

MemoryPool continual_train(const ExperimentConfig& config, const ContinualTask& task,
                           const Detector& base, RunManifest* manifest) {
    const double t0 = now_seconds();
    if (base.params().trainable_params() != 0)
        throw ContractError("continual training requires a frozen base");
    if (config.detector.d_model != base.config().d_model ||
        config.detector.l_fusion != base.config().l_fusion)
        throw ContractError("experiment detector config does not match the frozen base");
    if (config.detector.lora_layers > base.config().l_fusion)
        throw ConfigError("lora_layers exceeds the base fusion depth");
    // memory layout comes from the experiment config so ablations can vary
    // prompt length, rank, and carried layers against one frozen base
    const MemoryInitConfig memory_config = config.detector.memory_config();

    const std::vector<double> base_before = base.params().snapshot_values();

    MemoryPool pool(config.to_json());
    Rng root = Rng(config.seed).child("continual");

    nlohmann::json steps = nlohmann::json::array();
    nlohmann::json after_step_rows = nlohmann::json::array();
    std::vector<std::vector<std::optional<double>>> after_step;
    std::int64_t eval_reads_during_training = 0;

    for (std::size_t t = 0; t < task.subsets.size(); ++t) {
        const Rng step_rng = root.child("step", t);
        Rng init_rng = step_rng.child("init");
        auto [con, inc] = init_step_memories(pool, memory_config, init_rng);
        ClassSentence sentence = build_class_sentence(task.subsets[t].labels, base.config().vocab);
        const auto& images = task.train_images(t);

        const auto counts_before = task.access_counts();

        nlohmann::json step_meta;
        step_meta["subset"] = task.subsets[t].labels;
        const bool has_inc_params = !inc.layers.empty();
        const bool has_con_params = con.prompt.defined();
        if (config.training.mode == "decoupled") {
            if (has_con_params) {
                StageResult s1 = train_stage(base, images, sentence, con, inc, true, false,
                                             config.training, step_rng.child("stage1"));
                con = std::move(s1.con);
                inc = std::move(s1.inc);
                step_meta["stage1"] = {{"lr", s1.best_lr}, {"epochs", s1.best_epochs},
                                       {"loss", s1.best_loss}, {"cells", s1.cells},
                                       {"curves", s1.curves}};
            }
            if (has_inc_params) {
                StageResult s2 = train_stage(base, images, sentence, con, inc, false, true,
                                             config.training, step_rng.child("stage2"));
                con = std::move(s2.con);
                inc = std::move(s2.inc);
                step_meta["stage2"] = {{"lr", s2.best_lr}, {"epochs", s2.best_epochs},
                                       {"loss", s2.best_loss}, {"cells", s2.cells},
                                       {"curves", s2.curves}};
            }
        } else {
            StageResult joint = train_stage(base, images, sentence, con, inc, has_con_params,
                                            has_inc_params, config.training,
                                            step_rng.child("joint"));
            con = std::move(joint.con);
            inc = std::move(joint.inc);
            step_meta["joint"] = {{"lr", joint.best_lr}, {"epochs", joint.best_epochs},
                                  {"loss", joint.best_loss}, {"cells", joint.cells},
                                  {"curves", joint.curves}};
        }

        Rng proto_rng = step_rng.child("prototypes");
        auto protos = build_prototypes(images, task.subsets[t].labels, base, config.prototypes,
                                       proto_rng);

        // training for this step is done; eval splits must not have been read
        const auto counts_after = task.access_counts();
        for (std::size_t i = 0; i < counts_after.eval_reads.size(); ++i) {
            const std::int64_t before = counts_before.eval_reads.empty()
                                            ? 0
                                            : counts_before.eval_reads[i];
            eval_reads_during_training += counts_after.eval_reads[i] - before;
        }
        eval_reads_during_training +=
            counts_after.unseen_eval_reads - counts_before.unseen_eval_reads;

        MemoryTriplet triplet;
        triplet.step = static_cast<std::int64_t>(t) + 1;
        triplet.labels = task.subsets[t].labels;
        for (const auto& label : triplet.labels) triplet.prototypes.push_back(protos.at(label));
        triplet.concept_memory = con.clone();
        triplet.interaction_memory = inc.clone();
        if (triplet.concept_memory.prompt.defined())
            triplet.concept_memory.prompt.set_requires_grad(false);
        for (auto& layer : triplet.interaction_memory.layers)
            for (LoraPair* p : layer.active_pairs()) {
                p->down.set_requires_grad(false);
                p->up.set_requires_grad(false);
            }
        pool.memorize(std::move(triplet));

        // immediately-after-step APs under oracle retrieval (subsets 1..t)
        std::vector<std::optional<double>> row;
        nlohmann::json row_json = nlohmann::json::array();
        for (std::size_t i = 0; i <= t; ++i) {
            const auto ap = eval_subset_ap(config, base, pool, task.eval_images(i),
                                           task.subsets[i].labels, EvalMode::Oracle,
                                           static_cast<std::int64_t>(i) + 1);
            row.push_back(ap);
            row_json.push_back(ap ? nlohmann::json(*ap) : nlohmann::json());
        }
        after_step.push_back(row);
        after_step_rows.push_back(row_json);
        steps.push_back(std::move(step_meta));
    }

    const std::vector<double> base_after = base.params().snapshot_values();
    if (base_before != base_after)
        throw ContractError("frozen base parameters changed during continual training");

    if (manifest) {
        manifest->data["continual"] = {{"steps", steps},
                                       {"after_step_oracle_ap", after_step_rows},
                                       {"eval_reads_during_training", eval_reads_during_training},
                                       {"mode", config.training.mode},
                                       {"wall_clock_seconds", now_seconds() - t0}};
    }
    if (eval_reads_during_training != 0)
        throw ContractError("evaluation images were read during training");
    return pool;
}

EvalReport evaluate(const ExperimentConfig& config, const ContinualTask& task, const Detector& base,
                    const MemoryPool& pool, EvalMode mode, const std::string& out_dir,
                    RunManifest* manifest) {
    const double t0 = now_seconds();
    if ((mode == EvalMode::Oracle || mode == EvalMode::LastTriplet) && pool.empty())
        throw InputError("eval mode '" + eval_mode_name(mode) + "' requires a non-empty pool");
    if (mode == EvalMode::Oracle && pool.size() != task.subsets.size())
        throw InputError("oracle eval needs one triplet per subset: pool has " +
                         std::to_string(pool.size()) + ", task has " +
                         std::to_string(task.subsets.size()));

    EvalReport report;
    report.added_params_per_step = count_added_params(config.detector.memory_config()).total;

    std::vector<std::vector<ImageEval>> all_evals;
    for (std::size_t i = 0; i < task.subsets.size(); ++i) {
        report.subset_names.push_back("D" + std::to_string(i + 1));
        std::vector<ImageEval> evals;
        const auto ap = eval_subset_ap(config, base, pool, task.eval_images(i),
                                       task.subsets[i].labels, mode,
                                       static_cast<std::int64_t>(i) + 1, &evals);
        report.per_subset_ap.push_back(ap);
        all_evals.push_back(std::move(evals));
    }

    std::vector<ImageEval> unseen_evals;
    double unseen_fallback = 0.0;
    report.ap_unseen = eval_subset_ap(config, base, pool, task.unseen_eval_images(),
                                      task.unseen_labels, mode, std::nullopt, &unseen_evals,
                                      &unseen_fallback);
    if (mode == EvalMode::Threshold) report.unseen_fallback_rate = unseen_fallback;

    double seen_sum = 0.0;
    std::int64_t seen_n = 0;
    for (const auto& ap : report.per_subset_ap)
        if (ap) {
            seen_sum += *ap;
            ++seen_n;
        }
    if (seen_n) report.ap_seen = seen_sum / static_cast<double>(seen_n);
    if (!report.per_subset_ap.empty()) {
        report.ap_new = report.per_subset_ap.back();
        if (report.per_subset_ap.size() > 1) {
            double old_sum = 0.0;
            std::int64_t old_n = 0;
            for (std::size_t i = 0; i + 1 < report.per_subset_ap.size(); ++i)
                if (report.per_subset_ap[i]) {
                    old_sum += *report.per_subset_ap[i];
                    ++old_n;
                }
            if (old_n) report.ap_old = old_sum / static_cast<double>(old_n);
        }
    }

    if (!out_dir.empty()) {
        const std::string tag = eval_mode_name(mode);
        LeaderboardRow row;
        row.method = tag;
        row.subset_aps = report.per_subset_ap;
        row.seen = report.ap_seen;
        row.unseen = report.ap_unseen;
        const std::string csv = report_csv(report.subset_names, {row});
        const std::string table = leaderboard_table(report.subset_names, {row});
        std::ofstream(out_dir + "/report_" + tag + ".csv", std::ios::trunc) << csv;
        std::ofstream(out_dir + "/leaderboard_" + tag + ".txt", std::ios::trunc) << table;

        for (std::size_t i = 0; i < task.subsets.size(); ++i) {
            const auto gt = dataset_from_samples(task.subsets[i].eval, task.subsets[i].labels,
                                                 static_cast<std::int64_t>(i + 1) * 1000);
            std::vector<std::vector<Detection>> dets;
            for (const auto& e : all_evals[i]) dets.push_back(e.detections);
            write_json(coco_gt_to_json(gt),
                       out_dir + "/subset" + std::to_string(i + 1) + "_gt.json");
            write_json(predictions_to_json(dets, gt),
                       out_dir + "/subset" + std::to_string(i + 1) + "_" + tag + "_pred.json");
        }
        const auto unseen_gt = dataset_from_samples(task.unseen_eval, task.unseen_labels, 900000);
        std::vector<std::vector<Detection>> unseen_dets;
        for (const auto& e : unseen_evals) unseen_dets.push_back(e.detections);
        write_json(coco_gt_to_json(unseen_gt), out_dir + "/unseen_gt.json");
        write_json(predictions_to_json(unseen_dets, unseen_gt),
                   out_dir + "/unseen_" + tag + "_pred.json");
        if (manifest) {
            manifest->note_file("report_" + tag + ".csv", out_dir + "/report_" + tag + ".csv");
            manifest->note_file("leaderboard_" + tag + ".txt",
                                out_dir + "/leaderboard_" + tag + ".txt");
        }
    }
    if (manifest) {
        nlohmann::json aps = nlohmann::json::array();
        for (const auto& ap : report.per_subset_ap) aps.push_back(ap ? nlohmann::json(*ap) : nlohmann::json());
        manifest->data["eval_" + eval_mode_name(mode)] = {
            {"per_subset_ap", aps},
            {"ap_seen", report.ap_seen ? nlohmann::json(*report.ap_seen) : nlohmann::json()},
            {"ap_unseen", report.ap_unseen ? nlohmann::json(*report.ap_unseen) : nlohmann::json()},
            {"unseen_fallback_rate", report.unseen_fallback_rate},
            {"wall_clock_seconds", now_seconds() - t0}};
    }
    return report;
}

namespace {

LeaderboardRow row_from_report(const std::string& method, const EvalReport& report) {
    LeaderboardRow row;
    row.method = method;
    row.subset_aps = report.per_subset_ap;
    row.seen = report.ap_seen;
    row.unseen = report.ap_unseen;
    return row;
}

void attach_ranks(std::vector<LeaderboardRow>& rows) {
    std::vector<RankInput> inputs;
    for (const auto& row : rows) {
        RankInput in;
        in.method = row.method;
        for (const auto& ap : row.subset_aps) in.seen_aps.push_back(ap.value_or(0.0));
        in.unseen_ap = row.unseen.value_or(0.0);
        inputs.push_back(std::move(in));
    }
    const auto ranks = average_rank(inputs);
    for (std::size_t i = 0; i < rows.size(); ++i) rows[i].r_avg = ranks[i].r_avg;
}

}  // namespace

AblationBundle run_ablation(const std::string& kind, const ExperimentConfig& config,
                            const ContinualTask& task, const Detector& base,
                            RunManifest* manifest) {
    AblationBundle bundle;
    for (std::size_t i = 0; i < task.subsets.size(); ++i)
        bundle.subset_names.push_back("D" + std::to_string(i + 1));

    auto train_with = [&](const ExperimentConfig& cfg) {
        return continual_train(cfg, task, base, nullptr);
    };

    if (kind == "components") {
        MemoryPool empty;
        bundle.rows.push_back(
            row_from_report("zero-shot", evaluate(config, task, base, empty, EvalMode::ZeroShot)));

        ExperimentConfig con_only = config;
        con_only.detector.lora_layers = 0;
        // the base was built with the full config; only the memory layout changes
        ExperimentConfig con_cfg = con_only;
        MemoryPool pool_con = train_with(con_cfg);
        bundle.rows.push_back(row_from_report(
            "+con", evaluate(config, task, base, pool_con, EvalMode::LastTriplet)));
        bundle.rows.push_back(row_from_report(
            "+con+retrieval", evaluate(config, task, base, pool_con, EvalMode::Threshold)));

        MemoryPool pool_full = train_with(config);
        bundle.rows.push_back(row_from_report(
            "+con+inc", evaluate(config, task, base, pool_full, EvalMode::LastTriplet)));
        bundle.rows.push_back(row_from_report(
            "full", evaluate(config, task, base, pool_full, EvalMode::Threshold)));
    } else if (kind == "layers") {
        nlohmann::json params = nlohmann::json::array();
        for (std::int64_t l = 0; l <= config.detector.l_fusion; ++l) {
            ExperimentConfig cfg = config;
            cfg.detector.lora_layers = l;
            MemoryInitConfig mc = cfg.detector.memory_config();
            const auto counts = count_added_params(mc);
            MemoryPool pool = train_with(cfg);
            ExperimentConfig eval_cfg = cfg;
            bundle.rows.push_back(row_from_report(
                "layers-" + std::to_string(l),
                evaluate(eval_cfg, task, base, pool, EvalMode::Threshold)));
            params.push_back({{"layers", l},
                              {"prompt", counts.prompt},
                              {"per_layer", counts.per_lora_layer},
                              {"total", counts.total}});
        }
        bundle.details["added_params"] = params;
    } else if (kind == "joint") {
        for (const char* mode : {"decoupled", "joint"}) {
            ExperimentConfig cfg = config;
            cfg.training.mode = mode;
            MemoryPool pool = train_with(cfg);
            bundle.rows.push_back(
                row_from_report(mode, evaluate(config, task, base, pool, EvalMode::Threshold)));
        }
    } else if (kind == "oracle") {
        MemoryPool pool = train_with(config);
        bundle.rows.push_back(row_from_report(
            "threshold", evaluate(config, task, base, pool, EvalMode::Threshold)));
        bundle.rows.push_back(
            row_from_report("oracle", evaluate(config, task, base, pool, EvalMode::Oracle)));
    } else if (kind == "shots") {
        for (const std::int64_t shots : {1, 3, 5, 10}) {
            ExperimentConfig cfg = config;
            cfg.task.shots = shots;
            ContinualTask shot_task = generate_synthetic_task(cfg.task, cfg.seed);
            MemoryPool pool = continual_train(cfg, shot_task, base, nullptr);
            bundle.rows.push_back(row_from_report(
                "shots-" + std::to_string(shots),
                evaluate(cfg, shot_task, base, pool, EvalMode::Threshold)));
        }
    } else {
        throw ConfigError("unknown ablation kind: '" + kind +
                          "' (expected components|layers|joint|oracle|shots)");
    }

    attach_ranks(bundle.rows);
    bundle.table = leaderboard_table(bundle.subset_names, bundle.rows);
    bundle.csv = report_csv(bundle.subset_names, bundle.rows);
    if (manifest) manifest->data["ablation_" + kind] = {{"rows", bundle.rows.size()}};
    return bundle;
}

}  // namespace owdet
