#include "tinydetr/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <utility>

#include "tinydetr/errors.hpp"
#include "tinydetr/rng.hpp"

namespace tinydetr {

namespace {

std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

TrainConfig checked(TrainConfig config) {
    config.validate();
    return config;
}

std::vector<ParamGroup> optimizer_groups(const Detector& model, const TrainConfig& config) {
    ParamGroup backbone;
    backbone.name = "backbone";
    backbone.lr = config.lr_backbone;
    ParamGroup rest;
    rest.name = "main";
    rest.lr = config.lr;
    for (const NamedParam& p : model.parameters()) {
        (p.backbone ? backbone : rest).params.emplace_back(p.name, p.tensor);
    }
    return {std::move(backbone), std::move(rest)};
}

void require_weight(double v, const char* name) {
    if (!std::isfinite(v) || v < 0.0) {
        throw DataError(std::string(name) + " must be finite and non-negative");
    }
}

}  // namespace

TrainConfig TrainConfig::desk() {
    TrainConfig c;
    c.epochs = 12;
    c.batch_size = 8;
    c.lr = 3e-4;
    c.lr_backbone = 1.5e-4;
    c.seed = 1;
    return c;
}

TrainConfig TrainConfig::from_config(KvConfig& config, TrainConfig base) {
    TrainConfig c = base;
    c.epochs = config.get_uint("epochs", c.epochs);
    c.batch_size = config.get_uint("batch_size", c.batch_size);
    c.lr = config.get_double("lr", c.lr);
    c.lr_backbone = config.get_double("lr_backbone", c.lr_backbone);
    c.seed = config.get_uint("seed", c.seed);
    c.checkpoint_interval = config.get_uint("checkpoint_interval", c.checkpoint_interval);
    c.clip_norm = config.get_double("clip_norm", c.clip_norm);
    c.match.cls = config.get_double("match_class", c.match.cls);
    c.match.l1 = config.get_double("match_l1", c.match.l1);
    c.match.giou = config.get_double("match_giou", c.match.giou);
    c.loss.cls = config.get_double("loss_class", c.loss.cls);
    c.loss.l1 = config.get_double("loss_l1", c.loss.l1);
    c.loss.giou = config.get_double("loss_giou", c.loss.giou);
    c.loss.eos_coef = config.get_double("eos_coef", c.loss.eos_coef);
    c.validate();
    return c;
}

TrainConfig TrainConfig::from_config(KvConfig& config) { return from_config(config, TrainConfig{}); }

void TrainConfig::validate() const {
    if (batch_size == 0) {
        throw DataError("batch_size must be positive");
    }
    if (!std::isfinite(lr) || lr <= 0.0) {
        throw DataError("lr must be positive and finite");
    }
    if (!std::isfinite(lr_backbone) || lr_backbone <= 0.0) {
        throw DataError("lr_backbone must be positive and finite");
    }
    if (!std::isfinite(clip_norm)) {
        throw DataError("clip_norm must be finite");
    }
    require_weight(match.cls, "match_class");
    require_weight(match.l1, "match_l1");
    require_weight(match.giou, "match_giou");
    require_weight(loss.cls, "loss_class");
    require_weight(loss.l1, "loss_l1");
    require_weight(loss.giou, "loss_giou");
    require_weight(loss.eos_coef, "eos_coef");
}

std::vector<Detection> eval_detections(const PredictionSet& predictions) {
    const Tensor probs = softmax(predictions.class_logits, 1);
    const auto pd = probs.data();
    const auto bd = predictions.boxes.data();
    const std::size_t n = predictions.class_logits.shape()[0];
    const std::size_t width = predictions.class_logits.shape()[1];
    std::vector<Detection> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t best = 0;
        double best_p = pd[i * width];
        for (std::size_t c = 1; c + 1 < width; ++c) {
            if (pd[i * width + c] > best_p) {
                best_p = pd[i * width + c];
                best = c;
            }
        }
        Detection d;
        d.box = {bd[i * 4], bd[i * 4 + 1], bd[i * 4 + 2], bd[i * 4 + 3]};
        d.class_id = best;
        d.confidence = best_p;
        out.push_back(d);
    }
    return out;
}

EvalReport evaluate_model(const Detector& model, std::span<const ImageSample> samples,
                          const EvalOptions& options) {
    std::map<std::int64_t, std::vector<Detection>> detections;
    std::map<std::int64_t, std::vector<GroundTruthObject>> ground_truth;
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const auto id = static_cast<std::int64_t>(i);
        detections[id] = eval_detections(model.forward(samples[i].image));
        ground_truth[id] = samples[i].objects;
    }
    return evaluate(detections, ground_truth, options);
}

std::vector<InferDetection> infer_detections(const PredictionSet& predictions,
                                             double confidence_threshold, std::size_t image_w,
                                             std::size_t image_h) {
    if (!(confidence_threshold >= 0.0) || !(confidence_threshold <= 1.0)) {
        throw DataError("confidence threshold must lie in [0, 1]");
    }
    const Tensor probs = softmax(predictions.class_logits, 1);
    const auto pd = probs.data();
    const auto bd = predictions.boxes.data();
    const std::size_t n = predictions.class_logits.shape()[0];
    const std::size_t width = predictions.class_logits.shape()[1];
    const double w = static_cast<double>(image_w);
    const double h = static_cast<double>(image_h);
    std::vector<InferDetection> out;
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t arg = 0;
        for (std::size_t c = 1; c < width; ++c) {
            if (pd[i * width + c] > pd[i * width + arg]) {
                arg = c;
            }
        }
        if (arg + 1 == width) {
            continue;  // the slot's own verdict is "no object"
        }
        const double score = pd[i * width + arg];
        if (score < confidence_threshold) {
            continue;
        }
        const double cx = bd[i * 4], cy = bd[i * 4 + 1];
        const double bw = bd[i * 4 + 2], bh = bd[i * 4 + 3];
        InferDetection d;
        d.x0 = std::clamp((cx - bw / 2.0) * w, 0.0, w);
        d.y0 = std::clamp((cy - bh / 2.0) * h, 0.0, h);
        d.x1 = std::clamp((cx + bw / 2.0) * w, 0.0, w);
        d.y1 = std::clamp((cy + bh / 2.0) * h, 0.0, h);
        d.class_id = arg;
        d.score = score;
        out.push_back(d);
    }
    return out;
}

Trainer::Trainer(const ModelConfig& model_config, const TrainConfig& config)
    : config_(checked(config)), model_(model_config, config.seed),
      adam_(optimizer_groups(model_, config_)) {}

Trainer::Trainer(const Checkpoint& checkpoint, const TrainConfig& config)
    : config_(checked(config)), model_(Detector::from_checkpoint(checkpoint)),
      adam_(optimizer_groups(model_, config_)) {
    if (!has_entry(checkpoint, "trainer.step")) {
        throw DataError("checkpoint has no trainer state; it cannot seed a training run");
    }
    const double stored_seed = get_scalar(checkpoint, "trainer.seed");
    if (stored_seed != static_cast<double>(config_.seed)) {
        throw DataError("checkpoint was recorded under seed " + fmt(stored_seed) +
                        " but the config requests seed " + std::to_string(config_.seed) +
                        "; a resumed run would not reproduce the original");
    }
    step_ = static_cast<std::uint64_t>(get_scalar(checkpoint, "trainer.step"));
    std::map<std::string, std::vector<double>> state;
    for (const auto& [name, entry] : checkpoint) {
        if (name.rfind("adam.", 0) == 0) {
            state.emplace(name, entry.values);
        }
    }
    adam_.load_state(state, step_);
}

Checkpoint Trainer::snapshot() const {
    Checkpoint ck;
    model_.save_into(ck);
    for (const auto& [name, values] : adam_.state()) {
        CheckpointEntry entry;
        entry.shape = {values.size()};
        entry.values = values;
        ck.emplace(name, std::move(entry));
    }
    put_scalar(ck, "trainer.step", static_cast<double>(step_));
    put_scalar(ck, "trainer.seed", static_cast<double>(config_.seed));
    return ck;
}

TrainLog Trainer::run(std::span<const ImageSample> train_set, std::span<const ImageSample> val_set,
                      const std::string& out_dir) {
    if (train_set.empty()) {
        throw DataError("training set is empty");
    }
    namespace fs = std::filesystem;
    const bool writing = !out_dir.empty();
    std::ofstream step_log, eval_log;
    if (writing) {
        fs::create_directories(out_dir);
        step_log.open(fs::path(out_dir) / "train_log.tsv", std::ios::trunc);
        eval_log.open(fs::path(out_dir) / "eval_log.tsv", std::ios::trunc);
        if (!step_log || !eval_log) {
            throw DataError("cannot open log files under " + out_dir);
        }
        step_log << "step\ttotal\tclass\tl1\tgiou\tmatched_count\n";
        eval_log << "epoch\tmap\tmap50\tmar_10d\tmar_100d\n";
    }
    const auto write_checkpoint = [&](std::uint64_t step) {
        if (writing) {
            const fs::path path = fs::path(out_dir) / ("step_" + std::to_string(step) + ".ckpt");
            save_checkpoint(path.string(), snapshot());
        }
    };

    const std::size_t n = train_set.size();
    const std::size_t steps_per_epoch = (n + config_.batch_size - 1) / config_.batch_size;
    const std::uint64_t total_steps = config_.epochs * steps_per_epoch;
    TrainLog log;
    if (step_ >= total_steps) {
        write_checkpoint(step_);
        return log;  // schedule already satisfied (or zero epochs requested)
    }

    std::vector<std::size_t> order(n);
    std::size_t order_epoch = static_cast<std::size_t>(-1);
    std::uint64_t last_written = static_cast<std::uint64_t>(-1);
    while (step_ < total_steps) {
        const std::size_t epoch = static_cast<std::size_t>(step_ / steps_per_epoch);
        const std::size_t batch_index = static_cast<std::size_t>(step_ % steps_per_epoch);
        if (epoch != order_epoch) {
            std::iota(order.begin(), order.end(), std::size_t{0});
            Rng rng(derive_seed(config_.seed, "shuffle", epoch));
            std::shuffle(order.begin(), order.end(), rng.engine());
            order_epoch = epoch;
        }
        const std::size_t begin = batch_index * config_.batch_size;
        const std::size_t end = std::min(n, begin + config_.batch_size);

        Tape tape;
        LossBreakdown lb;
        const auto dump_batch = [&](const std::string& reason) -> std::string {
            if (!writing) {
                return "";
            }
            const fs::path path =
                fs::path(out_dir) / ("bad_batch_step_" + std::to_string(step_ + 1) + ".txt");
            std::ofstream dump(path);
            dump << "step\t" << (step_ + 1) << "\nepoch\t" << epoch << "\nreason\t" << reason
                 << '\n';
            if (lb.total.defined()) {
                dump << "total\t" << fmt(lb.total.item()) << "\nclass\t"
                     << fmt(lb.class_loss.item()) << "\nl1\t" << fmt(lb.l1_loss.item())
                     << "\ngiou\t" << fmt(lb.giou_loss.item()) << '\n';
            }
            dump << "samples";
            for (std::size_t k = begin; k < end; ++k) {
                dump << "\t" << train_set[order[k]].source_id;
            }
            dump << "\n";
            return path.string();
        };
        const auto abort_step = [&](const std::string& reason) {
            const std::string path = dump_batch(reason);
            throw NumericError(reason + (path.empty() ? "" : "; batch dumped to " + path));
        };
        Tensor objective;
        try {
            TapeScope scope(tape);
            const std::size_t layers = model_.config().num_decoder_layers;
            std::vector<std::vector<Tensor>> logits(layers), boxes(layers);
            std::vector<std::vector<GroundTruthObject>> targets;
            for (std::size_t k = begin; k < end; ++k) {
                const auto sets = model_.decode_layers(model_.encode(train_set[order[k]].image));
                for (std::size_t l = 0; l < layers; ++l) {
                    logits[l].push_back(sets[l].class_logits);
                    boxes[l].push_back(sets[l].boxes);
                }
                targets.push_back(train_set[order[k]].objects);
            }
            // the reported loss comes from the last decoder layer; earlier
            // layers contribute matched auxiliary losses through the shared
            // heads, which speeds up convergence a lot
            lb = batch_set_loss(logits[layers - 1], boxes[layers - 1], targets, config_.match,
                                config_.loss);
            objective = lb.total;
            for (std::size_t l = 0; l + 1 < layers; ++l) {
                const LossBreakdown aux =
                    batch_set_loss(logits[l], boxes[l], targets, config_.match, config_.loss);
                objective = add(objective, aux.total);
            }
        } catch (const NumericError& e) {
            abort_step(e.what());
        }
        if (!std::isfinite(objective.item())) {
            abort_step("loss became non-finite at step " + std::to_string(step_ + 1));
        }
        tape.backward(objective);
        try {
            adam_.clip_grad_norm(config_.clip_norm);
            adam_.step();
        } catch (const NumericError& e) {
            abort_step(e.what());
        }
        ++step_;

        StepRecord rec;
        rec.step = step_;
        rec.epoch = epoch;
        rec.total = lb.total.item();
        rec.class_loss = lb.class_loss.item();
        rec.l1_loss = lb.l1_loss.item();
        rec.giou_loss = lb.giou_loss.item();
        rec.matched = lb.matched_count;
        log.steps.push_back(rec);
        if (writing) {
            step_log << rec.step << '\t' << fmt(rec.total) << '\t' << fmt(rec.class_loss) << '\t'
                     << fmt(rec.l1_loss) << '\t' << fmt(rec.giou_loss) << '\t' << rec.matched
                     << '\n';
            step_log.flush();
        }
        if (config_.checkpoint_interval > 0 && step_ % config_.checkpoint_interval == 0) {
            write_checkpoint(step_);
            last_written = step_;
        }
        if (batch_index + 1 == steps_per_epoch && !val_set.empty()) {
            EpochEval ee;
            ee.epoch = epoch;
            ee.report = evaluate_model(model_, val_set);
            log.evals.push_back(ee);
            if (writing) {
                eval_log << epoch << '\t' << fmt(ee.report.map) << '\t' << fmt(ee.report.map50)
                         << '\t' << fmt(ee.report.mar_10d) << '\t' << fmt(ee.report.mar_100d)
                         << '\n';
                eval_log.flush();
            }
        }
    }
    if (last_written != step_) {
        write_checkpoint(step_);
    }
    return log;
}

}  // namespace tinydetr
