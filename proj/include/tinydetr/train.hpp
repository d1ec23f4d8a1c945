#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tinydetr/adam.hpp"
#include "tinydetr/checkpoint.hpp"
#include "tinydetr/config.hpp"
#include "tinydetr/data.hpp"
#include "tinydetr/eval.hpp"
#include "tinydetr/loss.hpp"
#include "tinydetr/matching.hpp"
#include "tinydetr/model.hpp"

namespace tinydetr {

struct TrainConfig {
    std::size_t epochs = 50;
    std::size_t batch_size = 8;
    double lr = 1e-5;
    double lr_backbone = 1e-6;  // patch-embedding group; everything else uses lr
    std::uint64_t seed = 0;
    std::size_t checkpoint_interval = 0;  // steps between snapshots; 0 keeps only the final one
    double clip_norm = 0.1;               // global gradient norm ceiling; <= 0 disables
    MatchWeights match;
    LossWeights loss;

    // Small-model schedule tuned for the synthetic task on one CPU.
    static TrainConfig desk();
    static TrainConfig from_config(KvConfig& config, TrainConfig base);
    static TrainConfig from_config(KvConfig& config);
    void validate() const;
};

struct StepRecord {
    std::uint64_t step = 0;  // 1-based, strictly increasing
    std::size_t epoch = 0;   // 0-based
    double total = 0.0;
    double class_loss = 0.0;
    double l1_loss = 0.0;
    double giou_loss = 0.0;
    std::size_t matched = 0;
};

struct EpochEval {
    std::size_t epoch = 0;
    EvalReport report;
};

struct TrainLog {
    std::vector<StepRecord> steps;
    std::vector<EpochEval> evals;
};

// Every query slot becomes one candidate: class = best foreground class,
// confidence = its softmax probability. Validation metrics want the full
// ranked pool, so nothing is thresholded away here.
std::vector<Detection> eval_detections(const PredictionSet& predictions);

EvalReport evaluate_model(const Detector& model, std::span<const ImageSample> samples,
                          const EvalOptions& options = {});

// User-facing detection in pixel corner form, clamped to the image rectangle.
struct InferDetection {
    double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;
    std::size_t class_id = 0;
    double score = 0.0;
};

// Softmax over the class logits, then drop slots whose argmax is the
// no-object class or whose best foreground probability is below the
// threshold. Overlapping survivors are all kept: there is deliberately no
// suppression step.
std::vector<InferDetection> infer_detections(const PredictionSet& predictions,
                                             double confidence_threshold, std::size_t image_w,
                                             std::size_t image_h);

// Owns the model/optimizer pair and the step counter so a run can stop at any
// checkpoint and continue bit-identically. Batch order is a pure function of
// (seed, epoch), which is what makes mid-epoch resumption possible.
class Trainer {
public:
    Trainer(const ModelConfig& model_config, const TrainConfig& config);
    // Restores model weights, optimizer moments, and the step counter.
    // Refuses checkpoints recorded under a different seed, since continuing
    // them under this config could not reproduce the original run.
    Trainer(const Checkpoint& checkpoint, const TrainConfig& config);

    // Runs the remaining steps of the schedule, evaluating on val_set at each
    // epoch end. out_dir receives train_log.tsv, eval_log.tsv, and
    // step_<n>.ckpt files; pass "" to keep everything in memory.
    TrainLog run(std::span<const ImageSample> train_set, std::span<const ImageSample> val_set,
                 const std::string& out_dir);

    Checkpoint snapshot() const;
    const Detector& model() const { return model_; }
    Detector& model() { return model_; }
    const TrainConfig& config() const { return config_; }
    std::uint64_t step() const { return step_; }

private:
    TrainConfig config_;
    Detector model_;
    Adam adam_;
    std::uint64_t step_ = 0;
};

}  // namespace tinydetr
