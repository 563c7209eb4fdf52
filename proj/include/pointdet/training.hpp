#pragma once

#include "pointdet/assignment.hpp"
#include "pointdet/data.hpp"
#include "pointdet/metrics.hpp"
#include "pointdet/model.hpp"

#include <map>
#include <memory>
#include <string>
#include <vector>

// The optimization loop: augment -> forward -> cost -> match -> loss ->
// backward -> decoupled-weight-decay Adam step, with periodic held-out
// evaluation, best-checkpoint tracking, and a strict bit-reproducible mode.

namespace pointdet::training {

struct TrainConfig {
    double learning_rate = 1e-4;
    double weight_decay = 1e-4;
    int batch_size = 8;
    int max_steps = 500;  // 0 = evaluate-only
    unsigned long long seed = 1;
    bool strict_deterministic = false;
    int eval_every = 100;       // evaluations also run on the final step
    double val_fraction = 0.2;  // <= 0 evaluates on the training set
    data::AugmentConfig augment;
    double eval_radius = 6.0;
    double confidence_threshold = 0.5;
    assignment::MatchWeights match;

    void validate() const;
};

struct StepRecord {
    int step = 0;
    double cls_loss = 0.0;
    double loc_loss = 0.0;
    double total = 0.0;
    bool has_eval = false;
    double val_macro_f1 = 0.0;
};

struct TrainResult {
    std::unique_ptr<model::Detector> detector;  // final parameters
    std::vector<StepRecord> history;
    double best_val_macro_f1 = 0.0;
    int best_step = 0;
};

// Trains on `samples`; when out_dir is non-empty writes best.ckpt, final.ckpt
// and history.jsonl there. Aborts with a diagnostic if the loss goes
// non-finite.
TrainResult train(const std::vector<data::Sample>& samples,
                  const model::ModelConfig& model_config, const TrainConfig& config,
                  const std::string& out_dir = "");

struct PredictResult {
    std::map<std::string, std::vector<metrics::Detection>> per_image;
    double images_per_second = 0.0;
};

// Eval-mode inference. Single-view inputs are zero-padded up to the model's
// divisibility requirement; multi-view inputs must already satisfy it. A
// proposal becomes a detection when its best non-background probability
// reaches the threshold.
PredictResult predict(model::Detector& detector, const std::vector<data::Sample>& samples,
                      double confidence_threshold);

// predict + evaluate_dataset against the samples' own annotations.
metrics::EvalReport evaluate_samples(model::Detector& detector,
                                     const std::vector<data::Sample>& samples,
                                     const metrics::EvalConfig& config);

void write_history_jsonl(const std::vector<StepRecord>& history, const std::string& path);

} // namespace pointdet::training
