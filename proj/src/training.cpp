#include "pointdet/training.hpp"

#include "pointdet/error.hpp"
#include "pointdet/kernels.hpp"
#include "pointdet/ops.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace pointdet::training {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

void TrainConfig::validate() const {
    require(learning_rate >= 0.0, "train: learning_rate must be >= 0");
    require(weight_decay >= 0.0, "train: weight_decay must be >= 0");
    require(batch_size >= 1, "train: batch_size must be >= 1");
    require(max_steps >= 0, "train: max_steps must be >= 0");
    require(eval_every >= 0, "train: eval_every must be >= 0");
    require(val_fraction < 1.0, "train: val_fraction must be < 1");
    require(eval_radius > 0.0, "train: eval_radius must be > 0");
    require(confidence_threshold >= 0.0 && confidence_threshold <= 1.0,
            "train: confidence_threshold must be in [0, 1]");
    require(match.tau >= 0.0 && match.w_bg >= 0.0 && match.lambda_loc >= 0.0,
            "train: match weights must be >= 0");
}

namespace {

// Pins the reference kernel lane for the lifetime of a strict training run.
class ScopedScalarLane {
public:
    explicit ScopedScalarLane(bool on) : previous_(kernels::scalar_forced()) {
        if (on) kernels::force_scalar(true);
    }
    ~ScopedScalarLane() { kernels::force_scalar(previous_); }
    ScopedScalarLane(const ScopedScalarLane&) = delete;
    ScopedScalarLane& operator=(const ScopedScalarLane&) = delete;

private:
    bool previous_;
};

class AdamW {
public:
    AdamW(double lr, double weight_decay) : lr_(lr), weight_decay_(weight_decay) {}

    void step(model::ParamStore& params) {
        ++t_;
        if (state_m_.empty()) {
            state_m_.resize(params.items.size());
            state_v_.resize(params.items.size());
        }
        for (size_t i = 0; i < params.items.size(); ++i) {
            ag::Tensor& p = params.items[i].second;
            if (p->grad.empty()) continue;  // parameter unused by this graph
            if (state_m_[i].size() != p->size()) {
                state_m_[i].assign(p->size(), 0.0);
                state_v_[i].assign(p->size(), 0.0);
            }
            kernels::adamw_update(p->data(), p->grad.data(), state_m_[i].data(),
                                  state_v_[i].data(), p->size(), lr_, 0.9, 0.999, 1e-8,
                                  weight_decay_, t_);
        }
    }

private:
    double lr_;
    double weight_decay_;
    int t_ = 0;
    std::vector<std::vector<double>> state_m_;
    std::vector<std::vector<double>> state_v_;
};

int round_up(int v, int divisor) { return (v + divisor - 1) / divisor * divisor; }

std::map<std::string, std::vector<data::Cell>> annotations_of(
    const std::vector<data::Sample>& samples) {
    std::map<std::string, std::vector<data::Cell>> out;
    for (const auto& s : samples) {
        require(out.emplace(s.name, s.cells).second,
                "duplicate sample name in dataset: " + s.name);
    }
    return out;
}

} // namespace

PredictResult predict(model::Detector& detector, const std::vector<data::Sample>& samples,
                      double confidence_threshold) {
    ag::NoGradGuard guard;
    Rng rng(0);  // dropout is inactive in eval mode, so this stream is never read
    const int divisor = detector.config().required_divisor();
    const int num_classes = detector.config().head.num_classes;

    PredictResult result;
    const auto t0 = std::chrono::steady_clock::now();
    for (const auto& sample : samples) {
        std::vector<Image> fovs = sample.fovs;
        if (fovs.size() == 1) {
            const int ph = round_up(fovs[0].h, divisor);
            const int pw = round_up(fovs[0].w, divisor);
            if (ph != fovs[0].h || pw != fovs[0].w) fovs[0] = pad_or_crop(fovs[0], ph, pw);
        }
        model::ModelOutput out = detector.forward(fovs, /*training=*/false, rng);
        const std::vector<double> probs = ag::row_softmax(out.logits);

        std::vector<metrics::Detection> dets;
        const int m = out.logits->dim(0);
        for (int i = 0; i < m; ++i) {
            const double* row = probs.data() + static_cast<size_t>(i) * (num_classes + 1);
            int best = 0;
            for (int c = 1; c < num_classes; ++c)
                if (row[c] > row[best]) best = c;
            if (row[best] >= confidence_threshold)
                dets.push_back({out.final_points[static_cast<size_t>(i)].x,
                                out.final_points[static_cast<size_t>(i)].y, best, row[best]});
        }
        result.per_image.emplace(sample.name, std::move(dets));
    }
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.images_per_second =
        samples.empty() ? 0.0 : static_cast<double>(samples.size()) / std::max(seconds, 1e-9);
    return result;
}

metrics::EvalReport evaluate_samples(model::Detector& detector,
                                     const std::vector<data::Sample>& samples,
                                     const metrics::EvalConfig& config) {
    PredictResult pred = predict(detector, samples, config.confidence_threshold);
    return metrics::evaluate_dataset(pred.per_image, annotations_of(samples), config,
                                     pred.images_per_second);
}

void write_history_jsonl(const std::vector<StepRecord>& history, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    require(os.good(), "cannot write history file: " + path);
    for (const auto& rec : history) {
        json j;
        j["step"] = rec.step;
        j["cls_loss"] = rec.cls_loss;
        j["loc_loss"] = rec.loc_loss;
        j["total"] = rec.total;
        if (rec.has_eval) j["val_macro_f1"] = rec.val_macro_f1;
        os << j.dump() << "\n";
    }
}

TrainResult train(const std::vector<data::Sample>& samples,
                  const model::ModelConfig& model_config, const TrainConfig& config,
                  const std::string& out_dir) {
    require(!samples.empty(), "train: dataset is empty");
    model_config.validate();
    config.validate();
    for (const auto& s : samples)
        require(static_cast<int>(s.fovs.size()) == model_config.mfov_k,
                "train: sample " + s.name + " has " + std::to_string(s.fovs.size()) +
                    " views but the model expects " + std::to_string(model_config.mfov_k));

    ScopedScalarLane lane_guard(config.strict_deterministic);
    if (!out_dir.empty()) fs::create_directories(out_dir);

    // Deterministic split: every k-th sample is held out. A fraction <= 0 (or
    // a split too small to hold anything out) evaluates on the training set.
    std::vector<int> train_idx, val_idx;
    if (config.val_fraction > 0.0 && samples.size() >= 2) {
        const int stride =
            std::max<int>(2, static_cast<int>(std::llround(1.0 / config.val_fraction)));
        for (size_t i = 0; i < samples.size(); ++i)
            (static_cast<int>(i) % stride == stride - 1 ? val_idx : train_idx).push_back(
                static_cast<int>(i));
    }
    if (train_idx.empty())
        for (size_t i = 0; i < samples.size(); ++i) train_idx.push_back(static_cast<int>(i));
    std::vector<data::Sample> val_samples;
    for (int i : val_idx) val_samples.push_back(samples[static_cast<size_t>(i)]);
    if (val_samples.empty())
        for (int i : train_idx) val_samples.push_back(samples[static_cast<size_t>(i)]);

    TrainResult result;
    result.detector = std::make_unique<model::Detector>(model_config, config.seed);
    model::Detector& detector = *result.detector;

    Rng master(config.seed);
    Rng step_rng = master.fork(1);   // augmentation + dropout, consumed in step order
    Rng order_rng = master.fork(2);  // epoch shuffling

    const int divisor = model_config.required_divisor();
    const int num_classes = model_config.head.num_classes;
    const metrics::EvalConfig eval_config{config.eval_radius, num_classes,
                                          config.confidence_threshold};
    AdamW optimizer(config.learning_rate, config.weight_decay);

    std::vector<int> order;
    size_t cursor = 0;
    auto next_sample = [&]() -> const data::Sample& {
        if (cursor >= order.size()) {
            order = train_idx;
            for (size_t i = order.size(); i > 1; --i)
                std::swap(order[i - 1],
                          order[static_cast<size_t>(order_rng.uniform_int(0, static_cast<int64_t>(i) - 1))]);
            cursor = 0;
        }
        return samples[static_cast<size_t>(order[cursor++])];
    };

    result.best_val_macro_f1 = -1.0;
    auto run_eval = [&](StepRecord& rec) {
        metrics::EvalReport report = evaluate_samples(detector, val_samples, eval_config);
        rec.has_eval = true;
        rec.val_macro_f1 = report.macro_f1;
        if (report.macro_f1 > result.best_val_macro_f1) {
            result.best_val_macro_f1 = report.macro_f1;
            result.best_step = rec.step;
            if (!out_dir.empty())
                model::save_checkpoint(detector, (fs::path(out_dir) / "best.ckpt").string());
        }
    };

    if (config.max_steps == 0) {  // evaluate-only: no parameter ever changes
        StepRecord rec;
        run_eval(rec);
        result.history.push_back(rec);
    }

    for (int step = 1; step <= config.max_steps; ++step) {
        std::vector<ag::Tensor> losses;
        double cls_sum = 0.0, loc_sum = 0.0;
        for (int b = 0; b < config.batch_size; ++b) {
            const data::Sample& raw = next_sample();
            data::Sample aug = data::augment(raw, config.augment, divisor, step_rng);
            model::ModelOutput out = detector.forward(aug.fovs, /*training=*/true, step_rng);
            double probe = 0.0;
            for (double v : out.pooled_logits->value) probe += v;
            // squared so the matcher's distance arithmetic cannot overflow
            for (double v : out.pooled_points->value) probe += v * v;
            if (!std::isfinite(probe)) {
                throw std::runtime_error(
                    "training diverged at step " + std::to_string(step) +
                    ": model outputs are not finite; try a lower learning rate");
            }
            const std::vector<double> probs = ag::row_softmax(out.pooled_logits);
            assignment::CostMatrix cost = assignment::build_cost_matrix(
                out.pooled_points->value, probs, out.pooled_points->dim(0), num_classes,
                aug.cells, config.match.tau);
            assignment::Assignment match = assignment::hungarian_match(cost);
            assignment::LossBreakdown loss =
                assignment::compute_loss(out.pooled_points, out.pooled_logits, aug.cells, match,
                                         num_classes, config.match);
            losses.push_back(loss.total);
            cls_sum += loss.cls_loss;
            loc_sum += loss.loc_loss;
        }
        ag::Tensor acc = losses[0];
        for (size_t i = 1; i < losses.size(); ++i) acc = ag::add(acc, losses[i]);
        ag::Tensor batch_loss = ag::scale(acc, 1.0 / config.batch_size);

        StepRecord rec;
        rec.step = step;
        rec.cls_loss = cls_sum / config.batch_size;
        rec.loc_loss = loc_sum / config.batch_size;
        rec.total = batch_loss->scalar();
        if (!std::isfinite(rec.total)) {
            std::ostringstream msg;
            msg << "training diverged at step " << step << ": loss is not finite (cls="
                << rec.cls_loss << ", loc=" << rec.loc_loss
                << "); try a lower learning rate";
            throw std::runtime_error(msg.str());
        }

        ag::backward(batch_loss);
        optimizer.step(detector.params());
        detector.params().zero_grads();

        if ((config.eval_every > 0 && step % config.eval_every == 0) ||
            step == config.max_steps)
            run_eval(rec);
        result.history.push_back(rec);
    }

    if (!out_dir.empty()) {
        model::save_checkpoint(detector, (fs::path(out_dir) / "final.ckpt").string());
        if (result.best_val_macro_f1 < 0.0)  // no eval ever ran
            model::save_checkpoint(detector, (fs::path(out_dir) / "best.ckpt").string());
        write_history_jsonl(result.history, (fs::path(out_dir) / "history.jsonl").string());
    }
    return result;
}

} // namespace pointdet::training
