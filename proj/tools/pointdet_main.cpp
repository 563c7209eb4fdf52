#include "pointdet/config.hpp"
#include "pointdet/data.hpp"
#include "pointdet/error.hpp"
#include "pointdet/image.hpp"
#include "pointdet/kernels.hpp"
#include "pointdet/metrics.hpp"
#include "pointdet/model.hpp"
#include "pointdet/ops.hpp"
#include "pointdet/training.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

// Command-line front end: generate-synth / train / predict / evaluate /
// visualize. Exit codes: 0 success, 2 validation or usage error, 3 runtime
// failure. Flags override config-file values; --dump-config prints the fully
// resolved configuration and exits.

namespace fs = std::filesystem;
using namespace pointdet;

namespace {

// Binds flags to fields of one AppConfig so that a value reaches the config
// only when the user actually typed the flag (defaults < file < flags).
struct FlagBag {
    CLI::App* cmd = nullptr;

    template <typename T>
    void opt(const std::string& name, T& target, const std::string& help, bool list = false) {
        auto slot = std::make_shared<T>(target);
        CLI::Option* o = cmd->add_option(name, *slot, help);
        if (list) o->delimiter(',');
        writebacks.push_back([this, name, slot, &target]() {
            if (cmd->count(name) > 0) target = *slot;
        });
    }
    void flag_sets(const std::string& name, bool& target, bool value, const std::string& help) {
        auto slot = std::make_shared<bool>(false);
        cmd->add_flag(name, *slot, help);
        writebacks.push_back([slot, &target, value]() {
            if (*slot) target = value;
        });
    }
    void apply() {
        for (auto& f : writebacks) f();
    }

    std::vector<std::function<void()>> writebacks;
};

void add_model_flags(FlagBag& bag, config::AppConfig& cfg) {
    bag.opt("--interval", cfg.model.proposal_interval,
            "proposal grid spacing in pixels (model.proposal_interval)");
    bag.opt("--mfov-k", cfg.model.mfov_k,
            "number of concentric views the model consumes (model.mfov_k)");
    bag.opt("--mode", cfg.model.mode, "decode mode: dpa or iterative (model.mode)");
    bag.opt("--refine-stages", cfg.model.refine_stages,
            "stage count for iterative mode (model.refine_stages)");
    bag.flag_sets("--mfov-bilinear-upsample", cfg.model.mfov_bilinear_upsample, true,
                  "fuse views with bilinear upsampling instead of learned doubling layers "
                  "(model.mfov_bilinear_upsample)");
    bag.opt("--stage-channels", cfg.model.backbone.stage_channels,
            "backbone stage widths, comma separated (backbone.stage_channels)", true);
    bag.opt("--pyramid-channels", cfg.model.backbone.pyramid_channels,
            "feature channels per pyramid level (backbone.pyramid_channels)");
    bag.opt("--levels", cfg.model.backbone.levels,
            "pyramid levels (strides 2^level), comma separated (backbone.levels)", true);
    bag.opt("--hidden-dim", cfg.model.head.hidden_dim,
            "hidden width of the decode heads (head.hidden_dim)");
    bag.opt("--dropout", cfg.model.head.dropout_rate,
            "dropout rate inside the heads (head.dropout_rate)");
    bag.opt("--classes", cfg.model.head.num_classes,
            "number of foreground cell classes (head.num_classes)");
}

void add_eval_flags(FlagBag& bag, config::AppConfig& cfg) {
    bag.opt("--radius", cfg.eval.match_radius,
            "match radius in pixels for scoring (eval.radius)");
    bag.opt("--threshold", cfg.eval.confidence_threshold,
            "confidence threshold for emitting detections (eval.confidence_threshold)");
}

// Resolution order: built-in defaults, then the --config file, then flags.
void resolve_config(CLI::App* cmd, const std::string& config_path, FlagBag& bag,
                    config::AppConfig& cfg) {
    if (cmd->count("--config") > 0) cfg = config::parse_config_file(config_path, cfg);
    bag.apply();
    cfg.sync();
}

bool handle_dump(CLI::App* cmd, const config::AppConfig& cfg) {
    if (cmd->count("--dump-config") == 0) return false;
    std::cout << config::dump_config(cfg);
    return true;
}

int cmd_generate_synth(const config::AppConfig& cfg, const std::string& out_dir) {
    require(!out_dir.empty(), "generate-synth: --out is required");
    std::vector<data::Sample> samples =
        data::generate_synthetic(cfg.synth, cfg.synth_images, cfg.synth_mfov_k);
    data::save_samples(samples, out_dir);

    std::vector<long> per_class(static_cast<size_t>(cfg.synth.num_classes), 0);
    long total = 0;
    for (const auto& s : samples)
        for (const auto& cell : s.cells) {
            ++per_class[static_cast<size_t>(cell.class_id)];
            ++total;
        }
    std::printf("wrote %zu samples (%d view%s each, %dx%d) to %s\n", samples.size(),
                cfg.synth_mfov_k, cfg.synth_mfov_k == 1 ? "" : "s", cfg.synth.canvas_size,
                cfg.synth.canvas_size, out_dir.c_str());
    std::printf("cells per class:");
    for (size_t c = 0; c < per_class.size(); ++c)
        std::printf(" class %zu: %ld%s", c, per_class[c], c + 1 < per_class.size() ? "," : "");
    std::printf(" (total %ld)\n", total);
    return 0;
}

int cmd_train(const config::AppConfig& cfg, const std::string& data_dir,
              const std::string& out_dir) {
    require(!data_dir.empty(), "train: --data is required");
    require(!out_dir.empty(), "train: --out is required");

    std::vector<data::Sample> samples = data::load_samples(data_dir);
    training::TrainResult result = training::train(samples, cfg.model, cfg.train, out_dir);

    std::ofstream cfg_out(fs::path(out_dir) / "config.json", std::ios::binary);
    cfg_out << config::dump_config(cfg);

    std::printf("trained %d steps on %zu samples (%s kernels)\n", cfg.train.max_steps,
                samples.size(),
                kernels::lane_name(cfg.train.strict_deterministic ? kernels::Lane::scalar
                                                                  : kernels::active_lane()));
    std::printf("best val macro F1 %.4f at step %d\n", std::max(0.0, result.best_val_macro_f1),
                result.best_step);
    std::printf("wrote %s/{best.ckpt, final.ckpt, history.jsonl, config.json}\n",
                out_dir.c_str());
    return 0;
}

int cmd_predict(const config::AppConfig& cfg, const std::string& data_dir,
                const std::string& checkpoint, const std::string& out_dir) {
    require(!data_dir.empty(), "predict: --data is required");
    require(!checkpoint.empty(), "predict: --checkpoint is required");
    require(!out_dir.empty(), "predict: --out is required");

    std::unique_ptr<model::Detector> detector = model::load_checkpoint(checkpoint);
    std::vector<data::Sample> samples = data::load_samples(data_dir);
    training::PredictResult result =
        training::predict(*detector, samples, cfg.eval.confidence_threshold);

    fs::create_directories(out_dir);
    size_t total = 0;
    for (const auto& [name, dets] : result.per_image) {
        metrics::save_predictions(dets, (fs::path(out_dir) / (name + ".json")).string());
        total += dets.size();
    }
    std::printf("wrote %zu detections over %zu images to %s (%.2f images/s)\n", total,
                samples.size(), out_dir.c_str(), result.images_per_second);
    return 0;
}

int classes_present(const std::map<std::string, std::vector<data::Cell>>& annotations,
                    const std::map<std::string, std::vector<metrics::Detection>>& predictions,
                    int at_least) {
    int n = at_least;
    for (const auto& [name, cells] : annotations)
        for (const auto& c : cells) n = std::max(n, c.class_id + 1);
    for (const auto& [name, dets] : predictions)
        for (const auto& d : dets) n = std::max(n, d.class_id + 1);
    return n;
}

int cmd_evaluate(const config::AppConfig& cfg, const std::string& data_dir,
                 const std::string& checkpoint, const std::string& predictions_dir,
                 const std::string& out_dir) {
    require(!data_dir.empty(), "evaluate: --data is required");
    require(checkpoint.empty() != predictions_dir.empty(),
            "evaluate: pass exactly one of --checkpoint (live inference) or --predictions "
            "(saved detections directory)");

    std::vector<data::Sample> samples = data::load_samples(data_dir);
    std::map<std::string, std::vector<data::Cell>> annotations;
    for (const auto& s : samples) annotations.emplace(s.name, s.cells);

    std::map<std::string, std::vector<metrics::Detection>> predictions;
    double images_per_second = 0.0;
    metrics::EvalConfig ec = cfg.eval;
    if (!checkpoint.empty()) {
        std::unique_ptr<model::Detector> detector = model::load_checkpoint(checkpoint);
        ec.num_classes = detector->config().head.num_classes;
        training::PredictResult pred =
            training::predict(*detector, samples, ec.confidence_threshold);
        predictions = std::move(pred.per_image);
        images_per_second = pred.images_per_second;
    } else {
        require(fs::is_directory(predictions_dir),
                "evaluate: --predictions is not a directory: " + predictions_dir);
        for (const auto& entry : fs::directory_iterator(predictions_dir)) {
            if (!entry.is_regular_file() || entry.path().extension() != ".json") continue;
            predictions.emplace(entry.path().stem().string(),
                                metrics::load_predictions(entry.path().string()));
        }
    }
    ec.num_classes = classes_present(annotations, predictions, ec.num_classes);

    metrics::EvalReport report =
        metrics::evaluate_dataset(predictions, annotations, ec, images_per_second);
    std::cout << report.to_table();
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        std::ofstream os(fs::path(out_dir) / "report.json", std::ios::binary);
        os << report.to_json() << "\n";
        std::printf("wrote %s/report.json\n", out_dir.c_str());
    }
    return 0;
}

std::vector<metrics::Detection> load_points_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    require(is.good(), "visualize: cannot open points file: " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    nlohmann::ordered_json doc;
    try {
        doc = nlohmann::ordered_json::parse(ss.str());
    } catch (const nlohmann::ordered_json::parse_error& e) {
        fail_validation("visualize: " + path + " is not valid JSON: " + e.what());
    }
    if (doc.contains("detections")) return metrics::load_predictions(path);
    if (doc.contains("cells")) {
        data::AnnotatedImage ann = data::load_annotation(path);
        std::vector<metrics::Detection> dets;
        dets.reserve(ann.cells.size());
        for (const auto& c : ann.cells) dets.push_back({c.x, c.y, c.class_id, 1.0});
        return dets;
    }
    fail_validation("visualize: " + path + " has neither a \"detections\" nor a \"cells\" array");
}

int cmd_visualize(const config::AppConfig& cfg, const std::string& image_path,
                  const std::string& points_path, const std::string& checkpoint,
                  bool show_deformation, const std::string& out_path) {
    require(!image_path.empty(), "visualize: --image is required");
    require(!out_path.empty(), "visualize: --out is required");

    Image img = read_png(image_path);

    if (show_deformation) {
        require(!checkpoint.empty(), "visualize: --show-deformation needs --checkpoint");
        std::unique_ptr<model::Detector> detector = model::load_checkpoint(checkpoint);
        require(detector->config().mfov_k == 1,
                "visualize: --show-deformation supports single-view models only");
        const int divisor = detector->config().required_divisor();
        const int ph = (img.h + divisor - 1) / divisor * divisor;
        const int pw = (img.w + divisor - 1) / divisor * divisor;
        if (ph != img.h || pw != img.w) img = pad_or_crop(img, ph, pw);

        ag::NoGradGuard guard;
        Rng rng(0);
        model::ModelOutput out = detector->forward({img}, /*training=*/false, rng);
        const std::vector<double> probs = ag::row_softmax(out.logits);
        const int num_classes = detector->config().head.num_classes;

        const int gap = 4;
        Image panel = Image::filled(img.h, img.w * 2 + gap, 1.0);
        for (int y = 0; y < img.h; ++y)
            for (int x = 0; x < img.w; ++x)
                for (int ch = 0; ch < 3; ++ch) {
                    panel.at(y, x, ch) = img.at(y, x, ch);
                    panel.at(y, x + img.w + gap, ch) = img.at(y, x, ch);
                }
        const double gray[3] = {0.75, 0.75, 0.75};
        double displacement = 0.0;
        const size_t m = out.proposals.initial.size();
        for (size_t i = 0; i < m; ++i) {
            const auto& p0 = out.proposals.initial[i];
            const auto& p1 = out.proposals.deformed[i];
            displacement += std::hypot(p1.x - p0.x, p1.y - p0.y);
            draw_disc(panel, p0.x, p0.y, 1.2, gray);
            const double* row = probs.data() + i * static_cast<size_t>(num_classes + 1);
            int best = 0;
            for (int c = 1; c < num_classes; ++c)
                if (row[c] > row[best]) best = c;
            const bool confident = row[best] >= cfg.eval.confidence_threshold;
            draw_disc(panel, p1.x + img.w + gap, p1.y, confident ? 1.6 : 1.0,
                      confident ? class_color(best) : gray);
        }
        write_png(panel, out_path);
        std::printf("mean proposal displacement: %.6f px over %zu proposals\n",
                    m == 0 ? 0.0 : displacement / static_cast<double>(m), m);
        std::printf("wrote %s (left: initial grid, right: deformed)\n", out_path.c_str());
        return 0;
    }

    require(!points_path.empty(), "visualize: --points is required (or use --show-deformation)");
    std::vector<metrics::Detection> dets = load_points_file(points_path);
    for (const auto& d : dets) {
        const double* rgb = class_color(d.class_id);
        draw_disc(img, d.x, d.y, 1.6, rgb);
        draw_ring(img, d.x, d.y, 4.0, rgb);
    }
    write_png(img, out_path);
    std::printf("wrote %s with %zu markers\n", out_path.c_str(), dets.size());
    return 0;
}

std::string config_footer() {
    return "Config file keys and defaults (JSON, flags win, unknown keys rejected):\n" +
           config::dump_config(config::AppConfig{});
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Point-based cell detector: deformable point proposals decoded from a "
                 "multi-scale feature pyramid, with concentric multi-view fusion"};
    app.require_subcommand(1);
    app.footer(config_footer());

    std::string config_path, data_dir, out_dir, checkpoint, predictions_dir, image_path,
        points_path;
    bool show_deformation = false;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "JSON config file (see footer for keys)");
        cmd->add_flag("--dump-config", "print the fully resolved config and exit");
        cmd->footer(config_footer());
    };

    CLI::App* gen =
        app.add_subcommand("generate-synth", "render a deterministic synthetic blob-cell dataset");
    config::AppConfig gen_cfg;
    FlagBag gen_bag{gen, {}};
    add_common(gen);
    gen->add_option("--out", out_dir, "output dataset directory (required)");
    gen_bag.opt("--images", gen_cfg.synth_images, "number of samples (synth.images)");
    gen_bag.opt("--mfov-k", gen_cfg.synth_mfov_k, "concentric views per sample (synth.mfov_k)");
    gen_bag.opt("--canvas", gen_cfg.synth.canvas_size,
                "annotated view side in pixels (synth.canvas_size)");
    gen_bag.opt("--classes", gen_cfg.synth.num_classes, "cell classes (synth.num_classes)");
    gen_bag.opt("--cells-min", gen_cfg.synth.cells_min, "min cells per image (synth.cells_min)");
    gen_bag.opt("--cells-max", gen_cfg.synth.cells_max, "max cells per image (synth.cells_max)");
    gen_bag.opt("--blob-radius-lo", gen_cfg.synth.blob_radius_lo,
                "min blob radius, px (synth.blob_radius_lo)");
    gen_bag.opt("--blob-radius-hi", gen_cfg.synth.blob_radius_hi,
                "max blob radius, px (synth.blob_radius_hi)");
    gen_bag.opt("--texture-scale", gen_cfg.synth.background_texture_scale,
                "background noise cell size, px (synth.background_texture_scale)");
    gen_bag.flag_sets("--context-tint", gen_cfg.synth.context_tint, true,
                      "encode the class only as a wide-context background tint "
                      "(synth.context_tint)");
    gen_bag.opt("--seed", gen_cfg.synth.seed, "generator seed (synth.seed)");

    CLI::App* train = app.add_subcommand("train", "optimize a detector on a dataset");
    config::AppConfig train_cfg;
    FlagBag train_bag{train, {}};
    add_common(train);
    train->add_option("--data", data_dir, "dataset root (required)");
    train->add_option("--out", out_dir, "run directory for checkpoints/history (required)");
    add_model_flags(train_bag, train_cfg);
    add_eval_flags(train_bag, train_cfg);
    train_bag.opt("--lr", train_cfg.train.learning_rate, "learning rate (train.learning_rate)");
    train_bag.opt("--weight-decay", train_cfg.train.weight_decay,
                  "decoupled weight decay (train.weight_decay)");
    train_bag.opt("--batch-size", train_cfg.train.batch_size,
                  "images per step (train.batch_size)");
    train_bag.opt("--max-steps", train_cfg.train.max_steps,
                  "optimization steps; 0 = evaluate-only (train.max_steps)");
    train_bag.opt("--seed", train_cfg.train.seed, "training seed (train.seed)");
    train_bag.flag_sets("--strict", train_cfg.train.strict_deterministic, true,
                        "bit-reproducible mode: pins the scalar kernel lane "
                        "(train.strict_deterministic)");
    train_bag.opt("--eval-every", train_cfg.train.eval_every,
                  "evaluation period in steps; 0 = final step only (train.eval_every)");
    train_bag.opt("--val-fraction", train_cfg.train.val_fraction,
                  "held-out fraction; <= 0 evaluates on the training set (train.val_fraction)");
    train_bag.flag_sets("--no-augment", train_cfg.train.augment.enabled, false,
                        "disable scale/shift/flip augmentation (train.augment)");

    CLI::App* predict = app.add_subcommand("predict", "run inference and save detections");
    config::AppConfig predict_cfg;
    FlagBag predict_bag{predict, {}};
    add_common(predict);
    predict->add_option("--data", data_dir, "dataset root (required)");
    predict->add_option("--checkpoint", checkpoint, "model checkpoint (required)");
    predict->add_option("--out", out_dir, "directory for per-image predictions (required)");
    add_eval_flags(predict_bag, predict_cfg);

    CLI::App* evaluate = app.add_subcommand(
        "evaluate", "score detections against annotations (live model or saved predictions)");
    config::AppConfig eval_cfg;
    FlagBag eval_bag{evaluate, {}};
    add_common(evaluate);
    evaluate->add_option("--data", data_dir, "dataset root with annotations (required)");
    evaluate->add_option("--checkpoint", checkpoint, "model checkpoint for live inference");
    evaluate->add_option("--predictions", predictions_dir,
                         "directory of saved per-image predictions");
    evaluate->add_option("--out", out_dir, "optional directory for report.json");
    add_eval_flags(eval_bag, eval_cfg);
    eval_bag.opt("--classes", eval_cfg.model.head.num_classes,
                 "class count for saved-prediction scoring (head.num_classes)");

    CLI::App* visualize = app.add_subcommand(
        "visualize", "overlay class-colored markers, or initial-vs-deformed proposals");
    config::AppConfig vis_cfg;
    FlagBag vis_bag{visualize, {}};
    add_common(visualize);
    visualize->add_option("--image", image_path, "input PNG (required)");
    visualize->add_option("--points", points_path, "detections or annotation JSON to overlay");
    visualize->add_option("--checkpoint", checkpoint, "checkpoint for --show-deformation");
    visualize->add_flag("--show-deformation", show_deformation,
                        "render initial vs deformed proposal grids side by side");
    visualize->add_option("--out", out_dir, "output PNG path (required)");
    add_eval_flags(vis_bag, vis_cfg);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (gen->parsed()) {
            resolve_config(gen, config_path, gen_bag, gen_cfg);
            if (handle_dump(gen, gen_cfg)) return 0;
            return cmd_generate_synth(gen_cfg, out_dir);
        }
        if (train->parsed()) {
            resolve_config(train, config_path, train_bag, train_cfg);
            if (handle_dump(train, train_cfg)) return 0;
            return cmd_train(train_cfg, data_dir, out_dir);
        }
        if (predict->parsed()) {
            resolve_config(predict, config_path, predict_bag, predict_cfg);
            if (handle_dump(predict, predict_cfg)) return 0;
            return cmd_predict(predict_cfg, data_dir, checkpoint, out_dir);
        }
        if (evaluate->parsed()) {
            resolve_config(evaluate, config_path, eval_bag, eval_cfg);
            if (handle_dump(evaluate, eval_cfg)) return 0;
            return cmd_evaluate(eval_cfg, data_dir, checkpoint, predictions_dir, out_dir);
        }
        if (visualize->parsed()) {
            resolve_config(visualize, config_path, vis_bag, vis_cfg);
            if (handle_dump(visualize, vis_cfg)) return 0;
            return cmd_visualize(vis_cfg, image_path, points_path, checkpoint, show_deformation,
                                 out_dir);
        }
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 0;
}
