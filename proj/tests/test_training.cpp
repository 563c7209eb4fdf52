#include "pointdet/data.hpp"
#include "pointdet/model.hpp"
#include "pointdet/error.hpp"
#include "pointdet/training.hpp"

#include <doctest.h>

#include <cmath>
#include <stdexcept>
#include <vector>

using namespace pointdet;

namespace {

model::ModelConfig tiny_model() {
    model::ModelConfig cfg;
    cfg.backbone.stage_channels = {8, 16, 32};
    cfg.backbone.levels = {2, 3, 4};
    cfg.backbone.pyramid_channels = 16;
    cfg.head.hidden_dim = 24;
    cfg.head.num_classes = 3;
    cfg.proposal_interval = 16.0;
    return cfg;
}

std::vector<data::Sample> tiny_dataset(int n, unsigned long long seed) {
    data::SynthSpec spec;
    spec.canvas_size = 48;
    spec.cells_min = 2;
    spec.cells_max = 4;
    spec.seed = seed;
    return data::generate_synthetic(spec, n, 1);
}

training::TrainConfig fast_config() {
    training::TrainConfig cfg;
    cfg.learning_rate = 1e-3;
    cfg.batch_size = 2;
    cfg.max_steps = 12;
    cfg.eval_every = 6;
    cfg.val_fraction = 0.0;  // evaluate on the training set
    cfg.seed = 5;
    cfg.augment.enabled = false;
    return cfg;
}

} // namespace

TEST_SUITE("training") {

TEST_CASE("a zero learning rate leaves every parameter at its initialization") {
    auto samples = tiny_dataset(2, 1);
    auto cfg = fast_config();
    cfg.learning_rate = 0.0;
    cfg.weight_decay = 0.1;  // decoupled decay must also be scaled away
    cfg.max_steps = 3;
    cfg.eval_every = 0;
    auto result = training::train(samples, tiny_model(), cfg);

    model::Detector reference(tiny_model(), cfg.seed);
    REQUIRE(result.detector != nullptr);
    const auto& trained = result.detector->params().items;
    const auto& fresh = reference.params().items;
    REQUIRE(trained.size() == fresh.size());
    for (size_t i = 0; i < trained.size(); ++i) {
        CHECK(trained[i].second->value == fresh[i].second->value);  // bitwise
    }
    CHECK(result.history.size() == 3u);
}

TEST_CASE("strict deterministic training reproduces the loss history exactly") {
    auto samples = tiny_dataset(3, 2);
    auto cfg = fast_config();
    cfg.strict_deterministic = true;
    cfg.augment.enabled = true;  // exercise the augmentation rng path too

    auto a = training::train(samples, tiny_model(), cfg);
    auto b = training::train(samples, tiny_model(), cfg);
    REQUIRE(a.history.size() == b.history.size());
    for (size_t i = 0; i < a.history.size(); ++i) {
        CHECK(a.history[i].step == b.history[i].step);
        CHECK(a.history[i].cls_loss == b.history[i].cls_loss);  // doubles, ==
        CHECK(a.history[i].loc_loss == b.history[i].loc_loss);
        CHECK(a.history[i].total == b.history[i].total);
        CHECK(a.history[i].has_eval == b.history[i].has_eval);
        if (a.history[i].has_eval) {
            CHECK(a.history[i].val_macro_f1 == b.history[i].val_macro_f1);
        }
    }
    CHECK(a.best_val_macro_f1 == b.best_val_macro_f1);
}

TEST_CASE("max_steps zero is evaluate-only") {
    auto samples = tiny_dataset(2, 3);
    auto cfg = fast_config();
    cfg.max_steps = 0;
    auto result = training::train(samples, tiny_model(), cfg);
    REQUIRE(result.history.size() == 1u);
    CHECK(result.history[0].step == 0);
    CHECK(result.history[0].has_eval);

    model::Detector reference(tiny_model(), cfg.seed);
    const auto& trained = result.detector->params().items;
    for (size_t i = 0; i < trained.size(); ++i) {
        CHECK(trained[i].second->value == reference.params().items[i].second->value);
    }
}

TEST_CASE("an absurd learning rate trips the divergence guard") {
    auto samples = tiny_dataset(2, 4);
    auto cfg = fast_config();
    cfg.learning_rate = 1e18;
    cfg.max_steps = 40;
    cfg.eval_every = 0;
    CHECK_THROWS_WITH_AS(training::train(samples, tiny_model(), cfg),
                         doctest::Contains("diverged"), std::runtime_error);
}

TEST_CASE("a short run reduces the training loss") {
    auto samples = tiny_dataset(4, 5);
    auto cfg = fast_config();
    cfg.learning_rate = 3e-4;
    cfg.max_steps = 30;
    cfg.eval_every = 0;
    auto result = training::train(samples, tiny_model(), cfg);
    REQUIRE(result.history.size() == 30u);
    double early = 0.0, late = 0.0;
    for (int i = 0; i < 5; ++i) {
        early += result.history[static_cast<size_t>(i)].total;
        late += result.history[result.history.size() - 1 - static_cast<size_t>(i)].total;
    }
    CHECK(late < early);
}

TEST_CASE("prediction with a zero threshold emits every proposal") {
    auto samples = tiny_dataset(2, 6);
    model::Detector detector(tiny_model(), 1);
    auto pred = training::predict(detector, samples, 0.0);
    REQUIRE(pred.per_image.size() == 2u);
    // 48x48 input, interval 16 -> 3x3 proposals per image
    for (const auto& [name, dets] : pred.per_image) {
        CHECK(dets.size() == 9u);
    }
    CHECK(pred.images_per_second > 0.0);

    // an impossible threshold removes everything
    auto none = training::predict(detector, samples, 2.0);
    for (const auto& [name, dets] : none.per_image) CHECK(dets.empty());
}

TEST_CASE("prediction pads inputs that miss the divisor") {
    data::SynthSpec spec;
    spec.canvas_size = 40;  // not divisible by 16
    spec.seed = 7;
    auto samples = data::generate_synthetic(spec, 1, 1);
    model::Detector detector(tiny_model(), 1);
    auto pred = training::predict(detector, samples, 0.0);
    // padded to 48 -> full 3x3 grid
    CHECK(pred.per_image.begin()->second.size() == 9u);
}

TEST_CASE("evaluate_samples wires predictions against the sample annotations") {
    auto samples = tiny_dataset(2, 8);
    model::Detector detector(tiny_model(), 1);
    metrics::EvalConfig cfg;
    cfg.match_radius = 6.0;
    cfg.num_classes = 3;
    cfg.confidence_threshold = 0.5;
    auto report = training::evaluate_samples(detector, samples, cfg);
    CHECK(report.per_class.size() == 3u);
    CHECK(report.macro_f1 >= 0.0);
    CHECK(report.macro_f1 <= 1.0);
}

TEST_CASE("training rejects sample view counts that disagree with the model") {
    auto samples = tiny_dataset(2, 9);  // K = 1 samples
    auto model_cfg = tiny_model();
    model_cfg.mfov_k = 2;
    auto cfg = fast_config();
    CHECK_THROWS_AS(training::train(samples, model_cfg, cfg), ValidationError);
}

TEST_CASE("train config validation rejects nonsense") {
    training::TrainConfig cfg;
    cfg.batch_size = 0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg = training::TrainConfig{};
    cfg.learning_rate = -1.0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg = training::TrainConfig{};
    cfg.val_fraction = 1.5;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
}

} // TEST_SUITE
