#include "pointdet/data.hpp"
#include "pointdet/error.hpp"
#include "pointdet/model.hpp"
#include "pointdet/rng.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

using namespace pointdet;

namespace {

model::ModelConfig small_config() {
    model::ModelConfig cfg;
    cfg.backbone.stage_channels = {8, 16, 32};
    cfg.backbone.levels = {2, 3, 4};
    cfg.backbone.pyramid_channels = 16;
    cfg.head.hidden_dim = 24;
    cfg.head.num_classes = 3;
    cfg.proposal_interval = 8.0;
    return cfg;
}

std::vector<Image> noise_views(Rng& rng, int k, int side) {
    std::vector<Image> fovs;
    for (int i = 0; i < k; ++i) {
        Image img = Image::filled(side, side);
        for (double& v : img.pix) v = rng.uniform(0.0, 1.0);
        fovs.push_back(std::move(img));
    }
    return fovs;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
    REQUIRE(a.size() == b.size());
    double worst = 0.0;
    for (size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
    return worst;
}

} // namespace

TEST_SUITE("model") {

TEST_CASE("forward emits one proposal row per grid point with C+1 logits") {
    auto cfg = small_config();
    model::Detector det(cfg, 1);
    Rng rng(2);
    auto fovs = noise_views(rng, 1, 48);
    auto out = det.forward(fovs, false, rng);
    const int per_axis = 48 / 8;  // interval 8
    const int m = per_axis * per_axis;
    CHECK(out.proposals.initial.size() == static_cast<size_t>(m));
    CHECK(out.final_points_t->shape == std::vector<int>{m, 2});
    CHECK(out.logits->shape == std::vector<int>{m, 4});
    CHECK(out.final_points.size() == static_cast<size_t>(m));
    CHECK(out.pooled_points->shape == out.final_points_t->shape);
    CHECK(out.pooled_stages == 1);
}

TEST_CASE("freshly initialized detectors keep proposals exactly on the grid") {
    auto cfg = small_config();
    model::Detector det(cfg, 7);
    Rng rng(3);
    auto fovs = noise_views(rng, 1, 48);
    auto out = det.forward(fovs, false, rng);
    for (size_t i = 0; i < out.final_points.size(); ++i) {
        // zero-initialized offset heads: bitwise equality, not approx
        CHECK(out.final_points[i].x == out.proposals.initial[i].x);
        CHECK(out.final_points[i].y == out.proposals.initial[i].y);
        CHECK(out.proposals.deformed[i].x == out.proposals.initial[i].x);
    }
}

TEST_CASE("eval forward is deterministic") {
    auto cfg = small_config();
    model::Detector det(cfg, 11);
    Rng r1(5), r2(99);  // eval mode must not consume randomness
    auto fovs = noise_views(r1, 1, 32);
    auto a = det.forward(fovs, false, r1);
    auto b = det.forward(fovs, false, r2);
    CHECK(a.logits->value == b.logits->value);
    CHECK(a.final_points_t->value == b.final_points_t->value);
}

TEST_CASE("training forward with dropout differs but keeps shapes") {
    auto cfg = small_config();
    cfg.head.dropout_rate = 0.5;
    model::Detector det(cfg, 11);
    Rng rng(5);
    auto fovs = noise_views(rng, 1, 32);
    Rng d1(1), d2(2);
    auto a = det.forward(fovs, true, d1);
    auto b = det.forward(fovs, true, d2);
    CHECK(a.logits->shape == b.logits->shape);
    CHECK(a.logits->value != b.logits->value);
}

TEST_CASE("single-view aggregation is a passthrough") {
    auto cfg = small_config();
    model::Detector det(cfg, 13);
    Rng rng(6);
    Image img = noise_views(rng, 1, 32)[0];
    auto pyramid = det.build_pyramid(img, 1, false, rng);
    auto fused = det.mfov_aggregate({pyramid});
    REQUIRE(fused.size() == pyramid.size());
    for (size_t i = 0; i < fused.size(); ++i) {
        CHECK(max_abs_diff(fused[i]->value, pyramid[i]->value) == 0.0);
    }
}

TEST_CASE("multi-view aggregation preserves the innermost pyramid shapes") {
    for (int K : {2, 3}) {
        auto cfg = small_config();
        cfg.mfov_k = K;
        // divisor 2^(4+K)
        const int side = 1 << (4 + K);
        model::Detector det(cfg, 17);
        Rng rng(7);
        auto fovs = noise_views(rng, K, side);

        std::vector<std::vector<ag::Tensor>> pyramids;
        for (int k = 0; k < K; ++k)
            pyramids.push_back(det.build_pyramid(fovs[static_cast<size_t>(k)], k + 1, false, rng));
        auto fused = det.mfov_aggregate(pyramids);
        REQUIRE(fused.size() == pyramids[0].size());
        for (size_t li = 0; li < fused.size(); ++li) {
            CHECK(fused[li]->shape == pyramids[K - 1][li]->shape);
        }

        // and the full forward runs end to end at the matching divisor
        auto out = det.forward(fovs, false, rng);
        const int m = (side / 8) * (side / 8);
        CHECK(out.logits->dim(0) == m);
    }
}

TEST_CASE("aggregation rejects mismatched view counts") {
    auto cfg = small_config();
    cfg.mfov_k = 2;
    model::Detector det(cfg, 19);
    Rng rng(8);
    Image img = noise_views(rng, 1, 64)[0];
    auto pyramid = det.build_pyramid(img, 1, false, rng);
    CHECK_THROWS_AS(det.mfov_aggregate({pyramid}), ValidationError);
}

TEST_CASE("bilinear view fusion matches shapes of the learned path") {
    auto cfg = small_config();
    cfg.mfov_k = 2;
    cfg.mfov_bilinear_upsample = true;
    model::Detector det(cfg, 23);
    Rng rng(9);
    auto fovs = noise_views(rng, 2, 64);
    auto out = det.forward(fovs, false, rng);
    CHECK(out.logits->dim(1) == 4);
    CHECK(out.final_points_t->dim(0) == out.logits->dim(0));
}

TEST_CASE("iterative mode pools every refinement stage for assignment") {
    auto cfg = small_config();
    cfg.mode = "iterative";
    cfg.refine_stages = 2;
    model::Detector det(cfg, 29);
    Rng rng(10);
    auto fovs = noise_views(rng, 1, 32);
    auto out = det.forward(fovs, false, rng);
    const int m = (32 / 8) * (32 / 8);
    CHECK(out.pooled_stages == 2);
    CHECK(out.pooled_points->shape == std::vector<int>{2 * m, 2});
    CHECK(out.pooled_logits->shape == std::vector<int>{2 * m, 4});
    CHECK(out.final_points_t->shape == std::vector<int>{m, 2});
    // the last stage block of the pool is the final output
    for (int i = 0; i < m * 2; ++i) {
        CHECK(out.pooled_points->value[static_cast<size_t>(m) * 2 + i] ==
              out.final_points_t->value[static_cast<size_t>(i)]);
    }
    for (int i = 0; i < m * 4; ++i) {
        CHECK(out.pooled_logits->value[static_cast<size_t>(m) * 4 + i] ==
              out.logits->value[static_cast<size_t>(i)]);
    }
}

TEST_CASE("input sizes must honor the level divisor") {
    auto cfg = small_config();
    model::Detector det(cfg, 31);
    Rng rng(11);
    auto fovs = noise_views(rng, 1, 40);  // not divisible by 16
    CHECK_THROWS_WITH_AS(det.forward(fovs, false, rng), doctest::Contains("divisible by 16"),
                         ValidationError);

    auto cfg2 = small_config();
    cfg2.mfov_k = 2;
    CHECK(cfg2.required_divisor() == 64);
    model::Detector det2(cfg2, 31);
    auto fovs2 = noise_views(rng, 2, 32);  // divisible by 16 but not by 64
    CHECK_THROWS_WITH_AS(det2.forward(fovs2, false, rng), doctest::Contains("divisible by 64"),
                         ValidationError);
}

TEST_CASE("config validation names the offense") {
    auto cfg = small_config();
    cfg.backbone.levels = {2, 4};
    CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("consecutive"), ValidationError);

    cfg = small_config();
    cfg.backbone.stage_channels = {8, 16};
    CHECK_THROWS_AS(cfg.validate(), ValidationError);

    cfg = small_config();
    cfg.mode = "banana";
    CHECK_THROWS_AS(cfg.validate(), ValidationError);

    cfg = small_config();
    cfg.head.dropout_rate = 1.0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
}

TEST_CASE("model config json round-trips and rejects unknown keys") {
    auto cfg = small_config();
    cfg.mfov_k = 2;
    cfg.mode = "iterative";
    cfg.refine_stages = 3;
    cfg.proposal_interval = 12.5;
    cfg.mfov_bilinear_upsample = true;
    const std::string text = model::model_config_to_json(cfg);
    auto back = model::model_config_from_json(text);
    CHECK(back.backbone.stage_channels == cfg.backbone.stage_channels);
    CHECK(back.backbone.levels == cfg.backbone.levels);
    CHECK(back.head.hidden_dim == cfg.head.hidden_dim);
    CHECK(back.proposal_interval == cfg.proposal_interval);
    CHECK(back.mfov_k == 2);
    CHECK(back.mode == "iterative");
    CHECK(back.refine_stages == 3);
    CHECK(back.mfov_bilinear_upsample == true);

    CHECK_THROWS_WITH_AS(model::model_config_from_json(R"({"model": {"wat": 1}})"),
                         doctest::Contains("unknown key"), ValidationError);
    CHECK_THROWS_AS(model::model_config_from_json("{oops"), ValidationError);
}

TEST_CASE("checkpoints restore bit-identical behavior") {
    namespace fs = std::filesystem;
    auto cfg = small_config();
    cfg.mfov_k = 1;
    model::Detector det(cfg, 37);
    // perturb parameters away from init so the test is not vacuous
    Rng noise(41);
    for (auto& [name, param] : det.params().items) {
        for (double& v : param->value) v += noise.uniform(-0.05, 0.05);
    }

    fs::path dir = fs::temp_directory_path() / "pointdet_test_ckpt";
    fs::remove_all(dir);
    fs::create_directories(dir);
    const std::string path = (dir / "m.ckpt").string();
    model::save_checkpoint(det, path);
    auto restored = model::load_checkpoint(path);
    REQUIRE(restored != nullptr);
    CHECK(restored->config().head.num_classes == cfg.head.num_classes);
    CHECK(restored->params().total_scalars() == det.params().total_scalars());

    Rng rng(12);
    auto fovs = noise_views(rng, 1, 32);
    auto a = det.forward(fovs, false, rng);
    auto b = restored->forward(fovs, false, rng);
    CHECK(a.logits->value == b.logits->value);            // bitwise
    CHECK(a.final_points_t->value == b.final_points_t->value);

    CHECK_THROWS_AS(model::load_checkpoint((dir / "missing.ckpt").string()), std::runtime_error);
    fs::remove_all(dir);
}

TEST_CASE("seeds change the initialization") {
    auto cfg = small_config();
    model::Detector a(cfg, 1), b(cfg, 2);
    bool any_diff = false;
    for (size_t i = 0; i < a.params().items.size(); ++i) {
        if (a.params().items[i].second->value != b.params().items[i].second->value)
            any_diff = true;
    }
    CHECK(any_diff);
}

} // TEST_SUITE
