#include "pointdet/data.hpp"
#include "pointdet/image.hpp"
#include "pointdet/metrics.hpp"
#include "pointdet/rng.hpp"

#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#ifndef POINTDET_CLI_PATH
#error "POINTDET_CLI_PATH must point at the command-line binary"
#endif

using namespace pointdet;
namespace fs = std::filesystem;

namespace {

struct RunResult {
    int exit_code = -1;
    std::string output;  // stdout + stderr
};

fs::path scratch_root() {
    static fs::path root = [] {
        fs::path dir = fs::temp_directory_path() / "pointdet_cli_tests";
        fs::remove_all(dir);
        fs::create_directories(dir);
        return dir;
    }();
    return root;
}

RunResult run_cli(const std::string& args) {
    static int counter = 0;
    const fs::path log = scratch_root() / ("run_" + std::to_string(counter++) + ".log");
    const std::string cmd =
        std::string(POINTDET_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    RunResult result;
#ifdef WIFEXITED
    result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
#else
    result.exit_code = status;
#endif
    std::ifstream in(log);
    std::stringstream ss;
    ss << in.rdbuf();
    result.output = ss.str();
    return result;
}

std::string read_text(const fs::path& path) {
    std::ifstream in(path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

bool trees_identical(const fs::path& a, const fs::path& b) {
    std::vector<std::string> rel_a, rel_b;
    for (const auto& e : fs::recursive_directory_iterator(a))
        if (e.is_regular_file()) rel_a.push_back(fs::relative(e.path(), a).string());
    for (const auto& e : fs::recursive_directory_iterator(b))
        if (e.is_regular_file()) rel_b.push_back(fs::relative(e.path(), b).string());
    std::sort(rel_a.begin(), rel_a.end());
    std::sort(rel_b.begin(), rel_b.end());
    if (rel_a != rel_b) return false;
    for (const auto& rel : rel_a) {
        std::ifstream fa(a / rel, std::ios::binary), fb(b / rel, std::ios::binary);
        std::stringstream sa, sb;
        sa << fa.rdbuf();
        sb << fb.rdbuf();
        if (sa.str() != sb.str()) return false;
    }
    return true;
}

// A one-image flat dataset with a single class-0 cell at (cx, cy).
void write_point_dataset(const fs::path& root, double cx, double cy) {
    fs::create_directories(root / "images");
    fs::create_directories(root / "annotations");
    Image img = Image::filled(32, 32, 0.5);
    write_png(img, (root / "images" / "s1.png").string());
    data::AnnotatedImage ann;
    ann.width = 32;
    ann.height = 32;
    ann.cells = {{cx, cy, 0}};
    data::save_annotation(ann, (root / "annotations" / "s1.json").string());
}

const std::string kSmallModelFlags =
    " --stage-channels 8,16,32 --levels 2,3,4 --pyramid-channels 16 --hidden-dim 24"
    " --interval 16";

} // namespace

TEST_SUITE("cli") {

TEST_CASE("help exits 0 and bad flags exit 2") {
    CHECK(run_cli("--help").exit_code == 0);
    CHECK(run_cli("train --help").exit_code == 0);
    CHECK(run_cli("--no-such-flag").exit_code == 2);
    CHECK(run_cli("train --no-such-flag").exit_code == 2);
    // missing required arguments
    CHECK(run_cli("generate-synth").exit_code == 2);
    CHECK(run_cli("train --out /tmp/nowhere_run").exit_code == 2);
    CHECK(run_cli("predict --data /tmp/nowhere --out /tmp/nowhere2").exit_code == 2);
}

TEST_CASE("unknown config keys are rejected with exit 2") {
    const fs::path cfg = scratch_root() / "bad_config.json";
    std::ofstream(cfg) << R"({"train": {"learning_rat": 0.1}})";
    auto r = run_cli("train --config " + cfg.string() + " --data x --out y");
    CHECK(r.exit_code == 2);
    CHECK(r.output.find("unknown key") != std::string::npos);
    CHECK(r.output.find("learning_rat") != std::string::npos);

    const fs::path cfg2 = scratch_root() / "bad_section.json";
    std::ofstream(cfg2) << R"({"trian": {}})";
    CHECK(run_cli("generate-synth --config " + cfg2.string() + " --out z").exit_code == 2);
}

TEST_CASE("dump-config reflects flag overrides and exits 0") {
    auto r = run_cli("train --dump-config --max-steps 123 --lr 0.5" + kSmallModelFlags);
    CHECK(r.exit_code == 0);
    CHECK(r.output.find("\"max_steps\": 123") != std::string::npos);
    CHECK(r.output.find("\"learning_rate\": 0.5") != std::string::npos);
    CHECK(r.output.find("\"hidden_dim\": 24") != std::string::npos);
    // config file < flag precedence
    const fs::path cfg = scratch_root() / "prec.json";
    std::ofstream(cfg) << R"({"train": {"max_steps": 7, "batch_size": 3}})";
    auto layered =
        run_cli("train --dump-config --config " + cfg.string() + " --max-steps 11");
    CHECK(layered.exit_code == 0);
    CHECK(layered.output.find("\"max_steps\": 11") != std::string::npos);
    CHECK(layered.output.find("\"batch_size\": 3") != std::string::npos);
}

TEST_CASE("generate-synth is byte-deterministic and honors mfov-k") {
    const fs::path a = scratch_root() / "gen_a";
    const fs::path b = scratch_root() / "gen_b";
    const std::string common = "generate-synth --images 2 --canvas 32 --seed 7 --out ";
    CHECK(run_cli(common + a.string()).exit_code == 0);
    CHECK(run_cli(common + b.string()).exit_code == 0);
    CHECK(trees_identical(a, b));

    const fs::path c = scratch_root() / "gen_c";
    auto r = run_cli("generate-synth --images 1 --canvas 32 --mfov-k 3 --seed 2 --out " +
                     c.string());
    CHECK(r.exit_code == 0);
    CHECK(fs::exists(c / "sample_0001" / "fov_1.png"));
    CHECK(fs::exists(c / "sample_0001" / "fov_2.png"));
    CHECK(fs::exists(c / "sample_0001" / "fov_3.png"));
    CHECK(fs::exists(c / "sample_0001" / "fov_3.json"));
    CHECK(r.output.find("3 views each") != std::string::npos);

    const fs::path d = scratch_root() / "gen_d";
    auto changed = run_cli("generate-synth --images 2 --canvas 32 --seed 8 --out " + d.string());
    CHECK(changed.exit_code == 0);
    CHECK_FALSE(trees_identical(a, d));
}

TEST_CASE("evaluate scores saved predictions against annotations") {
    const fs::path root = scratch_root() / "eval_data";
    write_point_dataset(root, 16.0, 16.0);

    // predictions 8px off the single ground truth
    const fs::path preds = scratch_root() / "eval_preds";
    fs::create_directories(preds);
    metrics::save_predictions({{24.0, 16.0, 0, 0.9}}, (preds / "s1.json").string());

    auto strict6 = run_cli("evaluate --data " + root.string() + " --predictions " +
                           preds.string() + " --radius 6 --classes 1");
    CHECK(strict6.exit_code == 0);
    CHECK(strict6.output.find("macro_f1 0.0000") != std::string::npos);

    auto loose12 = run_cli("evaluate --data " + root.string() + " --predictions " +
                           preds.string() + " --radius 12 --classes 1");
    CHECK(loose12.exit_code == 0);
    CHECK(loose12.output.find("macro_f1 1.0000") != std::string::npos);

    // exact predictions give a perfect score and a report file on request
    const fs::path exact = scratch_root() / "eval_exact";
    fs::create_directories(exact);
    metrics::save_predictions({{16.0, 16.0, 0, 0.9}}, (exact / "s1.json").string());
    const fs::path report_dir = scratch_root() / "eval_report";
    auto perfect = run_cli("evaluate --data " + root.string() + " --predictions " +
                           exact.string() + " --radius 6 --classes 1 --out " +
                           report_dir.string());
    CHECK(perfect.exit_code == 0);
    CHECK(perfect.output.find("macro_f1 1.0000") != std::string::npos);
    CHECK(fs::exists(report_dir / "report.json"));
    CHECK(read_text(report_dir / "report.json").find("\"macro_f1\"") != std::string::npos);

    // exactly one of --checkpoint/--predictions
    CHECK(run_cli("evaluate --data " + root.string()).exit_code == 2);
    CHECK(run_cli("evaluate --data " + root.string() + " --predictions " + preds.string() +
                  " --checkpoint nope.ckpt")
              .exit_code == 2);
}

TEST_CASE("train, predict and the two evaluate paths agree end to end") {
    const fs::path data = scratch_root() / "e2e_data";
    auto gen = run_cli("generate-synth --images 2 --canvas 48 --cells-min 2 --cells-max 3"
                       " --seed 11 --out " +
                       data.string());
    REQUIRE(gen.exit_code == 0);

    const fs::path run = scratch_root() / "e2e_run";
    auto train = run_cli("train --data " + data.string() + " --out " + run.string() +
                         kSmallModelFlags +
                         " --max-steps 5 --batch-size 2 --eval-every 0 --val-fraction 0"
                         " --no-augment --seed 3");
    REQUIRE(train.exit_code == 0);
    CHECK(fs::exists(run / "final.ckpt"));
    CHECK(fs::exists(run / "best.ckpt"));
    CHECK(fs::exists(run / "history.jsonl"));
    CHECK(fs::exists(run / "config.json"));

    const fs::path ckpt = run / "final.ckpt";
    const fs::path pred_dir = scratch_root() / "e2e_preds";
    auto pred = run_cli("predict --data " + data.string() + " --checkpoint " + ckpt.string() +
                        " --out " + pred_dir.string() + " --threshold 0.5");
    REQUIRE(pred.exit_code == 0);
    CHECK(fs::exists(pred_dir / "sample_0001.json"));
    CHECK(fs::exists(pred_dir / "sample_0002.json"));

    auto live = run_cli("evaluate --data " + data.string() + " --checkpoint " + ckpt.string() +
                        " --radius 6 --threshold 0.5");
    REQUIRE(live.exit_code == 0);
    auto saved = run_cli("evaluate --data " + data.string() + " --predictions " +
                         pred_dir.string() + " --radius 6 --threshold 0.5 --classes 3");
    REQUIRE(saved.exit_code == 0);

    auto macro_line = [](const std::string& text) {
        const auto pos = text.find("macro_f1");
        REQUIRE(pos != std::string::npos);
        const auto end = text.find("  radius", pos);  // scores only, not throughput
        return text.substr(pos, end - pos);
    };
    CHECK(macro_line(live.output) == macro_line(saved.output));
    CHECK(train.output.find("best val macro F1") != std::string::npos);
}

TEST_CASE("history is reproducible under strict determinism") {
    const fs::path data = scratch_root() / "strict_data";
    REQUIRE(run_cli("generate-synth --images 2 --canvas 48 --seed 4 --out " + data.string())
                .exit_code == 0);
    const fs::path r1 = scratch_root() / "strict_run1";
    const fs::path r2 = scratch_root() / "strict_run2";
    const std::string common = "train --data " + data.string() + kSmallModelFlags +
                               " --max-steps 4 --batch-size 2 --eval-every 2 --val-fraction 0"
                               " --strict --seed 7 --out ";
    REQUIRE(run_cli(common + r1.string()).exit_code == 0);
    REQUIRE(run_cli(common + r2.string()).exit_code == 0);
    const std::string h1 = read_text(r1 / "history.jsonl");
    CHECK_FALSE(h1.empty());
    CHECK(h1 == read_text(r2 / "history.jsonl"));
}

TEST_CASE("visualize with no detections reproduces the input pixels") {
    const fs::path dir = scratch_root() / "vis";
    fs::create_directories(dir);
    Rng rng(5);
    Image img = Image::filled(24, 24);
    for (double& v : img.pix) v = rng.uniform(0.0, 1.0);
    const fs::path in_png = dir / "in.png";
    write_png(img, in_png.string());
    const fs::path empty = dir / "none.json";
    metrics::save_predictions({}, empty.string());
    const fs::path out_png = dir / "out.png";
    auto r = run_cli("visualize --image " + in_png.string() + " --points " + empty.string() +
                     " --out " + out_png.string());
    REQUIRE(r.exit_code == 0);
    Image a = read_png(in_png.string());
    Image b = read_png(out_png.string());
    CHECK(a.pix == b.pix);

    // with a detection the overlay must change pixels
    const fs::path one = dir / "one.json";
    metrics::save_predictions({{12.0, 12.0, 0, 0.9}}, one.string());
    const fs::path marked_png = dir / "marked.png";
    REQUIRE(run_cli("visualize --image " + in_png.string() + " --points " + one.string() +
                    " --out " + marked_png.string())
                .exit_code == 0);
    Image marked = read_png(marked_png.string());
    CHECK(marked.pix != a.pix);
}

TEST_CASE("visualize renders deformation arrows from a checkpoint") {
    const fs::path data = scratch_root() / "e2e_data";       // built above
    const fs::path ckpt = scratch_root() / "e2e_run" / "final.ckpt";
    REQUIRE(fs::exists(ckpt));
    const fs::path out_png = scratch_root() / "vis_deform.png";
    auto r = run_cli("visualize --image " + (data / "images" / "sample_0001.png").string() +
                     " --checkpoint " + ckpt.string() + " --show-deformation --out " +
                     out_png.string());
    REQUIRE(r.exit_code == 0);
    CHECK(r.output.find("mean proposal displacement") != std::string::npos);
    Image panel = read_png(out_png.string());
    CHECK(panel.w > 48);  // side-by-side panel is wider than the input
}

} // TEST_SUITE
