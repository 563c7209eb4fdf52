#include "pointdet/data.hpp"

#include "pointdet/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace pointdet::data {

namespace {

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open file: " + path);
    std::ostringstream buffer;
    buffer << in.rdbuf();
    return buffer.str();
}

void write_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write file: " + path);
    out << text;
}

} // namespace

std::vector<Cell> parse_annotation_json(const std::string& text, int& width, int& height,
                                        int num_classes_hint, const std::string& origin) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        fail_validation(origin + ": malformed JSON (" + e.what() + ")");
    }
    if (!doc.is_object() || !doc.contains("width") || !doc.contains("height") ||
        !doc.contains("cells")) {
        fail_validation(origin + ": annotation must contain width, height and cells");
    }
    width = doc["width"].get<int>();
    height = doc["height"].get<int>();
    require(width > 0 && height > 0, origin + ": non-positive image dimensions");

    std::vector<Cell> cells;
    int record = 0;
    for (const auto& entry : doc["cells"]) {
        if (!entry.contains("x") || !entry.contains("y") || !entry.contains("class")) {
            fail_validation(origin + ": cell record " + std::to_string(record) +
                            " must contain x, y and class");
        }
        Cell cell;
        cell.x = entry["x"].get<double>();
        cell.y = entry["y"].get<double>();
        cell.class_id = entry["class"].get<int>();
        if (!std::isfinite(cell.x) || !std::isfinite(cell.y) || cell.x < 0.0 ||
            cell.x >= width || cell.y < 0.0 || cell.y >= height) {
            fail_validation(origin + ": cell record " + std::to_string(record) +
                            " coordinates outside [0,width)x[0,height)");
        }
        if (cell.class_id < 0 ||
            (num_classes_hint > 0 && cell.class_id >= num_classes_hint)) {
            fail_validation(origin + ": cell record " + std::to_string(record) +
                            " has unknown class id " + std::to_string(cell.class_id));
        }
        cells.push_back(cell);
        ++record;
    }
    return cells;
}

void save_annotation(const AnnotatedImage& ann, const std::string& path) {
    json doc;
    doc["width"] = ann.width;
    doc["height"] = ann.height;
    doc["cells"] = json::array();
    for (const auto& cell : ann.cells) {
        doc["cells"].push_back({{"x", cell.x}, {"y", cell.y}, {"class", cell.class_id}});
    }
    if (!ann.magnification_tag.empty()) doc["magnification"] = ann.magnification_tag;
    write_file(path, doc.dump(2) + "\n");
}

AnnotatedImage load_annotation(const std::string& path, int num_classes_hint) {
    AnnotatedImage ann;
    ann.name = fs::path(path).stem().string();
    json doc = json::parse(read_file(path), nullptr, false);
    ann.cells = parse_annotation_json(read_file(path), ann.width, ann.height,
                                      num_classes_hint, path);
    if (doc.is_object() && doc.contains("magnification")) {
        ann.magnification_tag = doc["magnification"].get<std::string>();
    }
    return ann;
}

std::vector<AnnotatedImage> load_dataset(const std::string& root) {
    const fs::path images_dir = fs::path(root) / "images";
    const fs::path ann_dir = fs::path(root) / "annotations";
    if (!fs::is_directory(images_dir) || !fs::is_directory(ann_dir)) {
        fail_validation("dataset root must contain images/ and annotations/: " + root);
    }
    std::vector<std::string> names;
    for (const auto& entry : fs::directory_iterator(images_dir)) {
        if (entry.path().extension() == ".png") names.push_back(entry.path().stem().string());
    }
    std::sort(names.begin(), names.end());

    std::vector<AnnotatedImage> out;
    for (const auto& name : names) {
        const fs::path ann_path = ann_dir / (name + ".json");
        if (!fs::exists(ann_path)) {
            fail_validation("missing annotation for image: " + name + ".png");
        }
        AnnotatedImage ann = load_annotation(ann_path.string());
        ann.name = name;
        ann.image_path = (images_dir / (name + ".png")).string();
        out.push_back(std::move(ann));
    }
    return out;
}

std::vector<Sample> load_samples(const std::string& root) {
    std::vector<Sample> samples;
    if (fs::is_directory(fs::path(root) / "images")) {
        for (const auto& ann : load_dataset(root)) {
            Sample sample;
            sample.name = ann.name;
            sample.fovs.push_back(read_png(ann.image_path));
            sample.cells = ann.cells;
            require(sample.fovs[0].w == ann.width && sample.fovs[0].h == ann.height,
                    ann.name + ": annotation dimensions disagree with the image");
            samples.push_back(std::move(sample));
        }
        return samples;
    }

    std::vector<std::string> dirs;
    for (const auto& entry : fs::directory_iterator(root)) {
        if (entry.is_directory() && entry.path().filename().string().rfind("sample_", 0) == 0) {
            dirs.push_back(entry.path().string());
        }
    }
    if (dirs.empty()) {
        fail_validation("dataset root has neither images/ nor sample_* directories: " + root);
    }
    std::sort(dirs.begin(), dirs.end());
    for (const auto& dir : dirs) {
        Sample sample;
        sample.name = fs::path(dir).filename().string();
        int k = 1;
        while (fs::exists(fs::path(dir) / ("fov_" + std::to_string(k) + ".png"))) {
            sample.fovs.push_back(read_png((fs::path(dir) / ("fov_" + std::to_string(k) + ".png")).string()));
            ++k;
        }
        require(!sample.fovs.empty(), sample.name + ": no fov_*.png views found");
        const std::string ann_path =
            (fs::path(dir) / ("fov_" + std::to_string(k - 1) + ".json")).string();
        AnnotatedImage ann = load_annotation(ann_path);
        require(ann.width == sample.width() && ann.height == sample.height(),
                sample.name + ": annotation dimensions disagree with the innermost view");
        for (const auto& view : sample.fovs) {
            require(view.w == sample.width() && view.h == sample.height(),
                    sample.name + ": all views must share one resolution");
        }
        sample.cells = ann.cells;
        samples.push_back(std::move(sample));
    }
    return samples;
}

void save_samples(const std::vector<Sample>& samples, const std::string& root) {
    fs::create_directories(root);
    const bool flat = !samples.empty() && samples[0].fovs.size() == 1;
    if (flat) {
        fs::create_directories(fs::path(root) / "images");
        fs::create_directories(fs::path(root) / "annotations");
        for (const auto& sample : samples) {
            write_png(sample.fovs[0], (fs::path(root) / "images" / (sample.name + ".png")).string());
            AnnotatedImage ann;
            ann.width = sample.width();
            ann.height = sample.height();
            ann.cells = sample.cells;
            save_annotation(ann, (fs::path(root) / "annotations" / (sample.name + ".json")).string());
        }
        return;
    }
    for (const auto& sample : samples) {
        const fs::path dir = fs::path(root) / sample.name;
        fs::create_directories(dir);
        for (size_t k = 0; k < sample.fovs.size(); ++k) {
            write_png(sample.fovs[k], (dir / ("fov_" + std::to_string(k + 1) + ".png")).string());
        }
        AnnotatedImage ann;
        ann.width = sample.width();
        ann.height = sample.height();
        ann.cells = sample.cells;
        ann.magnification_tag = "fov_" + std::to_string(sample.fovs.size());
        save_annotation(ann, (dir / ("fov_" + std::to_string(sample.fovs.size()) + ".json")).string());
    }
}

namespace {

int pad_up(int v, int divisor) { return ((v + divisor - 1) / divisor) * divisor; }

} // namespace

Sample augment(const Sample& sample, const AugmentConfig& config, int divisor, Rng& rng) {
    Sample out = sample;
    const bool multi_view = sample.fovs.size() > 1;

    if (config.enabled && !multi_view) {
        if (rng.bernoulli(config.scale_prob)) {
            const double s = rng.uniform(config.scale_lo, config.scale_hi);
            const int nh = std::max(1, static_cast<int>(std::lround(sample.height() * s)));
            const int nw = std::max(1, static_cast<int>(std::lround(sample.width() * s)));
            // Use the realized integer resize factors so cells stay aligned.
            const double fy = static_cast<double>(nh) / sample.height();
            const double fx = static_cast<double>(nw) / sample.width();
            out.fovs[0] = resize_bilinear(out.fovs[0], nh, nw);
            for (auto& cell : out.cells) {
                cell.x = (cell.x + 0.5) * fx - 0.5;
                cell.y = (cell.y + 0.5) * fy - 0.5;
            }
        }
        if (rng.bernoulli(config.shift_prob)) {
            const int max_dx = static_cast<int>(out.fovs[0].w * config.shift_max_fraction);
            const int max_dy = static_cast<int>(out.fovs[0].h * config.shift_max_fraction);
            const int dx = rng.uniform_int(-max_dx, max_dx);
            const int dy = rng.uniform_int(-max_dy, max_dy);
            Image shifted = Image::filled(out.fovs[0].h, out.fovs[0].w);
            for (int y = 0; y < shifted.h; ++y) {
                for (int x = 0; x < shifted.w; ++x) {
                    const int sy = y - dy, sx = x - dx;
                    if (sy >= 0 && sy < out.fovs[0].h && sx >= 0 && sx < out.fovs[0].w) {
                        for (int ch = 0; ch < 3; ++ch) {
                            shifted.at(y, x, ch) = out.fovs[0].at(sy, sx, ch);
                        }
                    }
                }
            }
            out.fovs[0] = std::move(shifted);
            for (auto& cell : out.cells) {
                cell.x += dx;
                cell.y += dy;
            }
        }
    }

    if (config.enabled && rng.bernoulli(config.flip_prob)) {
        for (auto& view : out.fovs) view = flip_horizontal(view);
        for (auto& cell : out.cells) cell.x = out.fovs.back().w - 1 - cell.x;
    }
    if (config.enabled && rng.bernoulli(config.flip_prob)) {
        for (auto& view : out.fovs) view = flip_vertical(view);
        for (auto& cell : out.cells) cell.y = out.fovs.back().h - 1 - cell.y;
    }

    // Drop cells that left the frame, then restore the divisibility contract.
    std::vector<Cell> kept;
    for (const auto& cell : out.cells) {
        if (cell.x >= 0.0 && cell.x < out.fovs.back().w && cell.y >= 0.0 &&
            cell.y < out.fovs.back().h) {
            kept.push_back(cell);
        }
    }
    out.cells = std::move(kept);

    const int th = pad_up(out.fovs.back().h, divisor);
    const int tw = pad_up(out.fovs.back().w, divisor);
    if (th != out.fovs.back().h || tw != out.fovs.back().w) {
        require(!multi_view, "augment: concentric samples must already satisfy divisibility");
        out.fovs[0] = pad_or_crop(out.fovs[0], th, tw);
    }
    return out;
}

namespace {

// Bit-stable exp(x) for x <= 0: 2^(x*log2(e)) with the fractional power from
// a fixed Horner polynomial, so rendering does not depend on the platform's
// libm rounding.
double det_exp(double x) {
    if (x < -700.0) return 0.0;
    const double log2e = 1.4426950408889634;
    const double t = x * log2e;
    const double fl = std::floor(t);
    const double frac = t - fl;  // [0, 1)
    // 2^frac via exp(frac * ln2), 11-term Taylor with fixed evaluation order.
    const double z = frac * 0.6931471805599453;
    double p = 1.0;
    for (int k = 10; k >= 1; --k) p = 1.0 + p * z / k;
    return std::ldexp(p, static_cast<int>(fl));
}

std::vector<std::array<double, 3>> default_palette(int num_classes) {
    std::vector<std::array<double, 3>> palette;
    for (int i = 0; i < num_classes; ++i) {
        const double* rgb = class_color(i);
        palette.push_back({rgb[0], rgb[1], rgb[2]});
    }
    return palette;
}

Image render_background(int side, int texture_scale, Rng& rng) {
    const int coarse = std::max(2, side / std::max(1, texture_scale) + 2);
    Image noise = Image::filled(coarse, coarse);
    for (auto& v : noise.pix) v = 0.40 + 0.20 * rng.uniform();
    return resize_bilinear(noise, side, side);
}

} // namespace

std::vector<Sample> generate_synthetic(const SynthSpec& spec, int n_images, int mfov_k) {
    require(n_images > 0, "generate_synthetic: n_images must be positive");
    require(mfov_k >= 1, "generate_synthetic: mfov_k must be >= 1");
    require(spec.canvas_size >= 16, "generate_synthetic: canvas_size must be >= 16");
    require(spec.num_classes >= 1, "generate_synthetic: need at least one class");
    require(spec.cells_min >= 0 && spec.cells_max >= spec.cells_min,
            "generate_synthetic: invalid cells range");
    require(spec.blob_radius_lo > 0 && spec.blob_radius_hi >= spec.blob_radius_lo,
            "generate_synthetic: invalid blob radius range");

    auto palette = spec.class_color_means;
    if (palette.empty()) palette = default_palette(spec.num_classes);
    require(static_cast<int>(palette.size()) == spec.num_classes,
            "generate_synthetic: one color mean per class required");
    for (size_t a = 0; a < palette.size(); ++a) {
        for (size_t b = a + 1; b < palette.size(); ++b) {
            double max_diff = 0.0;
            for (int ch = 0; ch < 3; ++ch) {
                max_diff = std::max(max_diff, std::abs(palette[a][ch] - palette[b][ch]));
            }
            require(max_diff >= 60.0 / 255.0,
                    "generate_synthetic: class color means closer than 60/255");
        }
    }

    const int inner = spec.canvas_size;
    const int canvas = inner * (1 << (mfov_k - 1));
    const int inner_off = (canvas - inner) / 2;
    const double min_sep = 2.0 * spec.blob_radius_hi;
    const double margin = 2.0;

    std::vector<Sample> samples;
    Rng root(spec.seed);
    for (int idx = 0; idx < n_images; ++idx) {
        Rng rng = root.fork(static_cast<unsigned long long>(idx) + 1);
        Image big = render_background(canvas, spec.background_texture_scale * (1 << (mfov_k - 1)),
                                      rng);

        const int image_class = spec.context_tint ? rng.uniform_int(0, spec.num_classes - 1) : -1;
        if (spec.context_tint) {
            // Tint the region outside the innermost view toward the class
            // color; the annotated view itself stays neutral.
            const auto& tint = palette[static_cast<size_t>(image_class)];
            for (int y = 0; y < canvas; ++y) {
                for (int x = 0; x < canvas; ++x) {
                    const bool inside_inner = y >= inner_off && y < inner_off + inner &&
                                              x >= inner_off && x < inner_off + inner;
                    if (!inside_inner) {
                        for (int ch = 0; ch < 3; ++ch) {
                            big.at(y, x, ch) = 0.5 * big.at(y, x, ch) + 0.5 * tint[ch];
                        }
                    }
                }
            }
        }

        const int n_cells = rng.uniform_int(spec.cells_min, spec.cells_max);
        std::vector<Cell> cells;  // canvas coordinates during placement
        const int max_attempts = 200 * std::max(1, n_cells);
        int attempts = 0;
        while (static_cast<int>(cells.size()) < n_cells) {
            if (++attempts > max_attempts) {
                fail_validation("generate_synthetic: cannot place " + std::to_string(n_cells) +
                                " cells at separation " + std::to_string(min_sep) +
                                " inside a " + std::to_string(inner) + "px view");
            }
            Cell cand;
            cand.x = inner_off + margin + rng.uniform() * (inner - 2.0 * margin);
            cand.y = inner_off + margin + rng.uniform() * (inner - 2.0 * margin);
            cand.class_id = spec.context_tint ? image_class
                                              : rng.uniform_int(0, spec.num_classes - 1);
            bool ok = true;
            for (const auto& other : cells) {
                const double dx = cand.x - other.x, dy = cand.y - other.y;
                if (dx * dx + dy * dy < min_sep * min_sep) {
                    ok = false;
                    break;
                }
            }
            if (ok) cells.push_back(cand);
        }

        const std::array<double, 3> neutral = {0.55, 0.55, 0.55};
        for (const auto& cell : cells) {
            const auto& color =
                spec.context_tint ? neutral : palette[static_cast<size_t>(cell.class_id)];
            const double radius =
                spec.blob_radius_lo + rng.uniform() * (spec.blob_radius_hi - spec.blob_radius_lo);
            const double sigma = radius / 2.0;
            const int reach = static_cast<int>(std::ceil(3.0 * sigma));
            const int y0 = std::max(0, static_cast<int>(std::floor(cell.y)) - reach);
            const int y1 = std::min(canvas - 1, static_cast<int>(std::ceil(cell.y)) + reach);
            const int x0 = std::max(0, static_cast<int>(std::floor(cell.x)) - reach);
            const int x1 = std::min(canvas - 1, static_cast<int>(std::ceil(cell.x)) + reach);
            for (int y = y0; y <= y1; ++y) {
                for (int x = x0; x <= x1; ++x) {
                    const double dx = x - cell.x, dy = y - cell.y;
                    const double wgt = det_exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
                    for (int ch = 0; ch < 3; ++ch) {
                        big.at(y, x, ch) = (1.0 - wgt) * big.at(y, x, ch) + wgt * color[ch];
                    }
                }
            }
        }

        Sample sample;
        char name[32];
        std::snprintf(name, sizeof(name), "sample_%04d", idx + 1);
        sample.name = name;
        for (int k = 1; k <= mfov_k; ++k) {
            // View k covers the centered square of side inner * 2^(K-k).
            const int view_side = inner * (1 << (mfov_k - k));
            const int off = (canvas - view_side) / 2;
            Image view = Image::filled(view_side, view_side);
            for (int y = 0; y < view_side; ++y) {
                for (int x = 0; x < view_side; ++x) {
                    for (int ch = 0; ch < 3; ++ch) view.at(y, x, ch) = big.at(off + y, off + x, ch);
                }
            }
            sample.fovs.push_back(box_downsample(view, 1 << (mfov_k - k)));
        }
        for (const auto& cell : cells) {
            sample.cells.push_back({cell.x - inner_off, cell.y - inner_off, cell.class_id});
        }
        samples.push_back(std::move(sample));
    }
    return samples;
}

} // namespace pointdet::data
