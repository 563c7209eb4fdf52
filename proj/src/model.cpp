#include "pointdet/model.hpp"

#include "pointdet/error.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

using json = nlohmann::ordered_json;

namespace pointdet::model {

void ModelConfig::validate() const {
    require(!backbone.levels.empty(), "config: at least one pyramid level required");
    require(backbone.levels.front() >= 2, "config: pyramid levels start at 2");
    for (size_t i = 1; i < backbone.levels.size(); ++i) {
        require(backbone.levels[i] == backbone.levels[i - 1] + 1,
                "config: pyramid levels must be consecutive integers");
    }
    require(static_cast<int>(backbone.stage_channels.size()) == max_level() - 1,
            "config: stage_channels must have max_level - 1 entries (stages at strides "
            "4, 8, ..., 2^max_level)");
    for (int ch : backbone.stage_channels) require(ch > 0, "config: stage channels positive");
    require(backbone.pyramid_channels > 0, "config: pyramid_channels must be positive");
    require(head.hidden_dim > 0, "config: hidden_dim must be positive");
    require(head.dropout_rate >= 0.0 && head.dropout_rate < 1.0,
            "config: dropout_rate must be in [0, 1)");
    require(head.num_classes >= 1, "config: need at least one cell class");
    require(proposal_interval > 0.0, "config: proposal_interval must be positive");
    require(mfov_k >= 1, "config: mfov_k must be >= 1");
    require(mode == "dpa" || mode == "iterative",
            "config: mode must be \"dpa\" or \"iterative\"");
    require(mode != "iterative" || refine_stages >= 1,
            "config: refine_stages must be >= 1 in iterative mode");
}

int ModelConfig::required_divisor() const {
    const int shift = mfov_k > 1 ? max_level() + mfov_k : max_level();
    return 1 << shift;
}

ag::Tensor ParamStore::create(const std::string& name, std::vector<int> shape) {
    require(index.find(name) == index.end(), "duplicate parameter name: " + name);
    ag::Tensor t = ag::make_tensor(std::move(shape), true);
    index[name] = items.size();
    items.emplace_back(name, t);
    return t;
}

const ag::Tensor& ParamStore::get(const std::string& name) const {
    auto it = index.find(name);
    require(it != index.end(), "unknown parameter name: " + name);
    return items[it->second].second;
}

size_t ParamStore::total_scalars() const {
    size_t n = 0;
    for (const auto& [name, t] : items) n += t->size();
    return n;
}

void ParamStore::zero_grads() {
    for (auto& [name, t] : items) t->clear_grad();
}

namespace {

void he_init(const ag::Tensor& t, int fan_in, Rng& rng) {
    const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
    for (auto& v : t->value) v = rng.normal(0.0, stddev);
}

std::string fov_prefix(int fov_index) { return "fov" + std::to_string(fov_index) + "."; }

} // namespace

Detector::Detector(const ModelConfig& config, unsigned long long seed) : config_(config) {
    config_.validate();
    init_params(seed);
}

void Detector::init_params(unsigned long long seed) {
    Rng rng(seed);
    const auto& bb = config_.backbone;
    const int c_feat = bb.pyramid_channels;
    const int n_stages = config_.max_level() - 1;

    auto conv_param = [&](const std::string& name, int kh, int kw, int cin, int cout,
                          bool zero = false) {
        ag::Tensor w = params_.create(name + ".w", {kh, kw, cin, cout});
        ag::Tensor b = params_.create(name + ".b", {cout});
        if (!zero) he_init(w, kh * kw * cin, rng);
        return std::pair{w, b};
    };
    auto linear_param = [&](const std::string& name, int in, int out, bool zero = false) {
        ag::Tensor w = params_.create(name + ".w", {in, out});
        ag::Tensor b = params_.create(name + ".b", {out});
        if (!zero) he_init(w, in, rng);
        return std::pair{w, b};
    };

    for (int f = 1; f <= config_.mfov_k; ++f) {
        const std::string fp = fov_prefix(f);
        int prev = 3;
        for (int s = 0; s < n_stages; ++s) {
            const int ch = bb.stage_channels[static_cast<size_t>(s)];
            const std::string sp = fp + "backbone.s" + std::to_string(s + 2);
            if (s == 0) {
                conv_param(sp + ".down1", 3, 3, prev, ch);
                conv_param(sp + ".down2", 3, 3, ch, ch);
            } else {
                conv_param(sp + ".down", 3, 3, prev, ch);
            }
            conv_param(sp + ".res1", 3, 3, ch, ch);
            conv_param(sp + ".res2", 3, 3, ch, ch);
            prev = ch;
        }
        for (int level : bb.levels) {
            const std::string lp = fp + "neck.l" + std::to_string(level);
            conv_param(lp + ".lateral", 1, 1, bb.stage_channels[static_cast<size_t>(level - 2)],
                       c_feat);
            conv_param(lp + ".smooth", 3, 3, c_feat, c_feat);
        }
    }

    if (config_.mfov_k > 1) {
        for (int level : bb.levels) {
            const std::string lp = "mfov.l" + std::to_string(level);
            if (!config_.mfov_bilinear_upsample) conv_param(lp + ".up", 2, 2, c_feat, c_feat);
            conv_param(lp + ".fuse", 3, 3, c_feat, c_feat);
        }
    }

    const int d_concat = static_cast<int>(bb.levels.size()) * c_feat;
    const int c_out = config_.head.num_classes + 1;
    if (config_.mode == "dpa") {
        linear_param("deform.fc1", c_feat, config_.head.hidden_dim);
        linear_param("deform.fc2", config_.head.hidden_dim, 2, /*zero=*/true);
        linear_param("reg.fc1", d_concat, config_.head.hidden_dim);
        linear_param("reg.fc2", config_.head.hidden_dim, 2, /*zero=*/true);
        linear_param("cls.fc1", d_concat, config_.head.hidden_dim);
        linear_param("cls.fc2", config_.head.hidden_dim, c_out);
    } else {
        for (int s = 1; s <= config_.refine_stages; ++s) {
            const std::string sp = "stage" + std::to_string(s) + ".";
            linear_param(sp + "reg.fc1", d_concat, config_.head.hidden_dim);
            linear_param(sp + "reg.fc2", config_.head.hidden_dim, 2, /*zero=*/true);
            linear_param(sp + "cls.fc1", d_concat, config_.head.hidden_dim);
            linear_param(sp + "cls.fc2", config_.head.hidden_dim, c_out);
        }
    }
}

ag::Tensor Detector::image_tensor(const Image& image) const {
    require(image.c == 3, "model input must be RGB");
    return ag::from_data({image.h, image.w, 3}, image.pix);
}

ag::Tensor Detector::mlp(const ag::Tensor& x, const std::string& prefix, bool training,
                         Rng& rng) {
    ag::Tensor h = ag::relu(ag::linear(x, params_.get(prefix + ".fc1.w"),
                                       params_.get(prefix + ".fc1.b")));
    h = ag::dropout(h, config_.head.dropout_rate, rng, training);
    return ag::linear(h, params_.get(prefix + ".fc2.w"), params_.get(prefix + ".fc2.b"));
}

std::vector<ag::Tensor> Detector::build_pyramid(const Image& image, int fov_index, bool training,
                                                Rng& rng) {
    (void)training;
    (void)rng;
    const auto& bb = config_.backbone;
    const std::string fp = fov_prefix(fov_index);
    const int n_stages = config_.max_level() - 1;
    require(image.h % (1 << config_.max_level()) == 0 &&
                image.w % (1 << config_.max_level()) == 0,
            "build_pyramid: input size must be divisible by " +
                std::to_string(1 << config_.max_level()));

    ag::Tensor x = image_tensor(image);
    std::vector<ag::Tensor> stage_out(static_cast<size_t>(n_stages));
    for (int s = 0; s < n_stages; ++s) {
        const std::string sp = fp + "backbone.s" + std::to_string(s + 2);
        if (s == 0) {
            x = ag::relu(ag::conv2d(x, params_.get(sp + ".down1.w"), params_.get(sp + ".down1.b"),
                                    2, 1));
            x = ag::relu(ag::conv2d(x, params_.get(sp + ".down2.w"), params_.get(sp + ".down2.b"),
                                    2, 1));
        } else {
            x = ag::relu(
                ag::conv2d(x, params_.get(sp + ".down.w"), params_.get(sp + ".down.b"), 2, 1));
        }
        ag::Tensor r = ag::relu(
            ag::conv2d(x, params_.get(sp + ".res1.w"), params_.get(sp + ".res1.b"), 1, 1));
        r = ag::conv2d(r, params_.get(sp + ".res2.w"), params_.get(sp + ".res2.b"), 1, 1);
        x = ag::relu(ag::add(x, r));
        stage_out[static_cast<size_t>(s)] = x;
    }

    // Top-down: lateral 1x1, add the upsampled coarser merge, then smooth.
    std::vector<ag::Tensor> pyramid(bb.levels.size());
    ag::Tensor coarser;  // merged (pre-smooth) map of the level above
    for (int li = static_cast<int>(bb.levels.size()) - 1; li >= 0; --li) {
        const int level = bb.levels[static_cast<size_t>(li)];
        const std::string lp = fp + "neck.l" + std::to_string(level);
        ag::Tensor merged = ag::conv2d(stage_out[static_cast<size_t>(level - 2)],
                                       params_.get(lp + ".lateral.w"),
                                       params_.get(lp + ".lateral.b"), 1, 0);
        if (coarser) merged = ag::add(merged, ag::upsample_nearest(coarser, 2));
        coarser = merged;
        pyramid[static_cast<size_t>(li)] = ag::conv2d(merged, params_.get(lp + ".smooth.w"),
                                                      params_.get(lp + ".smooth.b"), 1, 1);
    }
    return pyramid;
}

std::vector<ag::Tensor> Detector::mfov_aggregate(
    const std::vector<std::vector<ag::Tensor>>& pyramids) {
    const int K = static_cast<int>(pyramids.size());
    require(K == config_.mfov_k, "mfov_aggregate: expected one pyramid per configured view");
    if (K == 1) return pyramids[0];
    const auto& levels = config_.backbone.levels;
    for (const auto& pyr : pyramids) {
        require(pyr.size() == levels.size(), "mfov_aggregate: pyramid level count mismatch");
        for (size_t li = 0; li < levels.size(); ++li) {
            require(pyr[li]->shape == pyramids[0][li]->shape,
                    "mfov_aggregate: all view pyramids must share shapes");
        }
    }

    std::vector<ag::Tensor> out(levels.size());
    for (size_t li = 0; li < levels.size(); ++li) {
        const int level = levels[li];
        const std::string lp = "mfov.l" + std::to_string(level);
        ag::Tensor acc = pyramids[static_cast<size_t>(K - 1)][li];
        for (int k = 1; k < K; ++k) {
            const geometry::CropLimits limits = geometry::mfov_crop_limits(K, k);
            const ag::Tensor& src = pyramids[static_cast<size_t>(k - 1)][li];
            const geometry::CropWindow wy = geometry::crop_window(src->dim(0), limits);
            const geometry::CropWindow wx = geometry::crop_window(src->dim(1), limits);
            ag::Tensor part = ag::slice_spatial(src, wy.offset, wx.offset, wy.size, wx.size);
            if (config_.mfov_bilinear_upsample) {
                part = ag::upsample_bilinear(part, limits.upsample_factor);
            } else {
                // One shared doubling layer per level, applied K-k times.
                for (int step = 0; step < K - k; ++step) {
                    part = ag::conv_transpose2d_k2s2(part, params_.get(lp + ".up.w"),
                                                     params_.get(lp + ".up.b"));
                }
            }
            acc = ag::add(acc, part);
        }
        out[li] =
            ag::conv2d(acc, params_.get(lp + ".fuse.w"), params_.get(lp + ".fuse.b"), 1, 1);
    }
    return out;
}

ag::Tensor Detector::extract_multiscale_features(const std::vector<ag::Tensor>& pyramid,
                                                 const ag::Tensor& points, bool training,
                                                 Rng& rng) {
    (void)training;
    (void)rng;
    const auto& levels = config_.backbone.levels;
    require(pyramid.size() == levels.size(), "extract_multiscale_features: level mismatch");
    std::vector<ag::Tensor> slices;
    for (size_t li = 0; li < levels.size(); ++li) {
        slices.push_back(
            ag::sample_level(pyramid[li], points, static_cast<double>(1 << levels[li])));
    }
    return ag::concat_cols(slices);
}

ModelOutput Detector::forward(const std::vector<Image>& fovs, bool training, Rng& rng) {
    require(static_cast<int>(fovs.size()) == config_.mfov_k,
            "forward: expected " + std::to_string(config_.mfov_k) + " view(s), got " +
                std::to_string(fovs.size()));
    const int h = fovs.back().h, w = fovs.back().w;
    for (const auto& view : fovs) {
        require(view.h == h && view.w == w, "forward: all views must share one resolution");
    }
    const int divisor = config_.required_divisor();
    if (h % divisor != 0 || w % divisor != 0) {
        fail_validation("forward: input size " + std::to_string(w) + "x" + std::to_string(h) +
                        " must be divisible by " + std::to_string(divisor));
    }

    geometry::ProposalSet grid =
        geometry::generate_grid_proposals(h, w, config_.proposal_interval);
    const int m = static_cast<int>(grid.initial.size());
    std::vector<double> coords(static_cast<size_t>(m) * 2);
    for (int i = 0; i < m; ++i) {
        coords[2 * static_cast<size_t>(i)] = grid.initial[static_cast<size_t>(i)].x;
        coords[2 * static_cast<size_t>(i) + 1] = grid.initial[static_cast<size_t>(i)].y;
    }
    ag::Tensor pts0 = ag::from_data({m, 2}, std::move(coords));

    std::vector<std::vector<ag::Tensor>> pyramids;
    for (int f = 1; f <= config_.mfov_k; ++f) {
        pyramids.push_back(build_pyramid(fovs[static_cast<size_t>(f - 1)], f, training, rng));
    }
    const std::vector<ag::Tensor> pyramid =
        config_.mfov_k > 1 ? mfov_aggregate(pyramids) : pyramids[0];

    ModelOutput out;
    out.proposals = grid;

    if (config_.mode == "dpa") {
        // Deformation offsets from the finest level only, then the full
        // multi-scale read at the deformed positions.
        ag::Tensor f_fine = ag::sample_level(
            pyramid[0], pts0, static_cast<double>(1 << config_.backbone.levels[0]));
        ag::Tensor offsets = mlp(f_fine, "deform", training, rng);
        ag::Tensor pts1 = ag::add(pts0, offsets);
        ag::Tensor feats = extract_multiscale_features(pyramid, pts1, training, rng);
        ag::Tensor reg = mlp(feats, "reg", training, rng);
        out.logits = mlp(feats, "cls", training, rng);
        out.final_points_t = ag::add(pts1, reg);
        out.proposals.deformed.resize(static_cast<size_t>(m));
        for (int i = 0; i < m; ++i) {
            out.proposals.deformed[static_cast<size_t>(i)] = {pts1->value[2 * static_cast<size_t>(i)],
                                                              pts1->value[2 * static_cast<size_t>(i) + 1]};
        }
        out.pooled_points = out.final_points_t;
        out.pooled_logits = out.logits;
        out.pooled_stages = 1;
    } else {
        ag::Tensor pts_cur = pts0;
        ag::Tensor pts_prev = pts0;
        std::vector<ag::Tensor> stage_points, stage_logits;
        ag::Tensor logits_last;
        for (int s = 1; s <= config_.refine_stages; ++s) {
            const std::string sp = "stage" + std::to_string(s) + ".";
            ag::Tensor feats = extract_multiscale_features(pyramid, pts_cur, training, rng);
            ag::Tensor offsets = mlp(feats, sp + "reg", training, rng);
            logits_last = mlp(feats, sp + "cls", training, rng);
            pts_prev = pts_cur;
            pts_cur = ag::add(pts_cur, offsets);
            stage_points.push_back(pts_cur);
            stage_logits.push_back(logits_last);
        }
        out.final_points_t = pts_cur;
        out.logits = logits_last;
        out.proposals.deformed.resize(static_cast<size_t>(m));
        for (int i = 0; i < m; ++i) {
            out.proposals.deformed[static_cast<size_t>(i)] = {pts_prev->value[2 * static_cast<size_t>(i)],
                                                              pts_prev->value[2 * static_cast<size_t>(i) + 1]};
        }
        out.pooled_points = ag::concat_rows(stage_points);
        out.pooled_logits = ag::concat_rows(stage_logits);
        out.pooled_stages = config_.refine_stages;
    }

    out.final_points.resize(static_cast<size_t>(m));
    for (int i = 0; i < m; ++i) {
        out.final_points[static_cast<size_t>(i)] = {out.final_points_t->value[2 * static_cast<size_t>(i)],
                                                    out.final_points_t->value[2 * static_cast<size_t>(i) + 1]};
    }
    return out;
}

// ---- config <-> JSON ----------------------------------------------------

namespace {

void check_keys(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
    for (const auto& [key, value] : obj.items()) {
        (void)value;
        if (allowed.find(key) == allowed.end()) {
            fail_validation("config: unknown key \"" + key + "\" in " + where);
        }
    }
}

} // namespace

std::string model_config_to_json(const ModelConfig& config) {
    json doc;
    doc["model"] = {{"proposal_interval", config.proposal_interval},
                    {"mfov_k", config.mfov_k},
                    {"mode", config.mode},
                    {"refine_stages", config.refine_stages},
                    {"mfov_bilinear_upsample", config.mfov_bilinear_upsample}};
    doc["backbone"] = {{"stage_channels", config.backbone.stage_channels},
                       {"pyramid_channels", config.backbone.pyramid_channels},
                       {"levels", config.backbone.levels}};
    doc["head"] = {{"hidden_dim", config.head.hidden_dim},
                   {"dropout_rate", config.head.dropout_rate},
                   {"num_classes", config.head.num_classes}};
    return doc.dump(2);
}

ModelConfig apply_model_config_json(const json& doc, ModelConfig config) {
    check_keys(doc, {"model", "backbone", "head"}, "model config");
    if (doc.contains("model")) {
        const auto& m = doc["model"];
        check_keys(m, {"proposal_interval", "mfov_k", "mode", "refine_stages",
                       "mfov_bilinear_upsample"},
                   "model section");
        if (m.contains("proposal_interval")) config.proposal_interval = m["proposal_interval"].get<double>();
        if (m.contains("mfov_k")) config.mfov_k = m["mfov_k"].get<int>();
        if (m.contains("mode")) config.mode = m["mode"].get<std::string>();
        if (m.contains("refine_stages")) config.refine_stages = m["refine_stages"].get<int>();
        if (m.contains("mfov_bilinear_upsample")) {
            config.mfov_bilinear_upsample = m["mfov_bilinear_upsample"].get<bool>();
        }
    }
    if (doc.contains("backbone")) {
        const auto& b = doc["backbone"];
        check_keys(b, {"stage_channels", "pyramid_channels", "levels"}, "backbone section");
        if (b.contains("stage_channels")) {
            config.backbone.stage_channels = b["stage_channels"].get<std::vector<int>>();
        }
        if (b.contains("pyramid_channels")) {
            config.backbone.pyramid_channels = b["pyramid_channels"].get<int>();
        }
        if (b.contains("levels")) config.backbone.levels = b["levels"].get<std::vector<int>>();
    }
    if (doc.contains("head")) {
        const auto& h = doc["head"];
        check_keys(h, {"hidden_dim", "dropout_rate", "num_classes"}, "head section");
        if (h.contains("hidden_dim")) config.head.hidden_dim = h["hidden_dim"].get<int>();
        if (h.contains("dropout_rate")) config.head.dropout_rate = h["dropout_rate"].get<double>();
        if (h.contains("num_classes")) config.head.num_classes = h["num_classes"].get<int>();
    }
    return config;
}

ModelConfig model_config_from_json(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        fail_validation(std::string("config: malformed JSON (") + e.what() + ")");
    }
    ModelConfig config = apply_model_config_json(doc, ModelConfig{});
    config.validate();
    return config;
}

// ---- checkpoint ----------------------------------------------------------

namespace {
constexpr char kMagic[8] = {'P', 'D', 'E', 'T', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;
} // namespace

void save_checkpoint(const Detector& detector, const std::string& path) {
    json header;
    header["version"] = kVersion;
    header["config"] = json::parse(model_config_to_json(detector.config()));
    header["arrays"] = json::array();
    for (const auto& [name, t] : detector.params().items) {
        header["arrays"].push_back({{"name", name}, {"shape", t->shape}});
    }
    const std::string header_text = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out.write(kMagic, sizeof(kMagic));
    const uint32_t version = kVersion;
    out.write(reinterpret_cast<const char*>(&version), sizeof(version));
    const uint64_t header_len = header_text.size();
    out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
    out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
    for (const auto& [name, t] : detector.params().items) {
        out.write(reinterpret_cast<const char*>(t->value.data()),
                  static_cast<std::streamsize>(t->value.size() * sizeof(double)));
    }
    if (!out) throw std::runtime_error("checkpoint write failed: " + path);
}

std::unique_ptr<Detector> load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        fail_validation("not a checkpoint file: " + path);
    }
    uint32_t version = 0;
    in.read(reinterpret_cast<char*>(&version), sizeof(version));
    if (version != kVersion) {
        fail_validation("unsupported checkpoint version " + std::to_string(version));
    }
    uint64_t header_len = 0;
    in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
    std::string header_text(header_len, '\0');
    in.read(header_text.data(), static_cast<std::streamsize>(header_len));
    if (!in) fail_validation("truncated checkpoint header: " + path);

    json header = json::parse(header_text);
    ModelConfig config = apply_model_config_json(header["config"], ModelConfig{});
    config.validate();
    auto detector = std::make_unique<Detector>(config, /*seed=*/0);

    require(header["arrays"].size() == detector->params().items.size(),
            "checkpoint parameter list does not match the configured model");
    for (size_t i = 0; i < detector->params().items.size(); ++i) {
        auto& [name, t] = detector->params().items[i];
        const auto& entry = header["arrays"][i];
        require(entry["name"].get<std::string>() == name,
                "checkpoint parameter order mismatch at " + name);
        require(entry["shape"].get<std::vector<int>>() == t->shape,
                "checkpoint shape mismatch for " + name);
        in.read(reinterpret_cast<char*>(t->value.data()),
                static_cast<std::streamsize>(t->value.size() * sizeof(double)));
    }
    if (!in) fail_validation("truncated checkpoint payload: " + path);
    return detector;
}

} // namespace pointdet::model
