#include "pointdet/config.hpp"

#include "pointdet/error.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <set>
#include <sstream>

namespace pointdet::model {
// Defined with the model's JSON plumbing; applies the model/backbone/head
// sections of `doc` over `config` with strict key checking.
ModelConfig apply_model_config_json(const nlohmann::ordered_json& doc, ModelConfig config);
} // namespace pointdet::model

namespace pointdet::config {

using json = nlohmann::ordered_json;

namespace {

void check_keys(const json& obj, const std::set<std::string>& allowed,
                const std::string& where) {
    require(obj.is_object(), "config: " + where + " must be a JSON object");
    for (auto it = obj.begin(); it != obj.end(); ++it)
        require(allowed.count(it.key()) > 0,
                "config: unknown key \"" + it.key() + "\" in " + where);
}

template <typename T>
void read_field(const json& obj, const char* key, T& out, const std::string& where) {
    auto it = obj.find(key);
    if (it == obj.end()) return;
    try {
        out = it->get<T>();
    } catch (const json::exception&) {
        fail_validation("config: bad value type for " + where + "." + key);
    }
}

} // namespace

void AppConfig::sync() {
    train.eval_radius = eval.match_radius;
    train.confidence_threshold = eval.confidence_threshold;
    eval.num_classes = model.head.num_classes;
}

AppConfig parse_config_text(const std::string& text, AppConfig base, const std::string& origin) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        fail_validation("config: " + origin + " is not valid JSON: " + e.what());
    }
    check_keys(doc, {"model", "backbone", "head", "train", "eval", "synth"}, origin);

    json model_sections = json::object();
    for (const char* key : {"model", "backbone", "head"})
        if (doc.contains(key)) model_sections[key] = doc[key];
    base.model = model::apply_model_config_json(model_sections, base.model);

    if (doc.contains("train")) {
        const json& t = doc["train"];
        check_keys(t,
                   {"learning_rate", "weight_decay", "batch_size", "max_steps", "seed",
                    "strict_deterministic", "eval_every", "val_fraction", "augment"},
                   "train section");
        read_field(t, "learning_rate", base.train.learning_rate, "train");
        read_field(t, "weight_decay", base.train.weight_decay, "train");
        read_field(t, "batch_size", base.train.batch_size, "train");
        read_field(t, "max_steps", base.train.max_steps, "train");
        read_field(t, "seed", base.train.seed, "train");
        read_field(t, "strict_deterministic", base.train.strict_deterministic, "train");
        read_field(t, "eval_every", base.train.eval_every, "train");
        read_field(t, "val_fraction", base.train.val_fraction, "train");
        read_field(t, "augment", base.train.augment.enabled, "train");
    }
    if (doc.contains("eval")) {
        const json& e = doc["eval"];
        check_keys(e, {"radius", "confidence_threshold"}, "eval section");
        read_field(e, "radius", base.eval.match_radius, "eval");
        read_field(e, "confidence_threshold", base.eval.confidence_threshold, "eval");
    }
    if (doc.contains("synth")) {
        const json& s = doc["synth"];
        check_keys(s,
                   {"images", "mfov_k", "canvas_size", "num_classes", "cells_min", "cells_max",
                    "blob_radius_lo", "blob_radius_hi", "background_texture_scale",
                    "context_tint", "seed"},
                   "synth section");
        read_field(s, "images", base.synth_images, "synth");
        read_field(s, "mfov_k", base.synth_mfov_k, "synth");
        read_field(s, "canvas_size", base.synth.canvas_size, "synth");
        read_field(s, "num_classes", base.synth.num_classes, "synth");
        read_field(s, "cells_min", base.synth.cells_min, "synth");
        read_field(s, "cells_max", base.synth.cells_max, "synth");
        read_field(s, "blob_radius_lo", base.synth.blob_radius_lo, "synth");
        read_field(s, "blob_radius_hi", base.synth.blob_radius_hi, "synth");
        read_field(s, "background_texture_scale", base.synth.background_texture_scale, "synth");
        read_field(s, "context_tint", base.synth.context_tint, "synth");
        read_field(s, "seed", base.synth.seed, "synth");
    }
    base.sync();
    return base;
}

AppConfig parse_config_file(const std::string& path, AppConfig base) {
    std::ifstream is(path, std::ios::binary);
    require(is.good(), "config: cannot open file: " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse_config_text(ss.str(), std::move(base), path);
}

std::string dump_config(const AppConfig& config) {
    json doc = json::parse(model::model_config_to_json(config.model));
    json t;
    t["learning_rate"] = config.train.learning_rate;
    t["weight_decay"] = config.train.weight_decay;
    t["batch_size"] = config.train.batch_size;
    t["max_steps"] = config.train.max_steps;
    t["seed"] = config.train.seed;
    t["strict_deterministic"] = config.train.strict_deterministic;
    t["eval_every"] = config.train.eval_every;
    t["val_fraction"] = config.train.val_fraction;
    t["augment"] = config.train.augment.enabled;
    doc["train"] = t;
    json e;
    e["radius"] = config.eval.match_radius;
    e["confidence_threshold"] = config.eval.confidence_threshold;
    doc["eval"] = e;
    json s;
    s["images"] = config.synth_images;
    s["mfov_k"] = config.synth_mfov_k;
    s["canvas_size"] = config.synth.canvas_size;
    s["num_classes"] = config.synth.num_classes;
    s["cells_min"] = config.synth.cells_min;
    s["cells_max"] = config.synth.cells_max;
    s["blob_radius_lo"] = config.synth.blob_radius_lo;
    s["blob_radius_hi"] = config.synth.blob_radius_hi;
    s["background_texture_scale"] = config.synth.background_texture_scale;
    s["context_tint"] = config.synth.context_tint;
    s["seed"] = config.synth.seed;
    doc["synth"] = s;
    return doc.dump(2) + "\n";
}

} // namespace pointdet::config
