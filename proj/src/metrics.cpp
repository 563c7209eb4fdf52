#include "pointdet/metrics.hpp"

#include "pointdet/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

using json = nlohmann::ordered_json;

namespace pointdet::metrics {

namespace {

constexpr const char* kApDefinition =
    "all-point interpolation: per-class pooled confidence sweep, greedy "
    "nearest-unmatched matching strictly inside the radius, monotone "
    "precision envelope integrated over recall";

double safe_div(double a, double b) { return b == 0.0 ? 0.0 : a / b; }

double f1_of(double precision, double recall) {
    return precision + recall == 0.0 ? 0.0 : 2.0 * precision * recall / (precision + recall);
}

// Indices of class detections ordered by descending confidence, ties by index.
std::vector<int> confidence_order(const std::vector<Detection>& detections, int class_id) {
    std::vector<int> order;
    for (int i = 0; i < static_cast<int>(detections.size()); ++i) {
        if (detections[static_cast<size_t>(i)].class_id == class_id) order.push_back(i);
    }
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        return detections[static_cast<size_t>(a)].conf > detections[static_cast<size_t>(b)].conf;
    });
    return order;
}

// Nearest unmatched gt of the class strictly inside the radius, or -1.
int nearest_free_gt(const Detection& det, const std::vector<data::Cell>& gts,
                    const std::vector<char>& taken, double radius, int class_id) {
    int best = -1;
    double best_d = radius;
    for (int j = 0; j < static_cast<int>(gts.size()); ++j) {
        if (taken[static_cast<size_t>(j)] || gts[static_cast<size_t>(j)].class_id != class_id) continue;
        const double dx = det.x - gts[static_cast<size_t>(j)].x;
        const double dy = det.y - gts[static_cast<size_t>(j)].y;
        const double d = std::sqrt(dx * dx + dy * dy);
        if (d < best_d) {
            best_d = d;
            best = j;
        }
    }
    return best;
}

} // namespace

MatchResult match_for_eval(const std::vector<Detection>& detections,
                           const std::vector<data::Cell>& gts, double radius, int class_id) {
    require(radius > 0.0, "match_for_eval: radius must be positive");
    MatchResult result;
    std::vector<char> taken(gts.size(), 0);
    for (int idx : confidence_order(detections, class_id)) {
        const int j = nearest_free_gt(detections[static_cast<size_t>(idx)], gts, taken, radius,
                                      class_id);
        if (j >= 0) {
            taken[static_cast<size_t>(j)] = 1;
            result.pairs.emplace_back(idx, j);
            ++result.tp;
        } else {
            ++result.fp;
        }
    }
    int class_gts = 0;
    for (const auto& gt : gts) {
        if (gt.class_id == class_id) ++class_gts;
    }
    result.fn = class_gts - result.tp;
    return result;
}

std::optional<double> average_precision(const std::vector<std::vector<Detection>>& detections,
                                        const std::vector<std::vector<data::Cell>>& gts,
                                        double radius, int class_id) {
    require(detections.size() == gts.size(), "average_precision: per-image lists must align");
    long total_gt = 0;
    for (const auto& image_gts : gts) {
        for (const auto& gt : image_gts) {
            if (gt.class_id == class_id) ++total_gt;
        }
    }
    if (total_gt == 0) return std::nullopt;

    // Pooled sweep ordered by confidence; matching stays within each image.
    struct Item {
        int image;
        int det;
        double conf;
    };
    std::vector<Item> items;
    for (int img = 0; img < static_cast<int>(detections.size()); ++img) {
        for (int d = 0; d < static_cast<int>(detections[static_cast<size_t>(img)].size()); ++d) {
            const auto& det = detections[static_cast<size_t>(img)][static_cast<size_t>(d)];
            if (det.class_id == class_id) items.push_back({img, d, det.conf});
        }
    }
    std::stable_sort(items.begin(), items.end(),
                     [](const Item& a, const Item& b) { return a.conf > b.conf; });

    std::vector<std::vector<char>> taken(gts.size());
    for (size_t i = 0; i < gts.size(); ++i) taken[i].assign(gts[i].size(), 0);

    std::vector<double> precisions, recalls;
    int tp = 0;
    for (size_t rank = 0; rank < items.size(); ++rank) {
        const auto& item = items[rank];
        const auto& det =
            detections[static_cast<size_t>(item.image)][static_cast<size_t>(item.det)];
        const int j = nearest_free_gt(det, gts[static_cast<size_t>(item.image)],
                                      taken[static_cast<size_t>(item.image)], radius, class_id);
        if (j >= 0) {
            taken[static_cast<size_t>(item.image)][static_cast<size_t>(j)] = 1;
            ++tp;
        }
        precisions.push_back(static_cast<double>(tp) / static_cast<double>(rank + 1));
        recalls.push_back(static_cast<double>(tp) / static_cast<double>(total_gt));
    }

    // Monotone envelope from the right, integrated over recall increments.
    double ap = 0.0;
    double envelope = 0.0;
    std::vector<double> env(precisions.size());
    for (int i = static_cast<int>(precisions.size()) - 1; i >= 0; --i) {
        envelope = std::max(envelope, precisions[static_cast<size_t>(i)]);
        env[static_cast<size_t>(i)] = envelope;
    }
    double prev_recall = 0.0;
    for (size_t i = 0; i < recalls.size(); ++i) {
        ap += (recalls[i] - prev_recall) * env[i];
        prev_recall = recalls[i];
    }
    return ap;
}

EvalReport evaluate_dataset(const std::map<std::string, std::vector<Detection>>& predictions,
                            const std::map<std::string, std::vector<data::Cell>>& annotations,
                            const EvalConfig& config, double images_per_second) {
    for (const auto& [key, cells] : annotations) {
        (void)cells;
        if (predictions.find(key) == predictions.end()) {
            fail_validation("evaluate: missing predictions for image: " + key);
        }
    }
    for (const auto& [key, dets] : predictions) {
        (void)dets;
        if (annotations.find(key) == annotations.end()) {
            fail_validation("evaluate: predictions for unknown image: " + key);
        }
    }

    // Deterministic image order for the pooled sweeps.
    std::vector<std::string> keys;
    for (const auto& [key, cells] : annotations) {
        (void)cells;
        keys.push_back(key);
    }
    std::vector<std::vector<Detection>> dets_all, dets_thresholded;
    std::vector<std::vector<data::Cell>> gts_all;
    for (const auto& key : keys) {
        dets_all.push_back(predictions.at(key));
        gts_all.push_back(annotations.at(key));
        std::vector<Detection> kept;
        for (const auto& det : predictions.at(key)) {
            if (det.conf >= config.confidence_threshold) kept.push_back(det);
        }
        dets_thresholded.push_back(std::move(kept));
    }

    EvalReport report;
    report.ap_definition = kApDefinition;
    report.match_radius = config.match_radius;
    report.confidence_threshold = config.confidence_threshold;
    report.images_per_second = images_per_second;

    double f1_sum = 0.0, ap_sum = 0.0;
    int scored_classes = 0;
    for (int c = 0; c < config.num_classes; ++c) {
        ClassReport cls;
        cls.class_id = c;
        for (size_t img = 0; img < keys.size(); ++img) {
            const MatchResult match =
                match_for_eval(dets_thresholded[img], gts_all[img], config.match_radius, c);
            cls.tp += match.tp;
            cls.fp += match.fp;
            cls.fn += match.fn;
        }
        cls.num_gt = cls.tp + cls.fn;
        cls.precision = safe_div(cls.tp, cls.tp + cls.fp);
        cls.recall = safe_div(cls.tp, cls.tp + cls.fn);
        cls.f1 = f1_of(cls.precision, cls.recall);
        const auto ap = average_precision(dets_all, gts_all, config.match_radius, c);
        cls.ap_defined = ap.has_value();
        cls.ap = ap.value_or(0.0);
        if (cls.num_gt > 0) {
            f1_sum += cls.f1;
            ap_sum += cls.ap;
            ++scored_classes;
        }
        report.per_class.push_back(cls);
    }
    report.macro_f1 = scored_classes > 0 ? f1_sum / scored_classes : 0.0;
    report.macro_ap = scored_classes > 0 ? ap_sum / scored_classes : 0.0;
    return report;
}

std::string EvalReport::to_json() const {
    json doc;
    doc["ap_definition"] = ap_definition;
    doc["match_radius"] = match_radius;
    doc["confidence_threshold"] = confidence_threshold;
    doc["per_class"] = json::array();
    for (const auto& cls : per_class) {
        json entry;
        entry["class"] = cls.class_id;
        entry["num_gt"] = cls.num_gt;
        entry["tp"] = cls.tp;
        entry["fp"] = cls.fp;
        entry["fn"] = cls.fn;
        entry["precision"] = cls.precision;
        entry["recall"] = cls.recall;
        entry["f1"] = cls.f1;
        if (cls.ap_defined) {
            entry["ap"] = cls.ap;
        } else {
            entry["ap"] = nullptr;
        }
        doc["per_class"].push_back(entry);
    }
    doc["macro_f1"] = macro_f1;
    doc["macro_ap"] = macro_ap;
    doc["images_per_second"] = images_per_second;
    return doc.dump(2) + "\n";
}

std::string EvalReport::to_table() const {
    std::ostringstream out;
    char line[160];
    std::snprintf(line, sizeof(line), "%-6s %8s %6s %6s %6s %10s %8s %8s %8s\n", "class",
                  "num_gt", "tp", "fp", "fn", "precision", "recall", "f1", "ap");
    out << line;
    for (const auto& cls : per_class) {
        char ap_text[16];
        if (cls.ap_defined) {
            std::snprintf(ap_text, sizeof(ap_text), "%8.4f", cls.ap);
        } else {
            std::snprintf(ap_text, sizeof(ap_text), "%8s", "n/a");
        }
        std::snprintf(line, sizeof(line), "%-6d %8ld %6d %6d %6d %10.4f %8.4f %8.4f %s\n",
                      cls.class_id, cls.num_gt, cls.tp, cls.fp, cls.fn, cls.precision,
                      cls.recall, cls.f1, ap_text);
        out << line;
    }
    std::snprintf(line, sizeof(line),
                  "macro_f1 %.4f  macro_ap %.4f  radius %.2fpx  threshold %.2f", macro_f1,
                  macro_ap, match_radius, confidence_threshold);
    out << line;
    if (images_per_second > 0.0) {
        std::snprintf(line, sizeof(line), "  images/s %.2f", images_per_second);
        out << line;
    }
    out << "\n";
    return out.str();
}

std::vector<Detection> load_predictions(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open predictions: " + path);
    json doc;
    try {
        in >> doc;
    } catch (const json::parse_error& e) {
        fail_validation(path + ": malformed JSON (" + e.what() + ")");
    }
    if (!doc.is_object() || !doc.contains("detections")) {
        fail_validation(path + ": predictions file must contain a detections array");
    }
    std::vector<Detection> out;
    int record = 0;
    for (const auto& entry : doc["detections"]) {
        if (!entry.contains("x") || !entry.contains("y") || !entry.contains("class") ||
            !entry.contains("conf")) {
            fail_validation(path + ": detection record " + std::to_string(record) +
                            " must contain x, y, class and conf");
        }
        Detection det;
        det.x = entry["x"].get<double>();
        det.y = entry["y"].get<double>();
        det.class_id = entry["class"].get<int>();
        det.conf = entry["conf"].get<double>();
        out.push_back(det);
        ++record;
    }
    return out;
}

void save_predictions(const std::vector<Detection>& detections, const std::string& path) {
    json doc;
    doc["detections"] = json::array();
    for (const auto& det : detections) {
        doc["detections"].push_back(
            {{"x", det.x}, {"y", det.y}, {"class", det.class_id}, {"conf", det.conf}});
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write predictions: " + path);
    out << doc.dump(2) << "\n";
}

} // namespace pointdet::metrics
