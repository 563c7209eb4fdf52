#pragma once

#include "pointdet/data.hpp"

#include <map>
#include <optional>
#include <string>
#include <vector>

// Distance-threshold detection scoring. A detection counts as a true positive
// when it matches an unmatched ground truth strictly closer than the radius;
// matching is greedy in descending confidence. AP pools detections per class
// across the whole set and integrates the monotone precision envelope over
// all recall points.

namespace pointdet::metrics {

struct Detection {
    double x = 0.0;
    double y = 0.0;
    int class_id = 0;
    double conf = 0.0;
};

struct EvalConfig {
    double match_radius = 6.0;
    int num_classes = 1;
    double confidence_threshold = 0.5;
};

struct MatchResult {
    int tp = 0;
    int fp = 0;
    int fn = 0;
    std::vector<std::pair<int, int>> pairs;  // (detection index, gt index)
};

struct ClassReport {
    int class_id = 0;
    long num_gt = 0;
    int tp = 0;
    int fp = 0;
    int fn = 0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double ap = 0.0;
    bool ap_defined = false;
};

struct EvalReport {
    std::string ap_definition;
    double match_radius = 0.0;
    double confidence_threshold = 0.0;
    std::vector<ClassReport> per_class;
    double macro_f1 = 0.0;
    double macro_ap = 0.0;
    double images_per_second = 0.0;

    std::string to_json() const;
    std::string to_table() const;
};

// Greedy one-to-one matching for one image and one class; detections and gts
// of other classes are ignored. Ties in confidence break by index; ties in
// distance break toward the lower gt index.
MatchResult match_for_eval(const std::vector<Detection>& detections,
                           const std::vector<data::Cell>& gts, double radius, int class_id);

// Pooled confidence-sweep AP for one class; nullopt when the class has no
// ground truth anywhere.
std::optional<double> average_precision(const std::vector<std::vector<Detection>>& detections,
                                        const std::vector<std::vector<data::Cell>>& gts,
                                        double radius, int class_id);

// Keys of both maps must coincide; macro scores average classes with >= 1 gt.
EvalReport evaluate_dataset(const std::map<std::string, std::vector<Detection>>& predictions,
                            const std::map<std::string, std::vector<data::Cell>>& annotations,
                            const EvalConfig& config, double images_per_second = 0.0);

std::vector<Detection> load_predictions(const std::string& path);
void save_predictions(const std::vector<Detection>& detections, const std::string& path);

} // namespace pointdet::metrics
