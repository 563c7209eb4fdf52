#pragma once

#include "pointdet/geometry.hpp"
#include "pointdet/image.hpp"
#include "pointdet/ops.hpp"
#include "pointdet/rng.hpp"

#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

// The trainable detector: a size-parameterized convolutional backbone with a
// top-down pyramid neck, point-proposal decoding via multi-scale bilinear
// feature reads, a deformation head that moves proposals before the final
// decode, concentric multi-view feature aggregation, and an iterative
// multi-stage refinement mode for comparison experiments.

namespace pointdet::model {

struct BackboneConfig {
    // One entry per downsampling stage; stage i ends at stride 2^(i+2), so the
    // list must reach the coarsest configured level (size == max_level - 1).
    std::vector<int> stage_channels = {16, 32, 64, 128};
    int pyramid_channels = 64;               // C_feat
    std::vector<int> levels = {2, 3, 4, 5};  // consecutive, strides 2^level
};

struct HeadConfig {
    int hidden_dim = 64;
    double dropout_rate = 0.1;
    int num_classes = 3;  // background is the implicit extra class
};

struct ModelConfig {
    BackboneConfig backbone;
    HeadConfig head;
    double proposal_interval = 8.0;
    int mfov_k = 1;
    std::string mode = "dpa";  // "dpa" or "iterative"
    int refine_stages = 2;     // iterative mode stage count
    bool mfov_bilinear_upsample = false;  // view-fusion upsampling fallback

    void validate() const;
    // Inputs must be divisible by this on both axes: 2^max_level alone, or
    // 2^(max_level + K) when K > 1 so every level crops cleanly.
    int required_divisor() const;
    int max_level() const { return backbone.levels.back(); }
};

struct ParamStore {
    std::vector<std::pair<std::string, ag::Tensor>> items;  // creation order
    std::unordered_map<std::string, size_t> index;

    ag::Tensor create(const std::string& name, std::vector<int> shape);
    const ag::Tensor& get(const std::string& name) const;
    bool has(const std::string& name) const { return index.count(name) > 0; }
    size_t total_scalars() const;
    void zero_grads();
};

struct ModelOutput {
    geometry::ProposalSet proposals;  // initial grid + deformed positions
    std::vector<geometry::Point> final_points;
    ag::Tensor final_points_t;  // {M, 2}
    ag::Tensor logits;          // {M, C+1}
    // What the label-assignment stage sees: identical to the final tensors in
    // dpa mode; all refinement stages concatenated in iterative mode.
    ag::Tensor pooled_points;
    ag::Tensor pooled_logits;
    int pooled_stages = 1;
};

class Detector {
public:
    Detector(const ModelConfig& config, unsigned long long seed);

    const ModelConfig& config() const { return config_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    // fovs.size() must equal mfov_k; view 1 is the widest field, the last
    // view is the annotated one whose frame all coordinates use.
    ModelOutput forward(const std::vector<Image>& fovs, bool training, Rng& rng);

    // Exposed stages (also used by tests): one pyramid per configured level.
    std::vector<ag::Tensor> build_pyramid(const Image& image, int fov_index, bool training,
                                          Rng& rng);
    std::vector<ag::Tensor> mfov_aggregate(const std::vector<std::vector<ag::Tensor>>& pyramids);
    ag::Tensor extract_multiscale_features(const std::vector<ag::Tensor>& pyramid,
                                           const ag::Tensor& points, bool training, Rng& rng);

private:
    ag::Tensor image_tensor(const Image& image) const;
    ag::Tensor mlp(const ag::Tensor& x, const std::string& prefix, bool training, Rng& rng);
    void init_params(unsigned long long seed);

    ModelConfig config_;
    ParamStore params_;
};

void save_checkpoint(const Detector& detector, const std::string& path);
std::unique_ptr<Detector> load_checkpoint(const std::string& path);

// Config <-> JSON text (one nested object with model/backbone/head keys);
// unknown keys are rejected. Shared by checkpoints and the CLI config file.
std::string model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const std::string& text);

} // namespace pointdet::model
