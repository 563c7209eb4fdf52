#pragma once

#include "pointdet/image.hpp"
#include "pointdet/rng.hpp"

#include <array>
#include <string>
#include <vector>

// Dataset contracts. Flat layout: root/images/*.png + root/annotations/*.json
// with matching basenames. Concentric layout: root/sample_NNNN/fov_1.png ..
// fov_K.png + fov_K.json; fov_1 shows the widest field, fov_K the annotated
// innermost one, all at equal resolution. Annotation JSON per image:
//   {"width": int, "height": int, "cells": [{"x": f, "y": f, "class": i}]}

namespace pointdet::data {

struct Cell {
    double x = 0.0;
    double y = 0.0;
    int class_id = 0;
};

struct AnnotatedImage {
    std::string name;        // basename without extension
    std::string image_path;  // empty for in-memory samples
    int width = 0;
    int height = 0;
    std::vector<Cell> cells;
    std::string magnification_tag;
};

// A training sample: K concentric views (equal resolution, magnification
// doubling toward the back) and cells in the innermost view's pixel frame.
struct Sample {
    std::string name;
    std::vector<Image> fovs;
    std::vector<Cell> cells;

    int width() const { return fovs.back().w; }
    int height() const { return fovs.back().h; }
    const Image& annotated_view() const { return fovs.back(); }
};

std::vector<Cell> parse_annotation_json(const std::string& text, int& width, int& height,
                                        int num_classes_hint, const std::string& origin);
void save_annotation(const AnnotatedImage& ann, const std::string& path);
AnnotatedImage load_annotation(const std::string& path, int num_classes_hint = -1);

// Flat-layout scan; ordering is stable by filename. Validates coordinate
// bounds and class range; errors name the offending file and record.
std::vector<AnnotatedImage> load_dataset(const std::string& root);

// Loads either layout into memory: flat roots become K=1 samples.
std::vector<Sample> load_samples(const std::string& root);
void save_samples(const std::vector<Sample>& samples, const std::string& root);

struct AugmentConfig {
    bool enabled = true;
    double scale_prob = 0.5;
    double scale_lo = 0.8;
    double scale_hi = 1.2;
    double shift_prob = 0.5;
    double shift_max_fraction = 0.1;
    double flip_prob = 0.5;
};

// Random scale/shift/flip with cells transformed identically; cells leaving
// the frame are dropped and the result is zero-padded up to a multiple of
// `divisor`. Multi-view samples only flip: scaling or shifting a single view
// would break the concentric geometry.
Sample augment(const Sample& sample, const AugmentConfig& config, int divisor, Rng& rng);

struct SynthSpec {
    int canvas_size = 64;  // side of the annotated innermost view
    int num_classes = 3;
    int cells_min = 4;
    int cells_max = 7;
    double blob_radius_lo = 3.0;
    double blob_radius_hi = 5.0;
    std::vector<std::array<double, 3>> class_color_means;  // defaults from the palette
    int background_texture_scale = 16;                     // coarse-noise cell size, px
    // When set, blobs share one neutral color and the per-image class is
    // encoded only as a background tint outside the innermost view - the
    // wide-context classification task.
    bool context_tint = false;
    unsigned long long seed = 1;
};

// Renders n deterministic samples with K concentric views each. Blob centers
// keep a minimum separation of 2 * blob_radius_hi; impossible packings error.
std::vector<Sample> generate_synthetic(const SynthSpec& spec, int n_images, int mfov_k);

} // namespace pointdet::data
