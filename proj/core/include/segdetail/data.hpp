#pragma once

// Seeded synthetic (image, fine mask, coarse mask) triplets emulating a
// coarse-annotation workflow: every labeled coarse pixel is high precision,
// boundary bands and whole regions go unlabeled, and an optional bleed band
// injects the small labeling error rate seen in real coarse masks.

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "segdetail/mask.hpp"
#include "segdetail/tensor.hpp"

namespace segdetail {

enum class ShapeKind { Rectangle, Ellipse, Polygon };

struct SceneSpec {
    int num_classes = 5;
    int height = 48, width = 48;
    int min_shapes = 4, max_shapes = 8;
    std::vector<ShapeKind> kinds = {ShapeKind::Rectangle, ShapeKind::Ellipse,
                                    ShapeKind::Polygon};
    /// Per-class mean color; empty selects the default palette (which keeps
    /// some class pairs close in color so appearance alone is ambiguous).
    std::vector<std::array<float, 3>> class_colors;
    float color_jitter = 0.08f;
    float noise_sigma = 0.06f;
    std::uint32_t seed = 1;

    void validate() const;
};

struct CoarsenSpec {
    int erosion_radius = 2;
    float drop_probability = 0.15f;
    float bleed_probability = 0.0f;
    std::uint32_t seed = 1;

    void validate() const;
};

/// One dataset element: image (1,3,H,W) in [0,1], fine mask, coarse mask.
struct SampleTriplet {
    Tensor4<float> image;
    LabelMask fine;
    LabelMask coarse;
};

struct Dataset {
    int num_classes = 5;
    SceneSpec scene;
    CoarsenSpec coarsen_spec;
    std::uint32_t seed = 1;
    std::vector<SampleTriplet> items;
};

/// Default palette for C classes (class 0 is the background).
std::vector<std::array<float, 3>> default_palette(int num_classes);

/// Paints a seeded scene: background class 0, shapes in z-order, per-class
/// color plus jitter and Gaussian noise clipped to [0,1]. The fine mask has
/// no ignore pixels.
std::pair<Tensor4<float>, LabelMask> generate_scene(const SceneSpec& spec);

/// Derives a coarse mask: every connected single-class region is eroded by
/// the radius (the band becomes ignore), whole regions are dropped with the
/// configured probability, and an optional one-pixel bleed band mislabels
/// pixels just outside a region.
LabelMask coarsen(const LabelMask& fine, const CoarsenSpec& spec);

struct CoarseStats {
    double coverage = 0.0;   // labeled fraction of coarse pixels
    double precision = 0.0;  // labeled coarse pixels equal to fine
};
CoarseStats coarse_stats(const LabelMask& fine, const LabelMask& coarse);
CoarseStats coarse_stats(const Dataset& ds);

/// One sampled geometric transform, applied jointly to image and masks.
struct GeomParams {
    float scale = 1.0f;
    float rot_deg = 0.0f;
    bool flip = false;
    int crop_x = 0, crop_y = 0;  // offset in the scaled canvas
};

GeomParams sample_geom(int in_h, int in_w, int crop, std::uint32_t seed);

/// Applies the transform: image bilinear (out-of-canvas reads 0), masks
/// nearest-neighbor (out-of-canvas reads ignore). Output is crop x crop.
SampleTriplet apply_geom(const SampleTriplet& t, int crop, const GeomParams& g);

void normalize_image(Tensor4<float>& image, const std::array<float, 3>& mean,
                     const std::array<float, 3>& stddev);

/// sample_geom + apply_geom + normalize.
SampleTriplet augment(const SampleTriplet& t, int crop, std::uint32_t seed,
                      const std::array<float, 3>& mean,
                      const std::array<float, 3>& stddev);

struct NormStats {
    std::array<float, 3> mean{0.f, 0.f, 0.f};
    std::array<float, 3> stddev{1.f, 1.f, 1.f};
};
NormStats compute_norm_stats(const Dataset& ds);

Dataset generate_dataset(const SceneSpec& scene, const CoarsenSpec& coarsen,
                         int count, std::uint32_t seed);

/// Directory layout: manifest.json + {id}_img.ppm, {id}_fine.pgm,
/// {id}_coarse.pgm (binary P6/P5, maxval 255, 255 = ignore).
void write_dataset(const std::string& dir, const Dataset& ds);
Dataset read_dataset(const std::string& dir);

/// Stable per-item seed derivation (splitmix64 mix of seed and index).
std::uint32_t derive_seed(std::uint32_t seed, std::uint64_t index);

}  // namespace segdetail
