#pragma once

#include <cstdint>
#include <vector>

#include "ssnet/metrics.hpp"
#include "ssnet/rng.hpp"
#include "ssnet/tensor.hpp"

namespace ssnet {

struct MoonSet {
    Tensor points; // [n,2]
    std::vector<int> labels;
    double gamma = 0.0;
    std::uint64_t seed = 0;
};

/// Class 0 on the upper unit half circle (cos t, sin t), class 1 on the
/// interlocking lower arc (1 - cos t, 0.5 - sin t), t evenly spaced on [0, pi];
/// isotropic Gaussian noise with standard deviation gamma. Points alternate
/// classes, so class 0 gets ceil(n/2).
MoonSet two_moons(std::size_t n, double gamma, std::uint64_t seed);

/// Distance from a point to the noise-free arc of its class.
double distance_to_arc(float x, float y, int label);

struct SegSample {
    Tensor image;   // [1,H,W], values in [0,1]
    LabelMask mask; // [H,W], ids < C
};

struct BlobOptions {
    std::size_t height = 64;
    std::size_t width = 64;
    std::size_t classes = 2;
    double blur_sigma = 1.5;
    double contrast = 0.4;
    /// Noise standard deviation is noise_scale * (1 - contrast).
    double noise_scale = 0.25;
    /// Per-sample random shift of all intensities, uniform in +-jitter * (1 - contrast).
    double intensity_jitter = 0.0;
    double min_foreground = 0.05;
    double max_foreground = 0.60;
};

/// Class intensity before contrast: c / (C - 1).
double class_intensity(std::size_t cls, std::size_t classes);

/// C-1 perturbed ellipses painted over background 0, image = 0.5 + contrast *
/// (intensity - 0.5), Gaussian-blurred, plus noise; clamped to [0,1]. Each
/// sample's foreground fraction lies in [min_foreground, max_foreground].
std::vector<SegSample> blob_dataset(std::size_t count, const BlobOptions& opts, std::uint64_t seed);

SegSample make_blob_sample(const BlobOptions& opts, CounterRng rng);

struct SemiSplit {
    std::vector<std::size_t> labeled;
    std::vector<std::size_t> unlabeled;
};

/// Uniform labeled subset of size round(fraction * total); both lists sorted.
SemiSplit split_semi(std::size_t total, double fraction, std::uint64_t seed);

/// Element of the dihedral group of the square: rotate by quarter_turns * 90
/// degrees counter-clockwise after an optional horizontal flip.
struct Dihedral {
    int quarter_turns = 0;
    bool flip = false;

    static Dihedral from_index(int index) { return {index % 4, index >= 4}; }
    friend bool operator==(const Dihedral&, const Dihedral&) = default;
};

SegSample apply_dihedral(const SegSample& sample, Dihedral element);
LabelMask apply_dihedral(const LabelMask& mask, Dihedral element);

/// Applies a uniformly chosen dihedral element.
SegSample augment(const SegSample& sample, std::uint64_t seed);

} // namespace ssnet
