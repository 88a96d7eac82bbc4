#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "ssnet/tensor.hpp"

namespace ssnet {

/// 2-D or 3-D class-id grid with per-axis physical spacing.
struct LabelMask {
    Shape dims;
    std::vector<std::uint8_t> labels;
    std::vector<double> spacing;

    LabelMask() = default;
    explicit LabelMask(Shape dims, std::uint8_t fill = 0);
    LabelMask(Shape dims, std::vector<std::uint8_t> labels, std::vector<double> spacing = {});

    std::size_t size() const { return labels.size(); }
    std::uint8_t& operator[](std::size_t i) { return labels[i]; }
    std::uint8_t operator[](std::size_t i) const { return labels[i]; }
    std::size_t count(std::uint8_t cls) const;

    friend bool operator==(const LabelMask&, const LabelMask&) = default;
};

struct OverlapScores {
    double dice = 0.0;
    double jaccard = 0.0;
};

/// Both empty scores 1.0.
OverlapScores dice_jaccard(const LabelMask& pred, const LabelMask& gt, std::uint8_t cls);

struct SurfaceScores {
    double hd95 = 0.0;
    double asd = 0.0;
};

/// Surface cells are class cells with a face neighbor outside the class
/// (the grid border counts as outside).
std::vector<std::size_t> surface_cells(const LabelMask& mask, std::uint8_t cls);

/// Symmetric 95th-percentile Hausdorff (nearest rank, max of both directions)
/// and pooled average surface distance. Throws EmptyMask when either class
/// mask is empty.
SurfaceScores surface_distances(const LabelMask& pred, const LabelMask& gt, std::uint8_t cls);

/// Keeps the largest face-connected component of cls; other cells of cls
/// become background. Ties go to the component with the smallest first index.
LabelMask largest_connected_component(const LabelMask& mask, std::uint8_t cls);

/// Number of face-connected components of cls.
std::size_t count_components(const LabelMask& mask, std::uint8_t cls);

struct ClassMetrics {
    std::uint8_t cls = 0;
    double dice = 0.0;
    double jaccard = 0.0;
    double hd95 = 0.0;
    double asd = 0.0;
    bool empty_surface = false; // distance metrics undefined; excluded from aggregates
};

struct SampleMetrics {
    std::string sample;
    std::vector<ClassMetrics> classes; // foreground classes 1..C-1
};

struct ClassAggregate {
    std::uint8_t cls = 0;
    double dice = 0.0;
    double jaccard = 0.0;
    double hd95 = 0.0;
    double asd = 0.0;
    std::size_t distance_count = 0; // samples contributing to hd95/asd
    std::size_t count = 0;
};

struct MetricsReport {
    std::vector<SampleMetrics> samples;
    std::vector<ClassAggregate> per_class;
    ClassAggregate overall; // mean over foreground class aggregates; cls unused

    double mean_dice() const { return overall.dice; }
};

SampleMetrics evaluate_sample(const std::string& id, const LabelMask& pred, const LabelMask& gt, std::size_t classes);

/// Aggregates in the given sample order.
MetricsReport summarize(std::vector<SampleMetrics> samples, std::size_t classes);

/// CSV with header sample,class,dice,jaccard,hd95,asd,flags; one row per
/// (sample, class), then one "mean" row per class and one "overall" row.
void write_metrics_csv(std::ostream& os, const MetricsReport& report);

} // namespace ssnet
