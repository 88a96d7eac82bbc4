#pragma once

// Export of projected (Phi_f) features for external visualization.

#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "ssnet/nets.hpp"
#include "ssnet/synthdata.hpp"

namespace ssnet {

struct EmbeddingRow {
    std::vector<float> features; // d_proj values
    int label = -1;              // ground truth on labeled rows, -1 otherwise
    int pseudo_label = 0;        // argmax prediction
    float confidence = 0.0f;     // max class probability
};

/// Up to max_points pixels drawn uniformly from all pixels of `samples`, in
/// (sample, row, column) order. Pixels of samples listed in `labeled` carry
/// their mask value. Images are standardized and run through the network whole.
std::vector<EmbeddingRow> embed_pixels(const ModelBundle& model, const std::vector<SegSample>& samples,
                                       std::span<const std::size_t> labeled, std::size_t max_points,
                                       std::uint64_t seed);

/// Same for two-moon points; `labeled` indexes points.
std::vector<EmbeddingRow> embed_points(const ModelBundle& model, const MoonSet& set,
                                       std::span<const std::size_t> labeled, std::size_t max_points,
                                       std::uint64_t seed);

/// Header f0..f{d-1}, label, pseudo_label, confidence; tab separated.
void write_embedding_tsv(std::ostream& os, const std::vector<EmbeddingRow>& rows, std::size_t d_proj);

} // namespace ssnet
