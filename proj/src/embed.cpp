#include "ssnet/embed.hpp"

#include <algorithm>
#include <charconv>
#include <ostream>

#include "ssnet/error.hpp"
#include "ssnet/trainer.hpp"

namespace ssnet {

namespace {

// Appends one row per entry of `rows` (indices into the forward's sites).
void append_rows(const ModelBundle& model, const Var& inputs, const std::vector<std::size_t>& rows,
                 const std::vector<int>& labels, std::vector<EmbeddingRow>& out)
{
    const Forward fr = forward_rows(model, inputs);
    const Tensor probs = softmax(gather_rows(fr.logits, rows), 1).value();
    const Tensor f = project_rows(model.projector_f, gather_rows(fr.features, rows), model.config.leaky_slope).value();
    const std::size_t classes = probs.dim(1);
    const std::size_t d = f.dim(1);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        EmbeddingRow r;
        r.features.assign(f.raw() + i * d, f.raw() + (i + 1) * d);
        const float* p = probs.raw() + i * classes;
        const auto best = std::max_element(p, p + classes);
        r.pseudo_label = static_cast<int>(best - p);
        r.confidence = *best;
        r.label = labels[i];
        out.push_back(std::move(r));
    }
}

bool contains(std::span<const std::size_t> set, std::size_t v)
{
    return std::find(set.begin(), set.end(), v) != set.end();
}

} // namespace

std::vector<EmbeddingRow> embed_pixels(const ModelBundle& model, const std::vector<SegSample>& samples,
                                       std::span<const std::size_t> labeled, std::size_t max_points,
                                       std::uint64_t seed)
{
    if (model.config.arch == Arch::mlp) throw Error(ErrorCode::shape_mismatch, "pixel embedding needs a conv net");
    std::vector<std::size_t> offsets{0};
    for (const auto& s : samples) offsets.push_back(offsets.back() + s.mask.labels.size());
    CounterRng rng = CounterRng(seed).split("embed");
    const std::vector<std::size_t> picked = subsample_rows(offsets.back(), max_points, rng);

    std::vector<EmbeddingRow> out;
    out.reserve(picked.size());
    auto it = picked.begin();
    for (std::size_t s = 0; s < samples.size() && it != picked.end(); ++s) {
        std::vector<std::size_t> rows;
        std::vector<int> labels;
        const bool has_labels = contains(labeled, s);
        for (; it != picked.end() && *it < offsets[s + 1]; ++it) {
            const std::size_t local = *it - offsets[s];
            rows.push_back(local);
            labels.push_back(has_labels ? samples[s].mask.labels[local] : -1);
        }
        if (rows.empty()) continue;
        const Tensor& img = samples[s].image;
        if (img.dim(0) != model.config.in_channels)
            throw Error(ErrorCode::shape_mismatch, "image channels " + std::to_string(img.dim(0)) + " vs model " +
                                                       std::to_string(model.config.in_channels));
        const Tensor z = standardize(img).reshaped(Shape{1, img.dim(0), img.dim(1), img.dim(2)});
        append_rows(model, constant(z), rows, labels, out);
    }
    return out;
}

std::vector<EmbeddingRow> embed_points(const ModelBundle& model, const MoonSet& set,
                                       std::span<const std::size_t> labeled, std::size_t max_points,
                                       std::uint64_t seed)
{
    if (model.config.arch != Arch::mlp) throw Error(ErrorCode::shape_mismatch, "point embedding needs an MLP");
    CounterRng rng = CounterRng(seed).split("embed");
    const std::vector<std::size_t> rows = subsample_rows(set.labels.size(), max_points, rng);
    std::vector<int> labels;
    for (std::size_t r : rows) labels.push_back(contains(labeled, r) ? set.labels[r] : -1);
    std::vector<EmbeddingRow> out;
    if (!rows.empty()) append_rows(model, constant(set.points), rows, labels, out);
    return out;
}

void write_embedding_tsv(std::ostream& os, const std::vector<EmbeddingRow>& rows, std::size_t d_proj)
{
    for (std::size_t j = 0; j < d_proj; ++j) os << 'f' << j << '\t';
    os << "label\tpseudo_label\tconfidence\n";
    char buf[32];
    const auto put = [&](float v) {
        const auto res = std::to_chars(buf, buf + sizeof buf, v);
        os.write(buf, res.ptr - buf);
    };
    for (const auto& r : rows) {
        if (r.features.size() != d_proj) throw Error(ErrorCode::shape_mismatch, "embedding row width");
        for (float v : r.features) {
            put(v);
            os << '\t';
        }
        os << r.label << '\t' << r.pseudo_label << '\t';
        put(r.confidence);
        os << '\n';
    }
    if (!os) throw Error(ErrorCode::io_failure, "embedding write failed");
}

} // namespace ssnet
