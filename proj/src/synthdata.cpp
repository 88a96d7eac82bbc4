#include "ssnet/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include "ssnet/error.hpp"

namespace ssnet {

MoonSet two_moons(std::size_t n, double gamma, std::uint64_t seed)
{
    if (n < 2) throw Error(ErrorCode::invalid_argument, "two_moons needs n >= 2");
    if (!(gamma >= 0.0)) throw Error(ErrorCode::invalid_argument, "gamma must be >= 0");
    MoonSet set;
    set.gamma = gamma;
    set.seed = seed;
    set.points = Tensor(Shape{n, 2});
    set.labels.resize(n);
    const std::size_t per_class[2] = {(n + 1) / 2, n / 2};
    CounterRng rng = CounterRng(seed).split("two_moons");
    std::normal_distribution<double> normal(0.0, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        const int label = static_cast<int>(i % 2);
        const std::size_t j = i / 2;
        const std::size_t count = per_class[label];
        const double t = count > 1 ? std::numbers::pi * double(j) / double(count - 1) : 0.0;
        double x, y;
        if (label == 0) {
            x = std::cos(t);
            y = std::sin(t);
        } else {
            x = 1.0 - std::cos(t);
            y = 0.5 - std::sin(t);
        }
        // Draw both coordinates even when gamma is 0 so streams stay aligned.
        const double nx = normal(rng), ny = normal(rng);
        set.points[2 * i] = static_cast<float>(x + gamma * nx);
        set.points[2 * i + 1] = static_cast<float>(y + gamma * ny);
        set.labels[i] = label;
    }
    return set;
}

double distance_to_arc(float px, float py, int label)
{
    const double cx = label == 0 ? 0.0 : 1.0;
    const double cy = label == 0 ? 0.0 : 0.5;
    const double dx = px - cx, dy = py - cy;
    const bool on_side = label == 0 ? dy >= 0.0 : dy <= 0.0;
    if (on_side) return std::abs(std::hypot(dx, dy) - 1.0);
    return std::min(std::hypot(dx - 1.0, dy), std::hypot(dx + 1.0, dy));
}

double class_intensity(std::size_t cls, std::size_t classes)
{
    return static_cast<double>(cls) / static_cast<double>(classes - 1);
}

namespace {

std::vector<double> gaussian_kernel(double sigma)
{
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    std::vector<double> k(2 * radius + 1);
    double total = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        k[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
        total += k[i + radius];
    }
    for (auto& v : k) v /= total;
    return k;
}

// Separable blur with clamped borders.
void blur(std::vector<double>& img, std::size_t h, std::size_t w, double sigma)
{
    if (sigma <= 0.0) return;
    const auto k = gaussian_kernel(sigma);
    const int r = static_cast<int>(k.size() / 2);
    std::vector<double> tmp(img.size());
    auto clampi = [](int v, int hi) { return std::clamp(v, 0, hi - 1); };
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            double s = 0.0;
            for (int d = -r; d <= r; ++d) s += k[d + r] * img[y * w + clampi(int(x) + d, int(w))];
            tmp[y * w + x] = s;
        }
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) {
            double s = 0.0;
            for (int d = -r; d <= r; ++d) s += k[d + r] * tmp[clampi(int(y) + d, int(h)) * w + x];
            img[y * w + x] = s;
        }
}

void paint_blob(LabelMask& mask, std::uint8_t cls, CounterRng& rng)
{
    const double h = double(mask.dims[0]), w = double(mask.dims[1]);
    const double side = std::min(h, w);
    auto uni = [&rng](double lo, double hi) { return lo + (hi - lo) * rng.uniform(); };
    const double cy = uni(0.25, 0.75) * h, cx = uni(0.25, 0.75) * w;
    const double ra = uni(0.12, 0.28) * side, rb = uni(0.12, 0.28) * side;
    const double angle = uni(0.0, std::numbers::pi);
    const double amp = uni(0.0, 0.2);
    const double freq = double(2 + static_cast<int>(rng.uniform() * 4.0));
    const double phase = uni(0.0, 2.0 * std::numbers::pi);
    const double ca = std::cos(angle), sa = std::sin(angle);
    for (std::size_t y = 0; y < mask.dims[0]; ++y) {
        for (std::size_t x = 0; x < mask.dims[1]; ++x) {
            const double dy = double(y) + 0.5 - cy, dx = double(x) + 0.5 - cx;
            const double u = (ca * dx + sa * dy) / ra;
            const double v = (-sa * dx + ca * dy) / rb;
            const double rho = std::hypot(u, v);
            const double limit = 1.0 + amp * std::sin(freq * std::atan2(v, u) + phase);
            if (rho <= limit) mask[y * mask.dims[1] + x] = cls;
        }
    }
}

} // namespace

SegSample make_blob_sample(const BlobOptions& opts, CounterRng rng)
{
    const std::size_t h = opts.height, w = opts.width, classes = opts.classes;
    LabelMask mask;
    for (int attempt = 0;; ++attempt) {
        if (attempt == 1000)
            throw Error(ErrorCode::invalid_argument, "blob generator cannot meet the foreground band");
        mask = LabelMask(Shape{h, w});
        for (std::size_t c = 1; c < classes; ++c) paint_blob(mask, static_cast<std::uint8_t>(c), rng);
        const double fg = 1.0 - double(mask.count(0)) / double(mask.size());
        if (fg >= opts.min_foreground && fg <= opts.max_foreground) break;
    }
    const double spread = 1.0 - opts.contrast;
    const double shift = opts.intensity_jitter * spread * (2.0 * rng.uniform() - 1.0);
    std::vector<double> img(h * w);
    for (std::size_t i = 0; i < img.size(); ++i)
        img[i] = 0.5 + opts.contrast * (class_intensity(mask[i], classes) - 0.5) + shift;
    blur(img, h, w, opts.blur_sigma);
    const double noise_sd = opts.noise_scale * spread;
    std::normal_distribution<double> normal(0.0, 1.0);
    SegSample s;
    s.image = Tensor(Shape{1, h, w});
    for (std::size_t i = 0; i < img.size(); ++i) {
        const double n = normal(rng);
        s.image[i] = static_cast<float>(std::clamp(img[i] + noise_sd * n, 0.0, 1.0));
    }
    s.mask = std::move(mask);
    return s;
}

std::vector<SegSample> blob_dataset(std::size_t count, const BlobOptions& opts, std::uint64_t seed)
{
    if (opts.height < 16 || opts.width < 16) throw Error(ErrorCode::invalid_argument, "blob images need H, W >= 16");
    if (opts.classes < 2) throw Error(ErrorCode::invalid_argument, "blob corpus needs C >= 2");
    if (!(opts.contrast > 0.0 && opts.contrast <= 1.0))
        throw Error(ErrorCode::invalid_argument, "contrast must lie in (0, 1]");
    if (opts.blur_sigma < 0.0) throw Error(ErrorCode::invalid_argument, "blur_sigma must be >= 0");
    const CounterRng root = CounterRng(seed).split("blobs");
    std::vector<SegSample> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) out.push_back(make_blob_sample(opts, root.split(i)));
    return out;
}

SemiSplit split_semi(std::size_t total, double fraction, std::uint64_t seed)
{
    if (!(fraction > 0.0 && fraction < 1.0))
        throw Error(ErrorCode::degenerate_split, "fraction must lie in (0, 1)");
    const auto labeled = static_cast<std::size_t>(std::llround(fraction * double(total)));
    if (labeled == 0 || labeled >= total)
        throw Error(ErrorCode::degenerate_split,
                    std::to_string(labeled) + " labeled out of " + std::to_string(total));
    std::vector<std::size_t> idx(total);
    std::iota(idx.begin(), idx.end(), 0);
    CounterRng rng = CounterRng(seed).split("split");
    for (std::size_t i = 0; i < labeled; ++i) {
        const std::size_t j = i + std::min(total - i - 1, static_cast<std::size_t>(rng.uniform() * double(total - i)));
        std::swap(idx[i], idx[j]);
    }
    SemiSplit s;
    s.labeled.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(labeled));
    s.unlabeled.assign(idx.begin() + static_cast<std::ptrdiff_t>(labeled), idx.end());
    std::sort(s.labeled.begin(), s.labeled.end());
    std::sort(s.unlabeled.begin(), s.unlabeled.end());
    return s;
}

namespace {

// source[i] = input index that lands at output index i.
std::vector<std::size_t> dihedral_source(std::size_t h, std::size_t w, Dihedral e)
{
    const int turns = ((e.quarter_turns % 4) + 4) % 4;
    if (turns % 2 == 1 && h != w)
        throw Error(ErrorCode::non_square_input,
                    "quarter-turn rotation of a " + std::to_string(h) + "x" + std::to_string(w) + " sample");
    std::vector<std::size_t> src(h * w);
    std::iota(src.begin(), src.end(), 0);
    std::vector<std::size_t> next(src.size());
    if (e.flip) {
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) next[y * w + x] = src[y * w + (w - 1 - x)];
        src.swap(next);
    }
    if (turns == 2) {
        // Half turn; valid for any aspect ratio.
        for (std::size_t i = 0; i < h * w; ++i) next[i] = src[h * w - 1 - i];
        return next;
    }
    for (int t = 0; t < turns; ++t) {
        // Counter-clockwise quarter turn of a square grid.
        for (std::size_t y = 0; y < h; ++y)
            for (std::size_t x = 0; x < w; ++x) next[y * w + x] = src[x * w + (w - 1 - y)];
        src.swap(next);
    }
    return src;
}

} // namespace

LabelMask apply_dihedral(const LabelMask& mask, Dihedral element)
{
    if (mask.dims.size() != 2) throw Error(ErrorCode::shape_mismatch, "dihedral transform needs a 2-D mask");
    const auto src = dihedral_source(mask.dims[0], mask.dims[1], element);
    LabelMask out = mask;
    for (std::size_t i = 0; i < src.size(); ++i) out[i] = mask[src[i]];
    return out;
}

SegSample apply_dihedral(const SegSample& sample, Dihedral element)
{
    const Shape& s = sample.image.shape();
    if (s.size() != 3 || sample.mask.dims.size() != 2 || s[1] != sample.mask.dims[0] || s[2] != sample.mask.dims[1])
        throw Error(ErrorCode::shape_mismatch, "image " + shape_string(s) + " vs mask " + shape_string(sample.mask.dims));
    const std::size_t plane = s[1] * s[2];
    const auto src = dihedral_source(s[1], s[2], element);
    SegSample out = sample;
    for (std::size_t c = 0; c < s[0]; ++c)
        for (std::size_t i = 0; i < plane; ++i) out.image[c * plane + i] = sample.image[c * plane + src[i]];
    for (std::size_t i = 0; i < plane; ++i) out.mask[i] = sample.mask[src[i]];
    return out;
}

SegSample augment(const SegSample& sample, std::uint64_t seed)
{
    CounterRng rng = CounterRng(seed).split("dihedral");
    return apply_dihedral(sample, Dihedral::from_index(static_cast<int>(rng() % 8)));
}

} // namespace ssnet
