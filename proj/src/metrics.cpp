#include "ssnet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>

#include "ssnet/error.hpp"

namespace ssnet {

LabelMask::LabelMask(Shape d, std::uint8_t fill) : LabelMask(d, std::vector<std::uint8_t>(shape_numel(d), fill)) {}

LabelMask::LabelMask(Shape d, std::vector<std::uint8_t> l, std::vector<double> s)
    : dims(std::move(d)), labels(std::move(l)), spacing(std::move(s))
{
    if (dims.size() != 2 && dims.size() != 3)
        throw Error(ErrorCode::shape_mismatch, "label masks are 2-D or 3-D, got " + shape_string(dims));
    if (shape_numel(dims) != labels.size()) throw Error(ErrorCode::shape_mismatch, "label payload size");
    if (spacing.empty()) spacing.assign(dims.size(), 1.0);
    if (spacing.size() != dims.size()) throw Error(ErrorCode::shape_mismatch, "spacing rank");
    for (double v : spacing)
        if (!(v > 0.0)) throw Error(ErrorCode::invalid_argument, "spacing must be positive");
}

std::size_t LabelMask::count(std::uint8_t cls) const
{
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), cls));
}

namespace {

void require_same_grid(const LabelMask& a, const LabelMask& b)
{
    if (a.dims != b.dims)
        throw Error(ErrorCode::shape_mismatch, "mask dims " + shape_string(a.dims) + " vs " + shape_string(b.dims));
}

std::vector<std::size_t> strides_of(const Shape& dims)
{
    std::vector<std::size_t> s(dims.size(), 1);
    for (std::size_t i = dims.size(); i-- > 1;) s[i - 1] = s[i] * dims[i];
    return s;
}

// Calls visit(neighbor) for each in-grid face neighbor; returns false if some
// face neighbor lies outside the grid.
template <class F>
bool for_each_face_neighbor(const Shape& dims, const std::vector<std::size_t>& strides, std::size_t idx, F&& visit)
{
    bool inside = true;
    for (std::size_t a = 0; a < dims.size(); ++a) {
        const std::size_t coord = (idx / strides[a]) % dims[a];
        if (coord > 0)
            visit(idx - strides[a]);
        else
            inside = false;
        if (coord + 1 < dims[a])
            visit(idx + strides[a]);
        else
            inside = false;
    }
    return inside;
}

constexpr double infinity = std::numeric_limits<double>::infinity();

// Exact squared Euclidean distance transform along one axis (lower envelope
// of parabolas). f holds squared distances on input and output.
void edt_line(std::vector<double>& f, double step, std::vector<std::size_t>& v, std::vector<double>& z,
              std::vector<double>& out)
{
    const std::size_t n = f.size();
    const double s2 = step * step;
    v.clear();
    z.clear();
    for (std::size_t q = 0; q < n; ++q) {
        if (f[q] == infinity) continue;
        const double fq = f[q] + s2 * double(q) * double(q);
        while (!v.empty()) {
            const std::size_t p = v.back();
            const double fp = f[p] + s2 * double(p) * double(p);
            const double x = (fq - fp) / (2.0 * s2 * (double(q) - double(p)));
            if (x <= z.back()) {
                v.pop_back();
                z.pop_back();
            } else {
                v.push_back(q);
                z.push_back(x);
                break;
            }
        }
        if (v.empty()) {
            v.push_back(q);
            z.push_back(-infinity);
        }
    }
    out.assign(n, infinity);
    if (v.empty()) return;
    std::size_t k = 0;
    for (std::size_t q = 0; q < n; ++q) {
        while (k + 1 < v.size() && z[k + 1] < double(q)) ++k;
        const double d = (double(q) - double(v[k])) * step;
        out[q] = d * d + f[v[k]];
    }
}

// Squared distance from every cell to the nearest cell of `sources`.
std::vector<double> squared_distance_field(const LabelMask& grid, const std::vector<std::size_t>& sources)
{
    const Shape& dims = grid.dims;
    const auto strides = strides_of(dims);
    std::vector<double> field(grid.size(), infinity);
    for (auto s : sources) field[s] = 0.0;
    std::vector<double> line, out, z;
    std::vector<std::size_t> v;
    for (std::size_t axis = 0; axis < dims.size(); ++axis) {
        const std::size_t n = dims[axis];
        const std::size_t stride = strides[axis];
        line.resize(n);
        for (std::size_t start = 0; start < field.size(); ++start) {
            if ((start / stride) % n != 0) continue; // first cell of each line along axis
            for (std::size_t i = 0; i < n; ++i) line[i] = field[start + i * stride];
            edt_line(line, grid.spacing[axis], v, z, out);
            for (std::size_t i = 0; i < n; ++i) field[start + i * stride] = out[i];
        }
    }
    return field;
}

double nearest_rank_95(std::vector<double> d)
{
    std::sort(d.begin(), d.end());
    const std::size_t rank = (95 * d.size() + 99) / 100; // ceil(0.95 n)
    return d[std::max<std::size_t>(rank, 1) - 1];
}

double mean_ascending(std::vector<double> d)
{
    std::sort(d.begin(), d.end());
    double s = 0.0;
    for (double v : d) s += v;
    return s / static_cast<double>(d.size());
}

std::vector<int> component_labels(const LabelMask& mask, std::uint8_t cls, std::vector<std::size_t>& sizes)
{
    const auto strides = strides_of(mask.dims);
    std::vector<int> comp(mask.size(), -1);
    std::vector<std::size_t> queue;
    sizes.clear();
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask[i] != cls || comp[i] >= 0) continue;
        const int id = static_cast<int>(sizes.size());
        std::size_t size = 0;
        queue.assign(1, i);
        comp[i] = id;
        while (!queue.empty()) {
            const std::size_t cur = queue.back();
            queue.pop_back();
            ++size;
            for_each_face_neighbor(mask.dims, strides, cur, [&](std::size_t nb) {
                if (mask[nb] == cls && comp[nb] < 0) {
                    comp[nb] = id;
                    queue.push_back(nb);
                }
            });
        }
        sizes.push_back(size);
    }
    return comp;
}

} // namespace

OverlapScores dice_jaccard(const LabelMask& pred, const LabelMask& gt, std::uint8_t cls)
{
    require_same_grid(pred, gt);
    std::size_t p = 0, g = 0, both = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool in_p = pred[i] == cls, in_g = gt[i] == cls;
        p += in_p;
        g += in_g;
        both += in_p && in_g;
    }
    if (p == 0 && g == 0) return {1.0, 1.0};
    const double inter = static_cast<double>(both);
    return {2.0 * inter / static_cast<double>(p + g), inter / static_cast<double>(p + g - both)};
}

std::vector<std::size_t> surface_cells(const LabelMask& mask, std::uint8_t cls)
{
    const auto strides = strides_of(mask.dims);
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        if (mask[i] != cls) continue;
        bool boundary = false;
        const bool inside = for_each_face_neighbor(mask.dims, strides, i, [&](std::size_t nb) {
            if (mask[nb] != cls) boundary = true;
        });
        if (boundary || !inside) out.push_back(i);
    }
    return out;
}

SurfaceScores surface_distances(const LabelMask& pred, const LabelMask& gt, std::uint8_t cls)
{
    require_same_grid(pred, gt);
    const auto sp = surface_cells(pred, cls);
    const auto sg = surface_cells(gt, cls);
    if (sp.empty() || sg.empty())
        throw Error(ErrorCode::empty_mask, std::string(sp.empty() ? "prediction" : "ground truth") + " class " +
                                               std::to_string(cls) + " is empty");
    LabelMask grid = gt;
    grid.spacing = gt.spacing;
    const auto to_gt = squared_distance_field(grid, sg);
    const auto to_pred = squared_distance_field(grid, sp);
    std::vector<double> forward, backward;
    forward.reserve(sp.size());
    backward.reserve(sg.size());
    for (auto i : sp) forward.push_back(std::sqrt(to_gt[i]));
    for (auto i : sg) backward.push_back(std::sqrt(to_pred[i]));
    SurfaceScores s;
    s.hd95 = std::max(nearest_rank_95(forward), nearest_rank_95(backward));
    std::vector<double> pooled = forward;
    pooled.insert(pooled.end(), backward.begin(), backward.end());
    s.asd = mean_ascending(std::move(pooled));
    return s;
}

LabelMask largest_connected_component(const LabelMask& mask, std::uint8_t cls)
{
    std::vector<std::size_t> sizes;
    const auto comp = component_labels(mask, cls, sizes);
    if (sizes.size() <= 1) return mask;
    // Components are numbered in raster order of their first cell, so the
    // first maximum is the tie-break winner.
    const int keep = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
    LabelMask out = mask;
    for (std::size_t i = 0; i < out.size(); ++i)
        if (comp[i] >= 0 && comp[i] != keep) out[i] = 0;
    return out;
}

std::size_t count_components(const LabelMask& mask, std::uint8_t cls)
{
    std::vector<std::size_t> sizes;
    component_labels(mask, cls, sizes);
    return sizes.size();
}

SampleMetrics evaluate_sample(const std::string& id, const LabelMask& pred, const LabelMask& gt, std::size_t classes)
{
    SampleMetrics sm;
    sm.sample = id;
    for (std::size_t c = 1; c < classes; ++c) {
        ClassMetrics cm;
        cm.cls = static_cast<std::uint8_t>(c);
        const auto ov = dice_jaccard(pred, gt, cm.cls);
        cm.dice = ov.dice;
        cm.jaccard = ov.jaccard;
        try {
            const auto sd = surface_distances(pred, gt, cm.cls);
            cm.hd95 = sd.hd95;
            cm.asd = sd.asd;
        } catch (const Error& e) {
            if (e.code() != ErrorCode::empty_mask) throw;
            cm.empty_surface = true;
            cm.hd95 = cm.asd = std::numeric_limits<double>::quiet_NaN();
        }
        sm.classes.push_back(cm);
    }
    return sm;
}

MetricsReport summarize(std::vector<SampleMetrics> samples, std::size_t classes)
{
    MetricsReport r;
    r.samples = std::move(samples);
    for (std::size_t c = 1; c < classes; ++c) {
        ClassAggregate agg;
        agg.cls = static_cast<std::uint8_t>(c);
        for (const auto& s : r.samples) {
            for (const auto& cm : s.classes) {
                if (cm.cls != agg.cls) continue;
                agg.dice += cm.dice;
                agg.jaccard += cm.jaccard;
                ++agg.count;
                if (!cm.empty_surface) {
                    agg.hd95 += cm.hd95;
                    agg.asd += cm.asd;
                    ++agg.distance_count;
                }
            }
        }
        if (agg.count) {
            agg.dice /= double(agg.count);
            agg.jaccard /= double(agg.count);
        }
        if (agg.distance_count) {
            agg.hd95 /= double(agg.distance_count);
            agg.asd /= double(agg.distance_count);
        } else {
            agg.hd95 = agg.asd = std::numeric_limits<double>::quiet_NaN();
        }
        r.per_class.push_back(agg);
    }
    std::size_t n = 0, nd = 0;
    for (const auto& a : r.per_class) {
        if (a.count) {
            r.overall.dice += a.dice;
            r.overall.jaccard += a.jaccard;
            r.overall.count += a.count;
            ++n;
        }
        if (a.distance_count) {
            r.overall.hd95 += a.hd95;
            r.overall.asd += a.asd;
            r.overall.distance_count += a.distance_count;
            ++nd;
        }
    }
    if (n) {
        r.overall.dice /= double(n);
        r.overall.jaccard /= double(n);
    }
    if (nd) {
        r.overall.hd95 /= double(nd);
        r.overall.asd /= double(nd);
    } else {
        r.overall.hd95 = r.overall.asd = std::numeric_limits<double>::quiet_NaN();
    }
    return r;
}

namespace {
void put_number(std::ostream& os, double v)
{
    if (std::isnan(v))
        os << "nan";
    else
        os << v;
}
} // namespace

void write_metrics_csv(std::ostream& os, const MetricsReport& report)
{
    const auto old_precision = os.precision(10);
    os << "sample,class,dice,jaccard,hd95,asd,flags\n";
    for (const auto& s : report.samples) {
        for (const auto& c : s.classes) {
            os << s.sample << ',' << int(c.cls) << ',';
            put_number(os, c.dice);
            os << ',';
            put_number(os, c.jaccard);
            os << ',';
            put_number(os, c.hd95);
            os << ',';
            put_number(os, c.asd);
            os << ',' << (c.empty_surface ? "empty_surface" : "") << '\n';
        }
    }
    for (const auto& a : report.per_class) {
        os << "mean," << int(a.cls) << ',';
        put_number(os, a.dice);
        os << ',';
        put_number(os, a.jaccard);
        os << ',';
        put_number(os, a.hd95);
        os << ',';
        put_number(os, a.asd);
        os << ',' << (a.distance_count < a.count ? "excluded_empty" : "") << '\n';
    }
    os << "overall,all,";
    put_number(os, report.overall.dice);
    os << ',';
    put_number(os, report.overall.jaccard);
    os << ',';
    put_number(os, report.overall.hd95);
    os << ',';
    put_number(os, report.overall.asd);
    os << ",\n";
    os.precision(old_precision);
}

} // namespace ssnet
