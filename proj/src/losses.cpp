#include "ssnet/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "ssnet/error.hpp"

namespace ssnet {

std::string_view discrepancy_name(DiscrepancyKind kind) { return kind == DiscrepancyKind::dice ? "dice" : "kl"; }

DiscrepancyKind parse_discrepancy(std::string_view name)
{
    if (name == "dice") return DiscrepancyKind::dice;
    if (name == "kl") return DiscrepancyKind::kl;
    throw Error(ErrorCode::invalid_argument, "unknown discrepancy '" + std::string(name) + "'");
}

void AdvConfig::validate() const
{
    if (!(epsilon >= 0.0)) throw Error(ErrorCode::invalid_argument, "adv.epsilon must be >= 0");
    if (!(xi > 0.0)) throw Error(ErrorCode::invalid_argument, "adv.xi must be > 0");
}

namespace {

Var scalar(double v) { return constant(Tensor::scalar(static_cast<float>(v))); }

Var as_rows(const Var& v)
{
    const Shape& s = v.shape();
    if (s.size() == 2) return v;
    if (s.size() == 4) return to_rows(v);
    if (s.size() == 1) return reshape(v, {s[0], 1});
    throw Error(ErrorCode::shape_mismatch, "probabilities must be rank 1, 2 or 4, got " + shape_string(s));
}

void check_distribution(const Tensor& rows, const char* which)
{
    const std::size_t c = rows.dim(1);
    for (std::size_t r = 0; r < rows.dim(0); ++r) {
        double s = 0.0;
        for (std::size_t k = 0; k < c; ++k) {
            const float v = rows[r * c + k];
            if (v < 0.0f) throw Error(ErrorCode::not_a_distribution, std::string(which) + " has a negative entry");
            s += v;
        }
        if (std::abs(s - 1.0) > 1e-4)
            throw Error(ErrorCode::not_a_distribution,
                        std::string(which) + " row " + std::to_string(r) + " sums to " + std::to_string(s));
    }
}

// Per-sample l2 normalization to a target norm. Returns the zero flag per sample.
std::vector<bool> normalize_per_sample(Tensor& t, double target, double floor)
{
    const std::size_t batch = t.dim(0);
    const std::size_t per = t.size() / batch;
    std::vector<bool> zero(batch, false);
    for (std::size_t b = 0; b < batch; ++b) {
        float* p = t.raw() + b * per;
        double ss = 0.0;
        for (std::size_t i = 0; i < per; ++i) ss += static_cast<double>(p[i]) * p[i];
        const double norm = std::sqrt(ss);
        if (norm < floor) {
            zero[b] = true;
            std::fill(p, p + per, 0.0f);
            continue;
        }
        const double f = target / norm;
        for (std::size_t i = 0; i < per; ++i) p[i] = static_cast<float>(p[i] * f);
    }
    return zero;
}

Tensor add_tensors(const Tensor& a, const Tensor& b)
{
    if (a.shape() != b.shape())
        throw Error(ErrorCode::shape_mismatch, shape_string(a.shape()) + " + " + shape_string(b.shape()));
    Tensor out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
    return out;
}

Var l1_normalize(const Var& scores) { return div(scores, sum(scores)); }

} // namespace

Var discrepancy(const Var& a, const Var& b, DiscrepancyKind kind, double smoothing)
{
    if (a.shape() != b.shape())
        throw Error(ErrorCode::shape_mismatch, "discrepancy operands " + shape_string(a.shape()) + " vs " +
                                                   shape_string(b.shape()));
    const Var ra = as_rows(a);
    const Var rb = as_rows(b);
    if (kind == DiscrepancyKind::dice) {
        const Var inter = sum(ra * rb, 0);
        const Var denom = sum(ra, 0) + sum(rb, 0) + scalar(smoothing);
        const Var per_class = scalar(1.0) - scale(inter, 2.0f) / denom;
        return mean(per_class);
    }
    check_distribution(ra.value(), "first operand");
    check_distribution(rb.value(), "second operand");
    constexpr double delta = 1e-12;
    const Var terms = ra * (log(ra + scalar(delta)) - log(rb + scalar(delta)));
    return scale(sum(terms), 1.0f / static_cast<float>(ra.shape()[0]));
}

ProbabilityFn probability_fn(const ModelBundle& model)
{
    return [&model](const Var& inputs) { return probabilities(model, inputs); };
}

AdversarialNoise adversarial_noise(const ProbabilityFn& probs, const Tensor& x, const Tensor& pseudo,
                                   const AdvConfig& cfg, CounterRng& rng)
{
    cfg.validate();
    if (x.rank() == 0 || x.dim(0) == 0) throw Error(ErrorCode::shape_mismatch, "adversarial_noise on empty batch");
    if (!x.all_finite()) throw Error(ErrorCode::non_finite_value, "adversarial_noise input");
    AdversarialNoise result;
    result.r_adv = Tensor(x.shape());
    result.zero_samples.assign(x.dim(0), false);
    if (cfg.epsilon == 0.0) return result;

    std::normal_distribution<double> normal(0.0, 1.0);
    Tensor d(x.shape());
    for (auto& v : d.data()) v = static_cast<float>(normal(rng));
    normalize_per_sample(d, cfg.xi, 0.0);

    const Var r_ini = parameter(d);
    const Var perturbed = constant(x) + r_ini;
    const Var dist = discrepancy(constant(pseudo), probs(perturbed), cfg.kind);
    const Var wrt[] = {r_ini};
    Tensor g = gradients(dist, wrt)[0].value;
    result.zero_samples = normalize_per_sample(g, cfg.epsilon, 1e-12);
    result.zero_gradient = std::any_of(result.zero_samples.begin(), result.zero_samples.end(), [](bool z) { return z; });
    result.r_adv = std::move(g);
    return result;
}

AdversarialNoise adversarial_noise(const ModelBundle& model, const Tensor& x, const AdvConfig& cfg, CounterRng& rng)
{
    const Tensor pseudo = probabilities(model, constant(x)).value();
    return adversarial_noise(probability_fn(model), x, pseudo, cfg, rng);
}

Var lds_loss(const ProbabilityFn& probs, const Var& pseudo, const Tensor& x, const Tensor& r_adv, DiscrepancyKind kind)
{
    if (x.shape() != r_adv.shape())
        throw Error(ErrorCode::shape_mismatch, "r_adv " + shape_string(r_adv.shape()) + " vs x " + shape_string(x.shape()));
    return discrepancy(stop_gradient(pseudo), probs(constant(add_tensors(x, r_adv))), kind);
}

Var lds_loss(const ModelBundle& model, const Tensor& x, const Tensor& r_adv, DiscrepancyKind kind)
{
    const Var pseudo = probabilities(model, constant(x));
    return lds_loss(probability_fn(model), pseudo, x, r_adv, kind);
}

std::vector<int> argmax_rows(const Tensor& rows)
{
    const std::size_t c = rows.dim(1);
    std::vector<int> out(rows.dim(0));
    for (std::size_t r = 0; r < out.size(); ++r) {
        const float* p = rows.raw() + r * c;
        out[r] = static_cast<int>(std::max_element(p, p + c) - p);
    }
    return out;
}

Tensor one_hot(std::span<const int> labels, std::size_t classes)
{
    Tensor t(Shape{labels.size(), classes});
    for (std::size_t r = 0; r < labels.size(); ++r) {
        if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= classes)
            throw Error(ErrorCode::invalid_argument, "label " + std::to_string(labels[r]) + " out of range");
        t[r * classes + static_cast<std::size_t>(labels[r])] = 1.0f;
    }
    return t;
}

PrototypeBank select_prototypes(const Var& labeled_features, std::span<const int> labels, const Tensor& probs,
                                const ProtoConfig& cfg, std::span<const AttentionHead> attention_z)
{
    const Shape& fs = labeled_features.shape();
    if (fs.size() != 2 || probs.rank() != 2 || fs[0] != labels.size() || probs.dim(0) != labels.size())
        throw Error(ErrorCode::shape_mismatch, "select_prototypes: features " + shape_string(fs) + ", probs " +
                                                   shape_string(probs.shape()) + ", " + std::to_string(labels.size()) +
                                                   " labels");
    const std::size_t classes = probs.dim(1);
    if (attention_z.size() != classes)
        throw Error(ErrorCode::shape_mismatch, "need one attention head per class");

    PrototypeBank bank;
    bank.k = cfg.k;
    bank.threshold = cfg.threshold;
    bank.classes.resize(classes);

    std::vector<std::vector<std::size_t>> candidates(classes);
    for (std::size_t r = 0; r < labels.size(); ++r) {
        const float* p = probs.raw() + r * classes;
        const auto best = static_cast<std::size_t>(std::max_element(p, p + classes) - p);
        if (p[best] > cfg.threshold && static_cast<int>(best) == labels[r]) candidates[best].push_back(r);
    }

    const Tensor& all = labeled_features.value();
    for (std::size_t c = 0; c < classes; ++c) {
        auto& cand = candidates[c];
        if (cand.empty() || cfg.k == 0) continue;
        const Tensor scores = attention_scores(attention_z[c], gather_rows(constant(all), cand)).value();
        std::vector<std::size_t> order(cand.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
        ClassPrototypes& proto = bank.classes[c];
        const std::size_t keep = std::min(cfg.k, cand.size());
        for (std::size_t i = 0; i < keep; ++i) proto.rows.push_back(cand[order[i]]);
        proto.vectors = gather_rows(labeled_features, proto.rows);
        proto.weights = l1_normalize(attention_scores(attention_z[c], proto.vectors));
    }
    return bank;
}

std::string_view weight_scaling_name(WeightScaling s) { return s == WeightScaling::unit_sum ? "sum" : "mean"; }

WeightScaling parse_weight_scaling(std::string_view name)
{
    if (name == "sum") return WeightScaling::unit_sum;
    if (name == "mean") return WeightScaling::unit_mean;
    throw Error(ErrorCode::invalid_argument, "unknown weight scaling '" + std::string(name) + "'");
}

Var cs_loss(const PrototypeBank& bank, const Var& features, std::span<const int> assignments,
            std::span<const AttentionHead> attention_f, WeightScaling scaling)
{
    const Shape& fs = features.shape();
    if (fs.size() != 2 || fs[0] != assignments.size())
        throw Error(ErrorCode::shape_mismatch, "cs_loss: features " + shape_string(fs) + " with " +
                                                   std::to_string(assignments.size()) + " assignments");
    if (attention_f.size() < bank.classes.size())
        throw Error(ErrorCode::shape_mismatch, "need one feature attention head per class");

    auto check_nonzero = [](const Tensor& norms, const char* what) {
        for (float v : norms.data())
            if (!(v >= 1e-12f)) throw Error(ErrorCode::zero_vector, std::string(what) + " with zero l2 norm");
    };

    std::vector<Var> per_class;
    for (std::size_t c = 0; c < bank.classes.size(); ++c) {
        const ClassPrototypes& proto = bank.classes[c];
        if (proto.empty()) continue;
        std::vector<std::size_t> members;
        for (std::size_t r = 0; r < assignments.size(); ++r)
            if (assignments[r] == static_cast<int>(c)) members.push_back(r);
        if (members.empty()) continue;
        if (proto.vectors.shape().size() != 2 || proto.vectors.shape()[1] != fs[1])
            throw Error(ErrorCode::shape_mismatch, "prototype width " + shape_string(proto.vectors.shape()));

        const Var z = proto.vectors;
        const Var f = gather_rows(features, members);
        const std::size_t n = z.shape()[0], m = f.shape()[0];
        const Var wf = l1_normalize(attention_scores(attention_f[c], f));

        const Var z_norm = l2_norm(z, 1);
        const Var f_norm = l2_norm(f, 1);
        check_nonzero(z_norm.value(), "prototype");
        check_nonzero(f_norm.value(), "feature");
        const Var cosine = matmul(z, f, false, true) / matmul(reshape(z_norm, {n, 1}), reshape(f_norm, {1, m}));
        const Var distance = scalar(1.0) - cosine;
        const Var weights = matmul(reshape(proto.weights, {n, 1}), reshape(wf, {1, m}));
        Var term = sum(weights * distance);
        if (scaling == WeightScaling::unit_sum) term = scale(term, static_cast<float>(1.0 / (double(n) * double(m))));
        per_class.push_back(term);
    }
    if (per_class.empty()) return scalar(0.0);
    Var total = per_class[0];
    for (std::size_t i = 1; i < per_class.size(); ++i) total = total + per_class[i];
    return scale(total, 1.0f / static_cast<float>(per_class.size()));
}

std::vector<std::size_t> subsample_rows(std::size_t n, std::size_t cap, CounterRng& rng)
{
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    if (cap == 0 || n <= cap) return idx;
    // Partial Fisher-Yates; the counter generator keeps this reproducible.
    for (std::size_t i = 0; i < cap; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.uniform() * static_cast<double>(n - i));
        std::swap(idx[i], idx[std::min(j, n - 1)]);
    }
    idx.resize(cap);
    std::sort(idx.begin(), idx.end());
    return idx;
}

double rampup_weight(std::size_t iter, const RampUp& cfg, LossTerm which)
{
    const double lambda_max = which == LossTerm::lds ? cfg.lambda_max_lds : cfg.lambda_max_cs;
    const double progress =
        cfg.t_ramp == 0 ? 1.0 : std::min(static_cast<double>(iter) / static_cast<double>(cfg.t_ramp), 1.0);
    const double phase = 1.0 - progress;
    return lambda_max * std::exp(-5.0 * phase * phase);
}

Var total_loss(const Var& seg, const Var& lds, const Var& cs, double lambda_lds, double lambda_cs)
{
    for (const Var* v : {&seg, &lds, &cs})
        if (!v->value().all_finite()) throw Error(ErrorCode::non_finite_value, "total_loss input");
    if (!std::isfinite(lambda_lds) || !std::isfinite(lambda_cs))
        throw Error(ErrorCode::non_finite_value, "total_loss weight");
    return seg + scalar(lambda_lds) * lds + scalar(lambda_cs) * cs;
}

} // namespace ssnet
