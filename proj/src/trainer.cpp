#include "ssnet/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>

#include "ssnet/config.hpp"
#include "ssnet/error.hpp"
#include "ssnet/tensor_io.hpp"

namespace ssnet {

std::string_view variant_name(Variant v)
{
    switch (v) {
    case Variant::seg_only: return "seg_only";
    case Variant::seg_lds: return "seg_lds";
    case Variant::seg_cs: return "seg_cs";
    case Variant::full: return "full";
    case Variant::seg_lds_kl: return "seg_lds_kl";
    }
    return "unknown";
}

Variant parse_variant(std::string_view name)
{
    for (Variant v : {Variant::seg_only, Variant::seg_lds, Variant::seg_cs, Variant::full, Variant::seg_lds_kl})
        if (name == variant_name(v)) return v;
    throw Error(ErrorCode::invalid_argument, "unknown variant '" + std::string(name) + "'");
}

bool uses_lds(Variant v) { return v == Variant::seg_lds || v == Variant::full || v == Variant::seg_lds_kl; }
bool uses_cs(Variant v) { return v == Variant::seg_cs || v == Variant::full; }

void TrainConfig::validate() const
{
    auto fail = [](const std::string& what) { throw Error(ErrorCode::bad_config, what); };
    if (!(lr0 > 0.0)) fail("train.lr0 must be > 0");
    if (!(decay_factor > 0.0 && decay_factor < 1.0)) fail("train.decay_factor must lie in (0, 1)");
    if (decay_every == 0) fail("train.decay_every must be >= 1");
    if (!(momentum >= 0.0 && momentum < 1.0)) fail("train.momentum must lie in [0, 1)");
    if (!(grad_clip >= 0.0)) fail("train.grad_clip must be >= 0");
    if (batch_labeled == 0) fail("train.batch_labeled must be >= 1");
    if (!(proto.threshold >= 0.0 && proto.threshold < 1.0)) fail("proto.threshold must lie in [0, 1)");
    if (!(ramp.lambda_max_lds >= 0.0) || !(ramp.lambda_max_cs >= 0.0)) fail("ramp weights must be >= 0");
    if (!(data.labeled_fraction > 0.0 && data.labeled_fraction < 1.0))
        fail("data.labeled_fraction must lie in (0, 1)");
    if (data.kind != "blobs" && data.kind != "two-moons") fail("data.kind must be blobs or two-moons");
    if (!(data.gamma >= 0.0)) fail("data.gamma must be >= 0");
    if (infer.patch == 0 || infer.stride == 0) fail("infer.patch and infer.stride must be >= 1");
    adv.validate();
    net.validate();
}

double lr_schedule(std::size_t iter, const TrainConfig& cfg)
{
    return cfg.lr0 * std::pow(cfg.decay_factor, static_cast<double>(iter / cfg.decay_every));
}

Tensor standardize(const Tensor& image)
{
    if (image.rank() != 3) throw Error(ErrorCode::shape_mismatch, "standardize expects [C,H,W]");
    Tensor out(image.shape());
    const std::size_t plane = image.dim(1) * image.dim(2);
    for (std::size_t c = 0; c < image.dim(0); ++c) {
        const float* p = image.raw() + c * plane;
        double mean = 0.0;
        for (std::size_t i = 0; i < plane; ++i) mean += p[i];
        mean /= static_cast<double>(plane);
        double var = 0.0;
        for (std::size_t i = 0; i < plane; ++i) var += (p[i] - mean) * (p[i] - mean);
        const double sd = std::sqrt(var / static_cast<double>(plane));
        float* q = out.raw() + c * plane;
        if (sd < 1e-12) continue;
        for (std::size_t i = 0; i < plane; ++i) q[i] = static_cast<float>((p[i] - mean) / sd);
    }
    return out;
}

SgdState make_sgd_state(const ModelBundle& model)
{
    SgdState s;
    for (const auto& p : model.parameters()) s.velocity.emplace_back(p.shape());
    return s;
}

void sgd_update(ModelBundle& model, SgdState& state, std::span<const Tensor> grads, double lr, double momentum)
{
    auto params = model.parameters();
    if (grads.size() != params.size() || state.velocity.size() != params.size())
        throw Error(ErrorCode::shape_mismatch, "optimizer state does not match the model");
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor& p = params[i].mutable_value();
        Tensor& v = state.velocity[i];
        const Tensor& g = grads[i];
        if (g.shape() != p.shape()) throw Error(ErrorCode::shape_mismatch, "gradient shape for parameter " + std::to_string(i));
        for (std::size_t k = 0; k < p.size(); ++k) {
            v[k] = static_cast<float>(momentum * v[k] - lr * g[k]);
            p[k] += v[k];
        }
    }
}

namespace {

void clip_global_norm(std::vector<Tensor>& grads, double max_norm)
{
    double sq = 0.0;
    for (const auto& g : grads)
        for (float v : g.data()) sq += double(v) * v;
    const double norm = std::sqrt(sq);
    if (norm <= max_norm) return;
    const auto scale = static_cast<float>(max_norm / norm);
    for (auto& g : grads)
        for (float& v : g.data()) v *= scale;
}

std::size_t sites_per_sample(const Tensor& inputs)
{
    return inputs.rank() == 4 ? inputs.dim(2) * inputs.dim(3) : 1;
}

} // namespace

StepRecord train_step(ModelBundle& model, SgdState& state, const SemiBatch& batch, std::size_t iter,
                      const TrainConfig& cfg, Variant variant, CounterRng rng)
{
    const auto start = std::chrono::steady_clock::now();
    const std::size_t classes = model.config.classes;
    const std::size_t sites = sites_per_sample(batch.inputs);
    const std::size_t labeled_rows = batch.labeled * sites;
    if (batch.labeled == 0 || batch.labeled > batch.inputs.dim(0) || batch.labels.size() != labeled_rows)
        throw Error(ErrorCode::shape_mismatch, "batch holds " + std::to_string(batch.labels.size()) +
                                                   " labels for " + std::to_string(labeled_rows) + " labeled sites");
    StepRecord rec;
    rec.iter = iter;
    rec.lr = lr_schedule(iter, cfg);
    rec.lambda_lds = uses_lds(variant) ? rampup_weight(iter, cfg.ramp, LossTerm::lds) : 0.0;
    rec.lambda_cs = uses_cs(variant) ? rampup_weight(iter, cfg.ramp, LossTerm::cs) : 0.0;

    try {
        const Var x = constant(batch.inputs);
        const Forward fr = forward_rows(model, x);
        const Var probs = softmax(fr.logits, 1);
        const Var seg = discrepancy(slice(probs, 0, 0, labeled_rows), constant(one_hot(batch.labels, classes)),
                                    DiscrepancyKind::dice);

        Var lds = constant(Tensor::scalar(0.0f));
        if (uses_lds(variant)) {
            AdvConfig adv = cfg.adv;
            if (variant == Variant::seg_lds_kl) adv.kind = DiscrepancyKind::kl;
            const ProbabilityFn pf = probability_fn(model);
            CounterRng noise_rng = rng.split("noise");
            const AdversarialNoise noise = adversarial_noise(pf, batch.inputs, probs.value(), adv, noise_rng);
            rec.zero_gradient = noise.zero_gradient;
            lds = lds_loss(pf, probs, batch.inputs, noise.r_adv, adv.kind);
        }

        Var cs = constant(Tensor::scalar(0.0f));
        if (uses_cs(variant)) {
            const float slope = model.config.leaky_slope;
            const Tensor& pv = probs.value();
            // Only confident, correct labeled rows can become prototypes; projecting
            // just those leaves the selection unchanged.
            std::vector<std::size_t> cand;
            std::vector<int> cand_labels;
            for (std::size_t r = 0; r < labeled_rows; ++r) {
                const float* p = pv.raw() + r * classes;
                const auto best = static_cast<std::size_t>(std::max_element(p, p + classes) - p);
                if (p[best] > cfg.proto.threshold && static_cast<int>(best) == batch.labels[r]) {
                    cand.push_back(r);
                    cand_labels.push_back(batch.labels[r]);
                }
            }
            if (!cand.empty()) {
                const Var z = project_rows(model.projector_z, gather_rows(fr.features, cand), slope);
                const Tensor cand_probs = gather_rows(constant(pv), cand).value();
                PrototypeBank bank = select_prototypes(z, cand_labels, cand_probs, cfg.proto, model.attention_z);
                if (cfg.proto.detach)
                    for (auto& cp : bank.classes)
                        if (!cp.empty()) cp.vectors = stop_gradient(cp.vectors);

                CounterRng sub_rng = rng.split("subsample");
                const std::vector<std::size_t> rows = subsample_rows(pv.dim(0), cfg.feature_cap, sub_rng);
                const std::vector<int> predicted = argmax_rows(pv);
                std::vector<int> assign(rows.size());
                for (std::size_t i = 0; i < rows.size(); ++i)
                    assign[i] = rows[i] < labeled_rows ? batch.labels[rows[i]] : predicted[rows[i]];
                const Var f = project_rows(model.projector_f, gather_rows(fr.features, rows), slope);
                cs = cs_loss(bank, f, assign, model.attention_f, cfg.weighting);
            }
        }

        const Var total = total_loss(seg, lds, cs, rec.lambda_lds, rec.lambda_cs);
        const auto params = model.parameters();
        const auto grads = gradients(total, params);
        std::vector<Tensor> g;
        g.reserve(grads.size());
        for (const auto& gr : grads) g.push_back(gr.value);
        if (cfg.grad_clip > 0.0) clip_global_norm(g, cfg.grad_clip);
        sgd_update(model, state, g, rec.lr, cfg.momentum);

        rec.seg = seg.value().item();
        rec.lds = lds.value().item();
        rec.cs = cs.value().item();
    } catch (const Error& e) {
        if (e.code() == ErrorCode::non_finite_value)
            throw Error(ErrorCode::non_finite_value, "iteration " + std::to_string(iter) + ": " + e.what());
        throw;
    }
    rec.ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
    return rec;
}

namespace {

std::string num(double v)
{
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

} // namespace

void write_runlog_csv(std::ostream& os, const RunLog& log)
{
    os << "iter,seg,lds,cs,lambda_lds,lambda_cs,lr,ms\n";
    for (const auto& r : log.steps) {
        char ms[32];
        std::snprintf(ms, sizeof ms, "%.3f", r.ms);
        os << r.iter << ',' << num(r.seg) << ',' << num(r.lds) << ',' << num(r.cs) << ',' << num(r.lambda_lds) << ','
           << num(r.lambda_cs) << ',' << num(r.lr) << ',' << ms << '\n';
    }
}

// ------------------------------------------------------------------ inference

namespace {

std::vector<std::size_t> window_starts(std::size_t extent, std::size_t patch, std::size_t stride)
{
    std::vector<std::size_t> starts;
    for (std::size_t s = 0;; s += stride) {
        if (s + patch >= extent) {
            starts.push_back(extent - patch);
            break;
        }
        starts.push_back(s);
    }
    return starts;
}

} // namespace

Tensor sliding_window_inference(const PatchModel& model, const Tensor& image, std::size_t patch_h,
                                std::size_t patch_w, std::size_t stride_h, std::size_t stride_w)
{
    if (image.rank() != 3) throw Error(ErrorCode::shape_mismatch, "image must be [C,H,W], got " + shape_string(image.shape()));
    const std::size_t ch = image.dim(0), h = image.dim(1), w = image.dim(2);
    if (patch_h == 0 || patch_w == 0 || stride_h == 0 || stride_w == 0)
        throw Error(ErrorCode::invalid_argument, "patch and stride must be positive");
    if (patch_h > h || patch_w > w)
        throw Error(ErrorCode::patch_larger_than_image, "patch " + std::to_string(patch_h) + "x" +
                                                            std::to_string(patch_w) + " on image " +
                                                            shape_string(image.shape()));
    std::vector<double> acc;
    std::vector<std::uint32_t> cover(h * w, 0);
    std::size_t classes = 0;
    Tensor patch(Shape{1, ch, patch_h, patch_w});
    for (std::size_t y0 : window_starts(h, patch_h, stride_h)) {
        for (std::size_t x0 : window_starts(w, patch_w, stride_w)) {
            for (std::size_t c = 0; c < ch; ++c)
                for (std::size_t y = 0; y < patch_h; ++y)
                    std::copy_n(image.raw() + (c * h + y0 + y) * w + x0, patch_w,
                                patch.raw() + (c * patch_h + y) * patch_w);
            const Tensor out = model(patch);
            if (out.rank() != 4 || out.dim(0) != 1 || out.dim(2) != patch_h || out.dim(3) != patch_w)
                throw Error(ErrorCode::shape_mismatch, "patch model returned " + shape_string(out.shape()));
            if (classes == 0) {
                classes = out.dim(1);
                acc.assign(classes * h * w, 0.0);
            }
            for (std::size_t c = 0; c < classes; ++c)
                for (std::size_t y = 0; y < patch_h; ++y)
                    for (std::size_t x = 0; x < patch_w; ++x)
                        acc[(c * h + y0 + y) * w + x0 + x] += out[(c * patch_h + y) * patch_w + x];
            for (std::size_t y = 0; y < patch_h; ++y)
                for (std::size_t x = 0; x < patch_w; ++x) ++cover[(y0 + y) * w + x0 + x];
        }
    }
    Tensor result(Shape{classes, h, w});
    for (std::size_t c = 0; c < classes; ++c)
        for (std::size_t i = 0; i < h * w; ++i)
            result[c * h * w + i] = static_cast<float>(acc[c * h * w + i] / cover[i]);
    return result;
}

Tensor sliding_window_inference(const ModelBundle& model, const Tensor& image, const InferConfig& infer)
{
    const PatchModel fn = [&model](const Tensor& patch) {
        return softmax(forward(model, constant(patch)).logits, 1).value();
    };
    const std::size_t ph = std::min(infer.patch, image.rank() == 3 ? image.dim(1) : infer.patch);
    const std::size_t pw = std::min(infer.patch, image.rank() == 3 ? image.dim(2) : infer.patch);
    return sliding_window_inference(fn, image, ph, pw, infer.stride, infer.stride);
}

LabelMask argmax_mask(const Tensor& probs)
{
    if (probs.rank() != 3) throw Error(ErrorCode::shape_mismatch, "probabilities must be [C,H,W]");
    const std::size_t classes = probs.dim(0), plane = probs.dim(1) * probs.dim(2);
    LabelMask mask(Shape{probs.dim(1), probs.dim(2)});
    for (std::size_t i = 0; i < plane; ++i) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < classes; ++c)
            if (probs[c * plane + i] > probs[best * plane + i]) best = c;
        mask[i] = static_cast<std::uint8_t>(best);
    }
    return mask;
}

LabelMask predict_mask(const ModelBundle& model, const Tensor& image, const InferConfig& infer, bool lcc)
{
    LabelMask mask = argmax_mask(sliding_window_inference(model, standardize(image), infer));
    if (lcc)
        for (std::size_t c = 1; c < model.config.classes; ++c)
            mask = largest_connected_component(mask, static_cast<std::uint8_t>(c));
    return mask;
}

MetricsReport evaluate_model(const ModelBundle& model, const std::vector<SegSample>& samples,
                             const std::vector<std::string>& ids, const InferConfig& infer, bool lcc)
{
    if (ids.size() != samples.size()) throw Error(ErrorCode::invalid_argument, "one id per sample required");
    std::vector<SampleMetrics> per;
    per.reserve(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        LabelMask pred = predict_mask(model, samples[i].image, infer, lcc);
        pred.spacing = samples[i].mask.spacing;
        per.push_back(evaluate_sample(ids[i], pred, samples[i].mask, model.config.classes));
    }
    return summarize(std::move(per), model.config.classes);
}

// ------------------------------------------------------------------ experiments

namespace {

std::vector<std::string> numbered_ids(const std::string& prefix, std::size_t n)
{
    std::vector<std::string> ids;
    for (std::size_t i = 0; i < n; ++i) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%s%04zu", prefix.c_str(), i);
        ids.emplace_back(buf);
    }
    return ids;
}

// min(count, pool) distinct picks, with replacement beyond the pool size.
std::vector<std::size_t> pick(const std::vector<std::size_t>& pool, std::size_t count, CounterRng& rng)
{
    std::vector<std::size_t> out;
    if (pool.empty()) return out;
    std::vector<std::size_t> order(pool.size());
    std::iota(order.begin(), order.end(), 0);
    while (out.size() < count) {
        const std::size_t take = std::min(count - out.size(), pool.size());
        for (std::size_t i = 0; i < take; ++i) {
            const std::size_t j =
                i + std::min(pool.size() - i - 1, static_cast<std::size_t>(rng.uniform() * double(pool.size() - i)));
            std::swap(order[i], order[j]);
            out.push_back(pool[order[i]]);
        }
    }
    return out;
}

using BatchFn = std::function<SemiBatch(std::size_t iter, CounterRng rng)>;
using EvalFn = std::function<double(const ModelBundle&)>;

RunLog train_loop(ModelBundle& model, const TrainConfig& cfg, Variant variant, const BatchFn& make_batch,
                  const EvalFn& eval)
{
    set_deterministic(cfg.deterministic);
    SgdState state = make_sgd_state(model);
    RunLog log;
    const CounterRng root(cfg.seed);
    for (std::size_t iter = 0; iter < cfg.total_iters; ++iter) {
        const SemiBatch batch = make_batch(iter, root.split("data").split(iter));
        log.steps.push_back(train_step(model, state, batch, iter, cfg, variant, root.split("step").split(iter)));
        const bool last = iter + 1 == cfg.total_iters;
        if (eval && (last || (cfg.eval_every > 0 && (iter + 1) % cfg.eval_every == 0)))
            log.evals.push_back({iter + 1, eval(model)});
    }
    return log;
}

} // namespace

SegData generate_seg_data(const TrainConfig& cfg)
{
    BlobOptions opts;
    opts.height = opts.width = cfg.net.input_size;
    opts.classes = cfg.net.classes;
    opts.blur_sigma = cfg.data.blur_sigma;
    opts.contrast = cfg.data.contrast;
    opts.noise_scale = cfg.data.noise_scale;
    opts.intensity_jitter = cfg.data.intensity_jitter;
    SegData d;
    d.train = blob_dataset(cfg.data.n_train, opts, cfg.data.data_seed);
    d.train_ids = numbered_ids("train_", d.train.size());
    BlobOptions test_opts = opts;
    test_opts.height = test_opts.width = cfg.data.test_size;
    d.test = blob_dataset(cfg.data.n_test, test_opts, CounterRng(cfg.data.data_seed).split("test")());
    d.test_ids = numbered_ids("test_", d.test.size());
    return d;
}

RunResult run_experiment(const TrainConfig& cfg, Variant variant, const SegData& data)
{
    cfg.validate();
    if (cfg.net.arch == Arch::mlp) throw Error(ErrorCode::bad_config, "segmentation experiments need a conv net");
    if (data.train.empty()) throw Error(ErrorCode::invalid_argument, "empty training set");
    const SemiSplit split = split_semi(data.train.size(), cfg.data.labeled_fraction, cfg.seed);

    RunResult result;
    result.model = make_model(cfg.net, CounterRng(cfg.seed).split("init"));

    const BatchFn make_batch = [&](std::size_t, CounterRng rng) {
        CounterRng pick_rng = rng.split("pick");
        std::vector<std::size_t> chosen = pick(split.labeled, cfg.batch_labeled, pick_rng);
        const std::vector<std::size_t> unl = pick(split.unlabeled, cfg.batch_unlabeled, pick_rng);
        chosen.insert(chosen.end(), unl.begin(), unl.end());

        const Shape& s0 = data.train[chosen[0]].image.shape();
        const std::size_t plane = s0[0] * s0[1] * s0[2];
        SemiBatch b;
        b.labeled = cfg.batch_labeled;
        b.inputs = Tensor(Shape{chosen.size(), s0[0], s0[1], s0[2]});
        CounterRng aug_rng = rng.split("aug");
        for (std::size_t i = 0; i < chosen.size(); ++i) {
            const SegSample& src = data.train[chosen[i]];
            if (src.image.shape() != s0) throw Error(ErrorCode::shape_mismatch, "training images differ in size");
            const SegSample s = cfg.augment ? augment(src, aug_rng.split(i)()) : src;
            const Tensor z = standardize(s.image);
            std::copy_n(z.raw(), plane, b.inputs.raw() + i * plane);
            if (i < b.labeled)
                for (std::uint8_t v : s.mask.labels) b.labels.push_back(v);
        }
        return b;
    };
    const EvalFn eval = [&](const ModelBundle& m) {
        return data.test.empty() ? 0.0 : evaluate_model(m, data.test, data.test_ids, cfg.infer, false).mean_dice();
    };
    result.log = train_loop(result.model, cfg, variant, make_batch, eval);
    if (!data.test.empty()) result.test = evaluate_model(result.model, data.test, data.test_ids, cfg.infer, false);
    result.train_dice = evaluate_model(result.model, data.train, data.train_ids, cfg.infer, false).mean_dice();
    return result;
}

MoonData generate_moon_data(const TrainConfig& cfg)
{
    return {two_moons(cfg.data.n_train, cfg.data.gamma, cfg.data.data_seed),
            two_moons(cfg.data.n_test, cfg.data.gamma, CounterRng(cfg.data.data_seed).split("test")())};
}

std::size_t moon_labeled_count(const TrainConfig& cfg, std::size_t n)
{
    const auto k = static_cast<std::size_t>(std::llround(cfg.data.labeled_fraction * static_cast<double>(n)));
    return std::max<std::size_t>(2, k);
}

std::vector<std::size_t> moon_labeled_subset(std::span<const int> labels, std::size_t count, std::uint64_t seed)
{
    CounterRng rng = CounterRng(seed).split("moon_split");
    std::vector<std::size_t> by_class[2];
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != 0 && labels[i] != 1) throw Error(ErrorCode::invalid_argument, "moon labels must be 0 or 1");
        by_class[labels[i]].push_back(i);
    }
    const std::size_t per[2] = {(count + 1) / 2, count / 2};
    std::vector<std::size_t> out;
    for (int c = 0; c < 2; ++c) {
        if (per[c] > by_class[c].size()) throw Error(ErrorCode::degenerate_split, "not enough points of class " + std::to_string(c));
        const auto chosen = pick(by_class[c], per[c], rng);
        out.insert(out.end(), chosen.begin(), chosen.end());
    }
    std::sort(out.begin(), out.end());
    return out;
}

MoonResult run_moon_experiment(const TrainConfig& cfg, Variant variant, const MoonSet& train, const MoonSet& test,
                               std::size_t labeled_count)
{
    cfg.validate();
    if (cfg.net.arch != Arch::mlp || cfg.net.in_channels != 2)
        throw Error(ErrorCode::bad_config, "two-moon experiments need an MLP over 2-D points");
    const std::size_t n = train.labels.size();
    if (labeled_count < 2 || labeled_count >= n) throw Error(ErrorCode::degenerate_split, "labeled_count");

    MoonResult result;
    result.labeled = moon_labeled_subset(train.labels, labeled_count, cfg.seed);
    std::vector<std::size_t> unlabeled;
    for (std::size_t i = 0; i < n; ++i)
        if (!std::binary_search(result.labeled.begin(), result.labeled.end(), i)) unlabeled.push_back(i);

    result.model = make_model(cfg.net, CounterRng(cfg.seed).split("init"));
    const BatchFn make_batch = [&](std::size_t, CounterRng rng) {
        CounterRng pick_rng = rng.split("pick");
        std::vector<std::size_t> chosen = pick(result.labeled, cfg.batch_labeled, pick_rng);
        const std::vector<std::size_t> unl = pick(unlabeled, cfg.batch_unlabeled, pick_rng);
        chosen.insert(chosen.end(), unl.begin(), unl.end());
        SemiBatch b;
        b.labeled = cfg.batch_labeled;
        b.inputs = Tensor(Shape{chosen.size(), 2});
        for (std::size_t i = 0; i < chosen.size(); ++i) {
            b.inputs[2 * i] = train.points[2 * chosen[i]];
            b.inputs[2 * i + 1] = train.points[2 * chosen[i] + 1];
            if (i < b.labeled) b.labels.push_back(train.labels[chosen[i]]);
        }
        return b;
    };
    const EvalFn eval = [&](const ModelBundle& m) {
        const std::vector<int> pred = argmax_rows(forward(m, constant(test.points)).logits.value());
        std::size_t hit = 0;
        for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == test.labels[i];
        return static_cast<double>(hit) / static_cast<double>(pred.size());
    };
    result.log = train_loop(result.model, cfg, variant, make_batch, eval);
    result.accuracy = eval(result.model);
    return result;
}

// ------------------------------------------------------------------ checkpoints

void save_checkpoint(const std::filesystem::path& dir, const ModelBundle& model, const TrainConfig& cfg)
{
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw Error(ErrorCode::io_failure, "cannot create " + dir.string() + ": " + ec.message());
    std::ofstream manifest(dir / "manifest.txt");
    if (!manifest) throw Error(ErrorCode::io_failure, "cannot write " + (dir / "manifest.txt").string());
    for (const auto& [name, v] : model.named_parameters()) {
        const std::string file = name + ".ssnt";
        write_container(dir / file, v.value());
        std::string shape;
        for (std::size_t i = 0; i < v.shape().size(); ++i) shape += (i ? "x" : "") + std::to_string(v.shape()[i]);
        manifest << name << ' ' << file << ' ' << (shape.empty() ? "scalar" : shape) << '\n';
    }
    TrainConfig stored = cfg;
    stored.net = model.config;
    std::ofstream config(dir / "config.cfg");
    if (!config) throw Error(ErrorCode::io_failure, "cannot write " + (dir / "config.cfg").string());
    dump_config(config, stored);
    if (!manifest || !config) throw Error(ErrorCode::io_failure, "write failed in " + dir.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& dir)
{
    Checkpoint ck;
    ck.config = load_config(dir / "config.cfg");
    ck.model = make_model(ck.config.net, CounterRng(0));
    std::ifstream manifest(dir / "manifest.txt");
    if (!manifest) throw Error(ErrorCode::io_failure, "cannot open " + (dir / "manifest.txt").string());
    auto params = ck.model.named_parameters();
    std::vector<bool> loaded(params.size(), false);
    std::string line;
    while (std::getline(manifest, line)) {
        if (line.empty()) continue;
        std::istringstream ls(line);
        std::string name, file, shape;
        if (!(ls >> name >> file >> shape)) throw Error(ErrorCode::io_failure, "malformed manifest line: " + line);
        const auto it = std::find_if(params.begin(), params.end(), [&](const auto& p) { return p.first == name; });
        if (it == params.end()) throw Error(ErrorCode::shape_mismatch, "checkpoint parameter '" + name + "' not in model");
        Tensor t = read_float_container(dir / file);
        if (t.shape() != it->second.shape())
            throw Error(ErrorCode::shape_mismatch, name + ": stored " + shape_string(t.shape()) + " vs model " +
                                                       shape_string(it->second.shape()));
        it->second.mutable_value() = std::move(t);
        loaded[static_cast<std::size_t>(it - params.begin())] = true;
    }
    for (std::size_t i = 0; i < params.size(); ++i)
        if (!loaded[i]) throw Error(ErrorCode::io_failure, "checkpoint lacks parameter '" + params[i].first + "'");
    return ck;
}

} // namespace ssnet
