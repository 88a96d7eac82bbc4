#include "ssnet/nets.hpp"

#include <cmath>
#include <random>

#include "ssnet/error.hpp"

namespace ssnet {

std::string_view arch_name(Arch arch)
{
    switch (arch) {
    case Arch::mlp: return "mlp";
    case Arch::unet: return "unet";
    case Arch::conv_only: return "conv_only";
    }
    return "unknown";
}

Arch parse_arch(std::string_view name)
{
    if (name == "mlp") return Arch::mlp;
    if (name == "unet") return Arch::unet;
    if (name == "conv_only") return Arch::conv_only;
    throw Error(ErrorCode::invalid_argument, "unknown architecture '" + std::string(name) + "'");
}

void NetConfig::validate() const
{
    auto fail = [](const std::string& what) { throw Error(ErrorCode::invalid_argument, "net config: " + what); };
    if (classes < 2) fail("classes must be >= 2");
    if (d_proj < 2) fail("d_proj must be >= 2");
    if (in_channels == 0) fail("in_channels must be positive");
    if (arch == Arch::mlp) {
        if (hidden == 0) fail("hidden must be positive");
        return;
    }
    if (c1 == 0 || (arch == Arch::unet && c2 == 0)) fail("stage widths must be positive");
    if (kernel % 2 == 0) fail("kernel must be odd");
    if (input_size == 0 || input_size % downsample_factor() != 0)
        fail("input_size must be divisible by " + std::to_string(downsample_factor()));
}

std::size_t NetConfig::feature_width() const { return arch == Arch::mlp ? hidden : c1; }

std::size_t NetConfig::downsample_factor() const { return arch == Arch::unet ? 2 : 1; }

namespace {

Tensor he_normal(Shape shape, std::size_t fan_in, CounterRng& rng)
{
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
    Tensor t(std::move(shape));
    for (auto& v : t.data()) v = static_cast<float>(normal(rng));
    return t;
}

Linear make_linear(std::size_t in, std::size_t out, CounterRng rng)
{
    return {parameter(he_normal({out, in}, in, rng)), parameter(Tensor({out}))};
}

Conv make_conv(std::size_t in, std::size_t out, std::size_t k, CounterRng rng)
{
    return {parameter(he_normal({out, in, k, k}, in * k * k, rng)), parameter(Tensor({out}))};
}

Projector make_projector(std::size_t in, std::size_t width, CounterRng rng)
{
    return {make_linear(in, width, rng.split("first")), make_linear(width, width, rng.split("second"))};
}

void add_linear(std::vector<std::pair<std::string, Var>>& out, const std::string& name, const Linear& l)
{
    out.emplace_back(name + ".weight", l.weight);
    out.emplace_back(name + ".bias", l.bias);
}

Var conv_layer(const Conv& c, const Var& x)
{
    const std::size_t pad = c.weight.shape()[2] / 2;
    return conv2d(x, c.weight, c.bias, 1, pad);
}

Var classifier_map(const ModelBundle& m, const Var& features)
{
    const Shape& ws = m.classifier.weight.shape();
    const Var w = reshape(m.classifier.weight, {ws[0], ws[1], 1, 1});
    return conv2d(features, w, m.classifier.bias, 1, 0);
}

} // namespace

ModelBundle make_model(const NetConfig& config, CounterRng rng)
{
    config.validate();
    ModelBundle m;
    m.config = config;
    const std::size_t feat = config.feature_width();
    if (config.arch == Arch::mlp) {
        std::size_t in = config.in_channels;
        for (std::size_t i = 0; i < 3; ++i) {
            m.mlp_layers.push_back(make_linear(in, config.hidden, rng.split("mlp").split(i)));
            in = config.hidden;
        }
    } else {
        const std::size_t k = config.kernel;
        auto conv_rng = rng.split("conv");
        const std::size_t c1 = config.c1, c2 = config.c2;
        if (config.arch == Arch::unet) {
            m.convs.push_back(make_conv(config.in_channels, c1, k, conv_rng.split(0)));
            m.convs.push_back(make_conv(c1, c1, k, conv_rng.split(1)));
            m.convs.push_back(make_conv(c1, c2, k, conv_rng.split(2)));
            m.convs.push_back(make_conv(c2, c2, k, conv_rng.split(3)));
            m.convs.push_back(make_conv(c1 + c2, c1, k, conv_rng.split(4)));
            m.convs.push_back(make_conv(c1, c1, k, conv_rng.split(5)));
        } else {
            m.convs.push_back(make_conv(config.in_channels, c1, k, conv_rng.split(0)));
            m.convs.push_back(make_conv(c1, c1, k, conv_rng.split(1)));
        }
    }
    m.classifier = make_linear(feat, config.classes, rng.split("classifier"));
    m.projector_z = make_projector(feat, config.d_proj, rng.split("projector_z"));
    m.projector_f = make_projector(feat, config.d_proj, rng.split("projector_f"));
    for (std::size_t c = 0; c < config.classes; ++c) {
        m.attention_z.push_back({make_linear(config.d_proj, 1, rng.split("attention_z").split(c))});
        m.attention_f.push_back({make_linear(config.d_proj, 1, rng.split("attention_f").split(c))});
    }
    return m;
}

std::vector<std::pair<std::string, Var>> ModelBundle::named_parameters() const
{
    std::vector<std::pair<std::string, Var>> out;
    for (std::size_t i = 0; i < mlp_layers.size(); ++i) add_linear(out, "mlp" + std::to_string(i), mlp_layers[i]);
    for (std::size_t i = 0; i < convs.size(); ++i) {
        out.emplace_back("conv" + std::to_string(i) + ".weight", convs[i].weight);
        out.emplace_back("conv" + std::to_string(i) + ".bias", convs[i].bias);
    }
    add_linear(out, "classifier", classifier);
    add_linear(out, "projector_z.first", projector_z.first);
    add_linear(out, "projector_z.second", projector_z.second);
    add_linear(out, "projector_f.first", projector_f.first);
    add_linear(out, "projector_f.second", projector_f.second);
    for (std::size_t c = 0; c < attention_z.size(); ++c) add_linear(out, "attention_z" + std::to_string(c), attention_z[c].score);
    for (std::size_t c = 0; c < attention_f.size(); ++c) add_linear(out, "attention_f" + std::to_string(c), attention_f[c].score);
    return out;
}

std::vector<Var> ModelBundle::parameters() const
{
    std::vector<Var> out;
    for (auto& [name, v] : named_parameters()) out.push_back(v);
    return out;
}

std::size_t ModelBundle::parameter_count() const
{
    std::size_t n = 0;
    for (auto& [name, v] : named_parameters()) n += v.size();
    return n;
}

Var linear(const Var& rows, const Linear& layer)
{
    return add_bias(matmul(rows, layer.weight, false, true), layer.bias, 1);
}

Forward mlp_forward(const ModelBundle& model, const Var& points)
{
    const NetConfig& cfg = model.config;
    if (cfg.arch != Arch::mlp) throw Error(ErrorCode::invalid_argument, "mlp_forward on a conv model");
    if (points.shape().size() != 2 || points.shape()[1] != cfg.in_channels)
        throw Error(ErrorCode::shape_mismatch, "mlp input " + shape_string(points.shape()) + ", expected [B," +
                                                   std::to_string(cfg.in_channels) + "]");
    Var h = points;
    for (const auto& layer : model.mlp_layers) h = leaky_relu(linear(h, layer), cfg.leaky_slope);
    return {linear(h, model.classifier), h};
}

Forward segnet_forward(const ModelBundle& model, const Var& images)
{
    const NetConfig& cfg = model.config;
    if (cfg.arch == Arch::mlp) throw Error(ErrorCode::invalid_argument, "segnet_forward on an MLP model");
    const Shape& s = images.shape();
    if (s.size() != 4 || s[1] != cfg.in_channels)
        throw Error(ErrorCode::shape_mismatch, "segnet input " + shape_string(s) + ", expected [B," +
                                                   std::to_string(cfg.in_channels) + ",H,W]");
    const std::size_t f = cfg.downsample_factor();
    if (s[2] % f || s[3] % f)
        throw Error(ErrorCode::indivisible_spatial_dims,
                    "spatial dims " + shape_string(s) + " not divisible by " + std::to_string(f));
    const float slope = cfg.leaky_slope;
    auto act = [slope](const Var& v) { return leaky_relu(v, slope); };
    const auto& c = model.convs;
    Var features;
    if (cfg.arch == Arch::unet) {
        const Var e1 = act(conv_layer(c[1], act(conv_layer(c[0], images))));
        const Var e2 = act(conv_layer(c[3], act(conv_layer(c[2], avg_pool2(e1)))));
        const Var merged[] = {e1, upsample2(e2)};
        features = act(conv_layer(c[5], act(conv_layer(c[4], concat(merged, 1)))));
    } else {
        features = act(conv_layer(c[1], act(conv_layer(c[0], images))));
    }
    return {classifier_map(model, features), features};
}

Forward forward(const ModelBundle& model, const Var& inputs)
{
    return model.config.arch == Arch::mlp ? mlp_forward(model, inputs) : segnet_forward(model, inputs);
}

Forward forward_rows(const ModelBundle& model, const Var& inputs)
{
    Forward f = forward(model, inputs);
    if (model.config.arch == Arch::mlp) return f;
    return {to_rows(f.logits), to_rows(f.features)};
}

Var project_rows(const Projector& projector, const Var& rows, float slope)
{
    return linear(leaky_relu(linear(rows, projector.first), slope), projector.second);
}

Var project_features(const Projector& projector, const Var& deep_features, float slope)
{
    if (deep_features.shape().size() != 4)
        throw Error(ErrorCode::shape_mismatch, "project_features expects [B,d,H,W], got " +
                                                   shape_string(deep_features.shape()));
    if (deep_features.shape()[1] != projector.first.weight.shape()[1])
        throw Error(ErrorCode::shape_mismatch, "projector input width " +
                                                   std::to_string(projector.first.weight.shape()[1]) + " vs features " +
                                                   shape_string(deep_features.shape()));
    return project_rows(projector, to_rows(deep_features), slope);
}

Var attention_scores(const AttentionHead& head, const Var& features)
{
    const Shape& s = features.shape();
    if (s.size() != 2 || s[1] != head.score.weight.shape()[1])
        throw Error(ErrorCode::shape_mismatch, "attention input " + shape_string(s));
    const Var floor = constant(Tensor::scalar(attention_floor));
    return reshape(softplus(linear(features, head.score)) + floor, {s[0]});
}

Var probabilities(const ModelBundle& model, const Var& inputs)
{
    return softmax(forward_rows(model, inputs).logits, 1);
}

} // namespace ssnet
