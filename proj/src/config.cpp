#include "ssnet/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

#include "ssnet/error.hpp"

namespace ssnet {

namespace {

[[noreturn]] void bad(const std::string& key, const std::string& what)
{
    throw Error(ErrorCode::bad_config, key + ": " + what);
}

std::string fmt(double v)
{
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::string fmt(float v)
{
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::string fmt(std::uint64_t v) { return std::to_string(v); }
std::string fmt(bool v) { return v ? "true" : "false"; }

double parse_double(const std::string& key, const std::string& s)
{
    double v = 0.0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) bad(key, "expected a number, got '" + s + "'");
    return v;
}

std::uint64_t parse_uint(const std::string& key, const std::string& s)
{
    std::uint64_t v = 0;
    const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size())
        bad(key, "expected a nonnegative integer, got '" + s + "'");
    return v;
}

bool parse_bool(const std::string& key, const std::string& s)
{
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    bad(key, "expected true or false, got '" + s + "'");
}

struct Field {
    const char* name;
    const char* help;
    std::function<std::string(const TrainConfig&)> get;
    std::function<void(TrainConfig&, const std::string& key, const std::string&)> set;
};

template <typename T>
Field size_field(const char* name, const char* help, T TrainConfig::*outer, std::size_t T::*member)
{
    return {name, help, [=](const TrainConfig& c) { return fmt(std::uint64_t((c.*outer).*member)); },
            [=](TrainConfig& c, const std::string& k, const std::string& v) {
                (c.*outer).*member = static_cast<std::size_t>(parse_uint(k, v));
            }};
}

template <typename T, typename V>
Field double_field(const char* name, const char* help, T TrainConfig::*outer, V T::*member)
{
    return {name, help, [=](const TrainConfig& c) { return fmt((c.*outer).*member); },
            [=](TrainConfig& c, const std::string& k, const std::string& v) {
                (c.*outer).*member = static_cast<V>(parse_double(k, v));
            }};
}

Field top_size(const char* name, const char* help, std::size_t TrainConfig::*member)
{
    return {name, help, [=](const TrainConfig& c) { return fmt(std::uint64_t(c.*member)); },
            [=](TrainConfig& c, const std::string& k, const std::string& v) {
                c.*member = static_cast<std::size_t>(parse_uint(k, v));
            }};
}

Field top_double(const char* name, const char* help, double TrainConfig::*member)
{
    return {name, help, [=](const TrainConfig& c) { return fmt(c.*member); },
            [=](TrainConfig& c, const std::string& k, const std::string& v) { c.*member = parse_double(k, v); }};
}

Field top_bool(const char* name, const char* help, bool TrainConfig::*member)
{
    return {name, help, [=](const TrainConfig& c) { return fmt(c.*member); },
            [=](TrainConfig& c, const std::string& k, const std::string& v) { c.*member = parse_bool(k, v); }};
}

template <typename T>
Field string_field(const char* name, const char* help, T TrainConfig::*outer, std::string T::*member)
{
    return {name, help, [=](const TrainConfig& c) { return (c.*outer).*member; },
            [=](TrainConfig& c, const std::string&, const std::string& v) { (c.*outer).*member = v; }};
}

template <typename Parse>
auto checked(Parse parse)
{
    return [parse](const std::string& k, const std::string& v) {
        try {
            return parse(v);
        } catch (const Error& e) {
            bad(k, e.what());
        }
    };
}

const std::vector<Field>& fields()
{
    static const std::vector<Field> table = [] {
        std::vector<Field> t;
        t.push_back(top_size("train.total_iters", "optimization steps", &TrainConfig::total_iters));
        t.push_back(top_double("train.lr0", "initial learning rate", &TrainConfig::lr0));
        t.push_back(top_double("train.decay_factor", "step decay multiplier", &TrainConfig::decay_factor));
        t.push_back(top_size("train.decay_every", "iterations per decay step", &TrainConfig::decay_every));
        t.push_back(top_double("train.momentum", "SGD momentum", &TrainConfig::momentum));
        t.push_back(top_double("train.grad_clip", "max global gradient l2 norm (0 = off)", &TrainConfig::grad_clip));
        t.push_back(top_size("train.batch_labeled", "labeled samples per batch", &TrainConfig::batch_labeled));
        t.push_back(top_size("train.batch_unlabeled", "unlabeled samples per batch", &TrainConfig::batch_unlabeled));
        t.push_back({"train.seed", "seed for init, split, data order and noise",
                     [](const TrainConfig& c) { return fmt(c.seed); },
                     [](TrainConfig& c, const std::string& k, const std::string& v) { c.seed = parse_uint(k, v); }});
        t.push_back(top_size("train.eval_every", "iterations between test evaluations (0 = end only)",
                             &TrainConfig::eval_every));
        t.push_back(top_size("train.feature_cap", "rows entering the prototype loss per step (0 = all)",
                             &TrainConfig::feature_cap));
        t.push_back(top_bool("train.deterministic", "serial kernels and fixed reduction order",
                             &TrainConfig::deterministic));
        t.push_back(top_bool("train.augment", "random rotation/flip of training samples", &TrainConfig::augment));

        t.push_back(double_field("adv.epsilon", "adversarial noise norm per sample", &TrainConfig::adv,
                                 &AdvConfig::epsilon));
        t.push_back(double_field("adv.xi", "initial random noise norm per sample", &TrainConfig::adv, &AdvConfig::xi));
        t.push_back({"adv.discrepancy", "dice | kl",
                     [](const TrainConfig& c) { return std::string(discrepancy_name(c.adv.kind)); },
                     [](TrainConfig& c, const std::string& k, const std::string& v) {
                         c.adv.kind = checked([](const std::string& s) { return parse_discrepancy(s); })(k, v);
                     }});

        t.push_back(double_field("ramp.lambda_max_lds", "maximum smoothness weight", &TrainConfig::ramp,
                                 &RampUp::lambda_max_lds));
        t.push_back(double_field("ramp.lambda_max_cs", "maximum class-separation weight", &TrainConfig::ramp,
                                 &RampUp::lambda_max_cs));
        t.push_back(size_field("ramp.t_ramp", "iterations until the weights reach their maxima", &TrainConfig::ramp,
                               &RampUp::t_ramp));

        t.push_back(size_field("proto.k", "prototypes per class", &TrainConfig::proto, &ProtoConfig::k));
        t.push_back(double_field("proto.threshold", "confidence threshold for prototype candidates",
                                 &TrainConfig::proto, &ProtoConfig::threshold));
        t.push_back({"proto.detach", "prototype vectors are constants in the cosine term",
                     [](const TrainConfig& c) { return fmt(c.proto.detach); },
                     [](TrainConfig& c, const std::string& k, const std::string& v) {
                         c.proto.detach = parse_bool(k, v);
                     }});
        t.push_back({"proto.weighting", "sum | mean scaling of attention weights",
                     [](const TrainConfig& c) { return std::string(weight_scaling_name(c.weighting)); },
                     [](TrainConfig& c, const std::string& k, const std::string& v) {
                         c.weighting = checked([](const std::string& s) { return parse_weight_scaling(s); })(k, v);
                     }});

        t.push_back({"net.arch", "mlp | unet | conv_only",
                     [](const TrainConfig& c) { return std::string(arch_name(c.net.arch)); },
                     [](TrainConfig& c, const std::string& k, const std::string& v) {
                         c.net.arch = checked([](const std::string& s) { return parse_arch(s); })(k, v);
                     }});
        t.push_back(size_field("net.classes", "number of classes including background", &TrainConfig::net,
                               &NetConfig::classes));
        t.push_back(size_field("net.d_proj", "projected feature width", &TrainConfig::net, &NetConfig::d_proj));
        t.push_back(size_field("net.in_channels", "image channels or point dimension", &TrainConfig::net,
                               &NetConfig::in_channels));
        t.push_back(size_field("net.c1", "first stage width", &TrainConfig::net, &NetConfig::c1));
        t.push_back(size_field("net.c2", "second stage width", &TrainConfig::net, &NetConfig::c2));
        t.push_back(size_field("net.hidden", "MLP width", &TrainConfig::net, &NetConfig::hidden));
        t.push_back(size_field("net.kernel", "odd convolution kernel size", &TrainConfig::net, &NetConfig::kernel));
        t.push_back(size_field("net.input_size", "training image side", &TrainConfig::net, &NetConfig::input_size));
        t.push_back(double_field("net.leaky_slope", "negative slope of leaky ReLU", &TrainConfig::net,
                                 &NetConfig::leaky_slope));

        t.push_back(string_field("data.kind", "blobs | two-moons", &TrainConfig::data, &DataConfig::kind));
        t.push_back(string_field("data.train_dir", "training corpus directory (empty = generate)",
                                 &TrainConfig::data, &DataConfig::train_dir));
        t.push_back(string_field("data.test_dir", "test corpus directory (empty = generate)", &TrainConfig::data,
                                 &DataConfig::test_dir));
        t.push_back(double_field("data.labeled_fraction", "fraction of training samples with labels",
                                 &TrainConfig::data, &DataConfig::labeled_fraction));
        t.push_back(size_field("data.n_train", "generated training samples", &TrainConfig::data, &DataConfig::n_train));
        t.push_back(size_field("data.n_test", "generated test samples", &TrainConfig::data, &DataConfig::n_test));
        t.push_back(size_field("data.test_size", "generated test image side", &TrainConfig::data,
                               &DataConfig::test_size));
        t.push_back(double_field("data.blur_sigma", "blob edge blur", &TrainConfig::data, &DataConfig::blur_sigma));
        t.push_back(double_field("data.contrast", "blob contrast in (0,1]", &TrainConfig::data,
                                 &DataConfig::contrast));
        t.push_back(double_field("data.noise_scale", "noise level at zero contrast", &TrainConfig::data,
                                 &DataConfig::noise_scale));
        t.push_back(double_field("data.intensity_jitter", "per-sample intensity shift at zero contrast",
                                 &TrainConfig::data, &DataConfig::intensity_jitter));
        t.push_back(double_field("data.gamma", "two-moon noise standard deviation", &TrainConfig::data,
                                 &DataConfig::gamma));
        t.push_back({"data.seed", "seed of the generated corpus",
                     [](const TrainConfig& c) { return fmt(c.data.data_seed); },
                     [](TrainConfig& c, const std::string& k, const std::string& v) {
                         c.data.data_seed = parse_uint(k, v);
                     }});

        t.push_back(size_field("infer.patch", "sliding-window side", &TrainConfig::infer, &InferConfig::patch));
        t.push_back(size_field("infer.stride", "sliding-window stride", &TrainConfig::infer, &InferConfig::stride));
        return t;
    }();
    return table;
}

const Field& find_field(const std::string& key)
{
    for (const auto& f : fields())
        if (key == f.name) return f;
    throw Error(ErrorCode::bad_config, "unknown key '" + key + "'");
}

std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

} // namespace

std::vector<ConfigKey> config_keys()
{
    std::vector<ConfigKey> out;
    for (const auto& f : fields()) out.push_back({f.name, f.help});
    return out;
}

void set_config_value(TrainConfig& cfg, const std::string& key, const std::string& value)
{
    find_field(key).set(cfg, key, value);
}

std::string get_config_value(const TrainConfig& cfg, const std::string& key) { return find_field(key).get(cfg); }

TrainConfig parse_config(std::istream& is)
{
    TrainConfig cfg;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw Error(ErrorCode::bad_config, "line " + std::to_string(line_no) + ": expected 'key = value'");
        set_config_value(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    try {
        cfg.validate();
    } catch (const Error& e) {
        if (e.code() == ErrorCode::bad_config) throw;
        throw Error(ErrorCode::bad_config, e.what());
    }
    return cfg;
}

TrainConfig load_config(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::io_failure, "cannot open config " + path.string());
    return parse_config(in);
}

void dump_config(std::ostream& os, const TrainConfig& cfg)
{
    for (const auto& f : fields()) os << f.name << " = " << f.get(cfg) << '\n';
}

std::string dump_config(const TrainConfig& cfg)
{
    std::ostringstream os;
    dump_config(os, cfg);
    return os.str();
}

} // namespace ssnet
