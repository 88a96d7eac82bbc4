// ssnet: generate data, train, evaluate and export embeddings.
//
// Exit codes: 0 success, 2 usage or configuration, 3 I/O, 4 non-finite
// training abort, 5 shape incompatibility. Failures print one line
// "error[<Code>]: <detail>" on stderr.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ssnet/config.hpp"
#include "ssnet/dataset_io.hpp"
#include "ssnet/embed.hpp"
#include "ssnet/error.hpp"
#include "ssnet/trainer.hpp"

namespace fs = std::filesystem;
using namespace ssnet;

namespace {

int exit_code(ErrorCode code)
{
    switch (code) {
    case ErrorCode::io_failure: return 3;
    case ErrorCode::non_finite_value: return 4;
    case ErrorCode::shape_mismatch:
    case ErrorCode::indivisible_spatial_dims:
    case ErrorCode::patch_larger_than_image:
    case ErrorCode::non_square_input: return 5;
    default: return 2;
    }
}

int report(std::string_view code, std::string_view detail, int status)
{
    std::cerr << "error[" << code << "]: " << detail << '\n';
    return status;
}

int report(const Error& e)
{
    // what() is "<Code>: <detail>"; the code moves into the bracket.
    std::string_view what = e.what();
    const std::string_view name = error_code_name(e.code());
    if (what.starts_with(name) && what.substr(name.size()).starts_with(": ")) what.remove_prefix(name.size() + 2);
    return report(name, what, exit_code(e.code()));
}

std::ofstream open_out(const fs::path& path)
{
    if (path.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(path.parent_path(), ec);
        if (ec) throw Error(ErrorCode::io_failure, "cannot create " + path.parent_path().string());
    }
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::io_failure, "cannot write " + path.string());
    return out;
}

void close_out(std::ofstream& out, const fs::path& path)
{
    out.close();
    if (!out) throw Error(ErrorCode::io_failure, "write failed: " + path.string());
}

void write_accuracy_csv(const fs::path& path, double accuracy)
{
    auto out = open_out(path);
    out << "metric,value\naccuracy," << accuracy << '\n';
    close_out(out, path);
}

double moon_accuracy(const ModelBundle& model, const MoonSet& set)
{
    if (set.labels.empty()) return 0.0;
    const std::vector<int> pred = argmax_rows(forward(model, constant(set.points)).logits.value());
    std::size_t hit = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == set.labels[i];
    return static_cast<double>(hit) / static_cast<double>(pred.size());
}

// ------------------------------------------------------------------ gen-data

struct GenArgs {
    std::string kind = "blobs";
    std::size_t n = DataConfig{}.n_train;
    double gamma = DataConfig{}.gamma;
    double blur = DataConfig{}.blur_sigma;
    double contrast = DataConfig{}.contrast;
    double noise = DataConfig{}.noise_scale;
    double jitter = DataConfig{}.intensity_jitter;
    std::size_t size = NetConfig{}.input_size;
    std::size_t classes = NetConfig{}.classes;
    std::uint64_t seed = 1;
    std::string out;
};

int cmd_gen_data(const GenArgs& a)
{
    if (a.kind == "two-moons") {
        write_moon_corpus(a.out, two_moons(a.n, a.gamma, a.seed));
        std::cout << "wrote " << a.n << " two-moon points to " << a.out << '\n';
        return 0;
    }
    BlobOptions opts;
    opts.height = opts.width = a.size;
    opts.classes = a.classes;
    opts.blur_sigma = a.blur;
    opts.contrast = a.contrast;
    opts.noise_scale = a.noise;
    opts.intensity_jitter = a.jitter;
    SegCorpus corpus;
    corpus.samples = blob_dataset(a.n, opts, a.seed);
    for (std::size_t i = 0; i < a.n; ++i) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "sample_%04zu", i);
        corpus.ids.emplace_back(buf);
    }
    write_seg_corpus(a.out, corpus);
    std::cout << "wrote " << a.n << " image/mask pairs to " << a.out << '\n';
    return 0;
}

// ------------------------------------------------------------------ train

struct TrainArgs {
    std::string config;
    std::string variant = "full";
    std::string out;
    std::vector<std::string> set;
    bool dump = false;
};

TrainConfig resolve_config(const TrainArgs& a)
{
    TrainConfig cfg;
    if (!a.config.empty()) cfg = load_config(a.config);
    for (const auto& kv : a.set) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw Error(ErrorCode::bad_config, "--set expects key=value, got '" + kv + "'");
        set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
    }
    try {
        cfg.validate();
    } catch (const Error& e) {
        if (e.code() == ErrorCode::bad_config) throw;
        throw Error(ErrorCode::bad_config, e.what());
    }
    return cfg;
}

int cmd_train(const TrainArgs& a)
{
    const TrainConfig cfg = resolve_config(a);
    if (a.dump) {
        dump_config(std::cout, cfg);
        return 0;
    }
    if (a.out.empty()) return report("Usage", "--out is required", 2);
    const Variant variant = [&] {
        try {
            return parse_variant(a.variant);
        } catch (const Error& e) {
            throw Error(ErrorCode::bad_config, e.what());
        }
    }();
    const fs::path out = a.out;

    ModelBundle model;
    RunLog log;
    if (cfg.data.kind == "two-moons") {
        MoonData d = cfg.data.train_dir.empty() ? generate_moon_data(cfg) : MoonData{read_moon_corpus(cfg.data.train_dir), {}};
        if (!cfg.data.test_dir.empty()) d.test = read_moon_corpus(cfg.data.test_dir);
        if (d.test.labels.empty()) d.test = d.train;
        MoonResult r = run_moon_experiment(cfg, variant, d.train, d.test, moon_labeled_count(cfg, d.train.labels.size()));
        write_accuracy_csv(out / "metrics.csv", r.accuracy);
        model = std::move(r.model);
        log = std::move(r.log);
        std::cout << variant_name(variant) << ": accuracy " << r.accuracy << '\n';
    } else {
        SegData d;
        if (cfg.data.train_dir.empty()) {
            d = generate_seg_data(cfg);
        } else {
            SegCorpus c = read_seg_corpus(cfg.data.train_dir);
            d.train = std::move(c.samples);
            d.train_ids = std::move(c.ids);
        }
        if (!cfg.data.test_dir.empty()) {
            SegCorpus c = read_seg_corpus(cfg.data.test_dir);
            d.test = std::move(c.samples);
            d.test_ids = std::move(c.ids);
        }
        RunResult r = run_experiment(cfg, variant, d);
        // Without a test corpus the report covers the training images.
        const MetricsReport report =
            d.test.empty() ? evaluate_model(r.model, d.train, d.train_ids, cfg.infer, false) : r.test;
        auto csv = open_out(out / "metrics.csv");
        write_metrics_csv(csv, report);
        close_out(csv, out / "metrics.csv");
        model = std::move(r.model);
        log = std::move(r.log);
        std::cout << variant_name(variant) << ": mean dice " << report.mean_dice() << " (train " << r.train_dice
                  << ")\n";
    }
    save_checkpoint(out / "checkpoint", model, cfg);
    auto runlog = open_out(out / "runlog.csv");
    write_runlog_csv(runlog, log);
    close_out(runlog, out / "runlog.csv");
    return 0;
}

// ------------------------------------------------------------------ eval

struct EvalArgs {
    std::string checkpoint;
    std::string data;
    std::string out;
    bool lcc = false;
};

int cmd_eval(const EvalArgs& a)
{
    const Checkpoint ck = load_checkpoint(a.checkpoint);
    if (is_moon_corpus(a.data)) {
        const MoonSet set = read_moon_corpus(a.data);
        if (ck.model.config.arch != Arch::mlp) throw Error(ErrorCode::shape_mismatch, "point data needs an MLP checkpoint");
        const double acc = moon_accuracy(ck.model, set);
        write_accuracy_csv(a.out, acc);
        std::cout << "accuracy " << acc << '\n';
        return 0;
    }
    if (ck.model.config.arch == Arch::mlp) throw Error(ErrorCode::shape_mismatch, "image data needs a conv checkpoint");
    const SegCorpus corpus = read_seg_corpus(a.data);
    for (std::size_t i = 0; i < corpus.samples.size(); ++i)
        if (corpus.samples[i].image.dim(0) != ck.model.config.in_channels)
            throw Error(ErrorCode::shape_mismatch, corpus.ids[i] + " has " +
                                                       std::to_string(corpus.samples[i].image.dim(0)) +
                                                       " channels, checkpoint expects " +
                                                       std::to_string(ck.model.config.in_channels));
    const MetricsReport report = evaluate_model(ck.model, corpus.samples, corpus.ids, ck.config.infer, a.lcc);
    auto csv = open_out(a.out);
    write_metrics_csv(csv, report);
    close_out(csv, a.out);
    std::cout << "mean dice " << report.mean_dice() << " over " << corpus.samples.size() << " samples\n";
    return 0;
}

// ------------------------------------------------------------------ embed

struct EmbedArgs {
    std::string checkpoint;
    std::string data;
    std::size_t max_points = 2000;
    std::uint64_t seed = 1;
    std::string labels = "split";
    std::string out;
};

int cmd_embed(const EmbedArgs& a)
{
    const Checkpoint ck = load_checkpoint(a.checkpoint);
    const TrainConfig& cfg = ck.config;
    std::vector<EmbeddingRow> rows;
    std::vector<std::size_t> labeled;
    if (is_moon_corpus(a.data)) {
        const MoonSet set = read_moon_corpus(a.data);
        if (a.labels == "split") labeled = moon_labeled_subset(set.labels, moon_labeled_count(cfg, set.labels.size()), cfg.seed);
        if (a.labels == "all")
            for (std::size_t i = 0; i < set.labels.size(); ++i) labeled.push_back(i);
        rows = embed_points(ck.model, set, labeled, a.max_points, a.seed);
    } else {
        const SegCorpus corpus = read_seg_corpus(a.data);
        if (a.labels == "split") labeled = split_semi(corpus.samples.size(), cfg.data.labeled_fraction, cfg.seed).labeled;
        if (a.labels == "all")
            for (std::size_t i = 0; i < corpus.samples.size(); ++i) labeled.push_back(i);
        rows = embed_pixels(ck.model, corpus.samples, labeled, a.max_points, a.seed);
    }
    auto tsv = open_out(a.out);
    write_embedding_tsv(tsv, rows, ck.model.config.d_proj);
    close_out(tsv, a.out);
    std::cout << "wrote " << rows.size() << " rows to " << a.out << '\n';
    return 0;
}

std::string config_footer()
{
    const TrainConfig defaults;
    std::ostringstream os;
    os << "Config keys (key = default: meaning):\n";
    for (const auto& k : config_keys())
        os << "  " << k.name << " = " << get_config_value(defaults, k.name) << ": " << k.help << '\n';
    return os.str();
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Semi-supervised segmentation with adversarial smoothness and prototype separation"};
    app.require_subcommand(1);
    app.option_defaults()->always_capture_default();

    GenArgs gen;
    auto* g = app.add_subcommand("gen-data", "write a synthetic corpus");
    g->add_option("--kind", gen.kind, "blobs | two-moons")->check(CLI::IsMember({"blobs", "two-moons"}));
    g->add_option("--n", gen.n, "samples or points");
    g->add_option("--gamma", gen.gamma, "two-moon noise standard deviation");
    g->add_option("--blur", gen.blur, "blob edge blur sigma");
    g->add_option("--contrast", gen.contrast, "blob contrast in (0,1]");
    g->add_option("--noise", gen.noise, "noise level at zero contrast");
    g->add_option("--jitter", gen.jitter, "per-sample intensity shift at zero contrast");
    g->add_option("--size", gen.size, "image side");
    g->add_option("--classes", gen.classes, "classes including background");
    g->add_option("--seed", gen.seed, "generator seed");
    g->add_option("--out", gen.out, "output directory")->required();

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "train one variant and write checkpoint/, runlog.csv, metrics.csv");
    t->add_option("--config", tr.config, "config file (empty: defaults)");
    t->add_option("--variant", tr.variant, "seg_only | seg_lds | seg_cs | full | seg_lds_kl")
        ->check(CLI::IsMember({"seg_only", "seg_lds", "seg_cs", "full", "seg_lds_kl"}));
    t->add_option("--out", tr.out, "output directory");
    t->add_option("--set", tr.set, "override one config key, key=value (repeatable)");
    t->add_flag("--dump-config", tr.dump, "print the canonical config and exit");
    t->footer(config_footer());

    EvalArgs ev;
    auto* e = app.add_subcommand("eval", "sliding-window evaluation of a checkpoint");
    e->add_option("--checkpoint", ev.checkpoint, "checkpoint directory")->required();
    e->add_option("--data", ev.data, "corpus directory")->required();
    e->add_option("--out", ev.out, "metrics CSV path")->required();
    e->add_flag("--lcc", ev.lcc, "keep the largest connected component per class");

    EmbedArgs em;
    auto* b = app.add_subcommand("embed", "export projected features as TSV");
    b->add_option("--checkpoint", em.checkpoint, "checkpoint directory")->required();
    b->add_option("--data", em.data, "corpus directory")->required();
    b->add_option("--max-points", em.max_points, "maximum rows");
    b->add_option("--seed", em.seed, "sampling seed");
    b->add_option("--labels", em.labels, "split: the checkpoint's labeled split | all | none")
        ->check(CLI::IsMember({"split", "all", "none"}));
    b->add_option("--out", em.out, "TSV path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& h) {
        return app.exit(h);
    } catch (const CLI::CallForAllHelp& h) {
        return app.exit(h);
    } catch (const CLI::ParseError& err) {
        return report("Usage", err.what(), 2);
    }

    try {
        if (*g) return cmd_gen_data(gen);
        if (*t) return cmd_train(tr);
        if (*e) return cmd_eval(ev);
        if (*b) return cmd_embed(em);
    } catch (const Error& err) {
        return report(err);
    } catch (const std::exception& err) {
        return report("Internal", err.what(), 1);
    }
    return 2;
}
