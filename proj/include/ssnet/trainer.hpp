#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "ssnet/losses.hpp"
#include "ssnet/metrics.hpp"
#include "ssnet/nets.hpp"
#include "ssnet/synthdata.hpp"

namespace ssnet {

/// Which loss terms receive nonzero weight.
enum class Variant { seg_only, seg_lds, seg_cs, full, seg_lds_kl };

std::string_view variant_name(Variant v);
Variant parse_variant(std::string_view name);
bool uses_lds(Variant v);
bool uses_cs(Variant v);

struct DataConfig {
    std::string kind = "blobs"; // blobs | two-moons
    std::string train_dir;      // empty: generate in memory
    std::string test_dir;
    double labeled_fraction = 0.05;
    // In-memory generation.
    std::size_t n_train = 80;
    std::size_t n_test = 20;
    std::size_t test_size = 96;
    double blur_sigma = 1.5;
    double contrast = 0.4;
    double noise_scale = 0.25;
    double intensity_jitter = 0.0;
    double gamma = 0.15; // two-moon noise
    std::uint64_t data_seed = 1;

    friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

struct InferConfig {
    std::size_t patch = 64;
    std::size_t stride = 32;

    friend bool operator==(const InferConfig&, const InferConfig&) = default;
};

struct TrainConfig {
    std::size_t total_iters = 3000;
    double lr0 = 0.01;
    double decay_factor = 0.9;
    std::size_t decay_every = 500;
    double momentum = 0.9;
    double grad_clip = 5.0; // max global gradient l2 norm per step; 0 disables
    std::size_t batch_labeled = 2;
    std::size_t batch_unlabeled = 2;
    std::uint64_t seed = 1;
    std::size_t eval_every = 250;
    std::size_t feature_cap = 4096; // rows entering the prototype loss per step; 0 keeps all
    bool deterministic = true;
    bool augment = true;
    AdvConfig adv;
    RampUp ramp;
    ProtoConfig proto;
    WeightScaling weighting = WeightScaling::unit_mean;
    NetConfig net;
    DataConfig data;
    InferConfig infer;

    void validate() const;
    friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// lr0 * decay_factor^floor(iter / decay_every).
double lr_schedule(std::size_t iter, const TrainConfig& cfg);

/// Zero mean, unit variance per channel; constant images map to zero.
Tensor standardize(const Tensor& image);

/// The first `labeled` samples of `inputs` carry ground truth in `labels`, one
/// entry per prediction site in (sample, row, column) order.
struct SemiBatch {
    Tensor inputs; // [B,Cin,H,W] or [B,d] points
    std::size_t labeled = 0;
    std::vector<int> labels;
};

struct StepRecord {
    std::size_t iter = 0;
    double seg = 0.0;
    double lds = 0.0;
    double cs = 0.0;
    double lambda_lds = 0.0;
    double lambda_cs = 0.0;
    double lr = 0.0;
    double ms = 0.0;
    bool zero_gradient = false;
};

/// Momentum buffers, one per parameter in named_parameters() order.
struct SgdState {
    std::vector<Tensor> velocity;
};

SgdState make_sgd_state(const ModelBundle& model);

/// v = momentum * v - lr * g; p += v.
void sgd_update(ModelBundle& model, SgdState& state, std::span<const Tensor> grads, double lr, double momentum);

/// One optimization step on the weighted objective restricted to the variant's terms.
StepRecord train_step(ModelBundle& model, SgdState& state, const SemiBatch& batch, std::size_t iter,
                      const TrainConfig& cfg, Variant variant, CounterRng rng);

struct EvalSnapshot {
    std::size_t iter = 0;
    double mean_dice = 0.0;
};

struct RunLog {
    std::vector<StepRecord> steps;
    std::vector<EvalSnapshot> evals;
};

/// CSV iter,seg,lds,cs,lambda_lds,lambda_cs,lr,ms with round-trip precision.
void write_runlog_csv(std::ostream& os, const RunLog& log);

/// Maps an image batch [1,Cin,h,w] to probabilities [1,C,h,w].
using PatchModel = std::function<Tensor(const Tensor& patch)>;

/// Average of per-window softmax maps over every covering window; returns
/// [C,H,W]. The final window along each axis is clamped to the border.
Tensor sliding_window_inference(const PatchModel& model, const Tensor& image, std::size_t patch_h,
                                std::size_t patch_w, std::size_t stride_h, std::size_t stride_w);
Tensor sliding_window_inference(const ModelBundle& model, const Tensor& image, const InferConfig& infer);

/// Per-pixel argmax of a [C,H,W] probability map.
LabelMask argmax_mask(const Tensor& probs);

/// Standardizes, stitches and takes the argmax; optional largest-component filter per class.
LabelMask predict_mask(const ModelBundle& model, const Tensor& image, const InferConfig& infer, bool lcc);

MetricsReport evaluate_model(const ModelBundle& model, const std::vector<SegSample>& samples,
                             const std::vector<std::string>& ids, const InferConfig& infer, bool lcc);

struct SegData {
    std::vector<SegSample> train;
    std::vector<std::string> train_ids;
    std::vector<SegSample> test;
    std::vector<std::string> test_ids;
};

/// Generates the corpus described by cfg.data in memory.
SegData generate_seg_data(const TrainConfig& cfg);

struct RunResult {
    ModelBundle model;
    RunLog log;
    MetricsReport test;
    double train_dice = 0.0; // final mean foreground Dice on the training images
};

/// Trains one variant. Initialization, the labeled split and the data order
/// depend only on cfg.seed, so variants with one seed see identical batches.
RunResult run_experiment(const TrainConfig& cfg, Variant variant, const SegData& data);

struct MoonResult {
    ModelBundle model;
    RunLog log;
    double accuracy = 0.0; // on the held-out points
    std::vector<std::size_t> labeled;
};

/// Balanced labeled subset: ceil(count/2) points of class 0 and floor(count/2)
/// of class 1, drawn uniformly within each class; sorted.
std::vector<std::size_t> moon_labeled_subset(std::span<const int> labels, std::size_t count, std::uint64_t seed);

struct MoonData {
    MoonSet train;
    MoonSet test;
};

/// n_train and n_test points with noise gamma; the test set uses a seed derived from data_seed.
MoonData generate_moon_data(const TrainConfig& cfg);

/// max(2, round(labeled_fraction * n)).
std::size_t moon_labeled_count(const TrainConfig& cfg, std::size_t n);

/// Two-moon classification with `labeled_count` labeled points; every point
/// serves as unlabeled data. Accuracy is measured on `test`.
MoonResult run_moon_experiment(const TrainConfig& cfg, Variant variant, const MoonSet& train, const MoonSet& test,
                               std::size_t labeled_count);

/// Writes manifest.txt (name file shape), one container per parameter and config.cfg.
void save_checkpoint(const std::filesystem::path& dir, const ModelBundle& model, const TrainConfig& cfg);

struct Checkpoint {
    ModelBundle model;
    TrainConfig config;
};

Checkpoint load_checkpoint(const std::filesystem::path& dir);

} // namespace ssnet
