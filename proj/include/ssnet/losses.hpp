#pragma once

// Smoothness and class-separation objectives.
//
// Probability inputs are rows [P,C] (class axis 1). Rank-4 [B,C,H,W] maps are
// flattened to rows first; a rank-1 tensor is treated as a single class.

#include <cstddef>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include "ssnet/autodiff.hpp"
#include "ssnet/nets.hpp"
#include "ssnet/rng.hpp"

namespace ssnet {

enum class DiscrepancyKind { dice, kl };

std::string_view discrepancy_name(DiscrepancyKind kind);
DiscrepancyKind parse_discrepancy(std::string_view name);

inline constexpr double dice_smoothing = 1e-5;

struct AdvConfig {
    double epsilon = 10.0;
    double xi = 0.1;
    DiscrepancyKind kind = DiscrepancyKind::dice;

    void validate() const;
    friend bool operator==(const AdvConfig&, const AdvConfig&) = default;
};

/// dice: mean over classes of 1 - 2*sum(a_c*b_c) / (sum(a_c) + sum(b_c) + s).
/// kl:   mean over rows of KL(a || b).
Var discrepancy(const Var& a, const Var& b, DiscrepancyKind kind, double smoothing = dice_smoothing);

/// Maps an input batch to probability rows [P,C].
using ProbabilityFn = std::function<Var(const Var& inputs)>;

ProbabilityFn probability_fn(const ModelBundle& model);

struct AdversarialNoise {
    Tensor r_adv;                      // same shape as x
    bool zero_gradient = false;        // set when any sample had |g| < 1e-12
    std::vector<bool> zero_samples;    // per-sample flag
};

/// r_adv = epsilon * g / |g|_2 per sample, where g is the gradient of
/// D[pseudo, p(x + r_ini)] w.r.t. r_ini = xi * d / |d|_2, d ~ N(0, I).
AdversarialNoise adversarial_noise(const ProbabilityFn& probs, const Tensor& x, const Tensor& pseudo,
                                   const AdvConfig& cfg, CounterRng& rng);
AdversarialNoise adversarial_noise(const ModelBundle& model, const Tensor& x, const AdvConfig& cfg, CounterRng& rng);

/// D[stop_gradient(pseudo), p(x + r_adv)]; only the perturbed branch is differentiated.
Var lds_loss(const ProbabilityFn& probs, const Var& pseudo, const Tensor& x, const Tensor& r_adv, DiscrepancyKind kind);
Var lds_loss(const ModelBundle& model, const Tensor& x, const Tensor& r_adv, DiscrepancyKind kind);

struct ProtoConfig {
    std::size_t k = 32;
    double threshold = 0.9;
    /// Prototype vectors enter the cosine term as constants; their attention weights stay trainable.
    bool detach = true;

    friend bool operator==(const ProtoConfig&, const ProtoConfig&) = default;
};

struct ClassPrototypes {
    std::vector<std::size_t> rows; // indices into the labeled feature rows, ranked
    Var vectors;                   // [N,d_proj], undefined when empty
    Var weights;                   // [N], L1-normalized attention scores
    bool empty() const { return rows.empty(); }
};

struct PrototypeBank {
    std::vector<ClassPrototypes> classes;
    std::size_t k = 0;
    double threshold = 0.0;
};

/// Candidates have max probability > threshold and argmax equal to the label.
/// Per class they are ranked by the class attention score (descending, ties by
/// ascending row) and the first min(k, #candidates) are kept.
PrototypeBank select_prototypes(const Var& labeled_features, std::span<const int> labels, const Tensor& probs,
                                const ProtoConfig& cfg, std::span<const AttentionHead> attention_z);

/// How the L1-normalized attention weights enter the prototype loss.
enum class WeightScaling {
    unit_sum,  // weights sum to 1 and the double sum is divided by N*M
    unit_mean, // weights rescaled to mean 1 (sum N resp. M) before that division
};

std::string_view weight_scaling_name(WeightScaling s);
WeightScaling parse_weight_scaling(std::string_view name);

/// Mean over classes with both prototypes and features of
/// (1/NM) sum_i sum_j w_z_i w_f_j (1 - cos(z_i, f_j)).
Var cs_loss(const PrototypeBank& bank, const Var& features, std::span<const int> assignments,
            std::span<const AttentionHead> attention_f, WeightScaling scaling = WeightScaling::unit_sum);

/// Uniform subset of row indices of size min(n, cap), returned sorted; cap 0 keeps everything.
std::vector<std::size_t> subsample_rows(std::size_t n, std::size_t cap, CounterRng& rng);

struct RampUp {
    double lambda_max_lds = 1.0;
    double lambda_max_cs = 1.0;
    std::size_t t_ramp = 1200;

    friend bool operator==(const RampUp&, const RampUp&) = default;
};

enum class LossTerm { lds, cs };

/// lambda_max * exp(-5 * (1 - min(t / t_ramp, 1))^2).
double rampup_weight(std::size_t iter, const RampUp& cfg, LossTerm which);

Var total_loss(const Var& seg, const Var& lds, const Var& cs, double lambda_lds, double lambda_cs);

/// One-hot rows [P,C] for integer labels.
Tensor one_hot(std::span<const int> labels, std::size_t classes);

/// Row-wise argmax of a [P,C] tensor; ties resolve to the lowest class.
std::vector<int> argmax_rows(const Tensor& rows);

} // namespace ssnet
