#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ssnet/autodiff.hpp"
#include "ssnet/rng.hpp"

namespace ssnet {

enum class Arch {
    mlp,       // 4 fully connected layers over 2-D points
    unet,      // two-stage encoder-decoder with one skip connection
    conv_only, // two stride-1 convolutions, no resampling
};

std::string_view arch_name(Arch arch);
Arch parse_arch(std::string_view name);

struct NetConfig {
    Arch arch = Arch::unet;
    std::size_t classes = 2;
    std::size_t d_proj = 32;
    std::size_t in_channels = 1; // image channels, or point dimension for the MLP
    std::size_t c1 = 16;         // first stage width (and deep feature width for conv nets)
    std::size_t c2 = 32;         // second stage width
    std::size_t hidden = 64;     // MLP width
    std::size_t kernel = 3;      // odd conv kernel size
    std::size_t input_size = 64; // training patch side
    float leaky_slope = 0.01f;

    void validate() const;
    /// Width of the pre-classifier features.
    std::size_t feature_width() const;
    /// Spatial dims must be divisible by this.
    std::size_t downsample_factor() const;

    friend bool operator==(const NetConfig&, const NetConfig&) = default;
};

struct Linear {
    Var weight; // [out, in]
    Var bias;   // [out]
};

struct Conv {
    Var weight; // [out, in, k, k]
    Var bias;   // [out]
};

/// Two 1x1 maps with a nonlinearity in between (Phi_z / Phi_f).
struct Projector {
    Linear first;
    Linear second;
};

/// Class-specific scorer: one linear map to a scalar followed by softplus.
struct AttentionHead {
    Linear score;
};

struct ModelBundle {
    NetConfig config;
    std::vector<Linear> mlp_layers; // mlp only: hidden layers
    std::vector<Conv> convs;        // conv archs: backbone convolutions in forward order
    Linear classifier;              // [classes, feature_width]
    Projector projector_z;
    Projector projector_f;
    std::vector<AttentionHead> attention_z;
    std::vector<AttentionHead> attention_f;

    /// Every trainable tensor with a stable dotted name, in a fixed order.
    std::vector<std::pair<std::string, Var>> named_parameters() const;
    std::vector<Var> parameters() const;
    std::size_t parameter_count() const;
};

/// He fan-in initialization for weights, zeros for biases.
ModelBundle make_model(const NetConfig& config, CounterRng rng);

struct Forward {
    Var logits;   // mlp: [B,C]; conv: [B,C,H,W]
    Var features; // mlp: [B,hidden]; conv: [B,d_feat,H,W]
};

Forward mlp_forward(const ModelBundle& model, const Var& points);
Forward segnet_forward(const ModelBundle& model, const Var& images);
/// Dispatches on the architecture.
Forward forward(const ModelBundle& model, const Var& inputs);

/// Forward flattened to one row per prediction site: logits [P,C], features [P,d_feat].
Forward forward_rows(const ModelBundle& model, const Var& inputs);

Var linear(const Var& rows, const Linear& layer);

/// [B,d_feat,H,W] -> [B*H*W, d_proj] in (b, h, w) row-major order.
Var project_features(const Projector& projector, const Var& deep_features, float slope = 0.01f);
/// [N,d_feat] -> [N,d_proj].
Var project_rows(const Projector& projector, const Var& rows, float slope = 0.01f);

/// Keeps attention scores away from zero so their L1 normalization stays finite.
inline constexpr float attention_floor = 1e-4f;

/// One positive score per row of features [N,d_proj]: softplus(linear) + attention_floor.
Var attention_scores(const AttentionHead& head, const Var& features);

/// Class probabilities per row: softmax(forward_rows(...).logits).
Var probabilities(const ModelBundle& model, const Var& inputs);

} // namespace ssnet
