#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cyclevae/tensor.hpp"

namespace cyclevae {

// Encoder Enc(x) = (f_z(x), f_s(x)) with a shared convolutional trunk and
// three linear heads (mu, log-variance, s), and conditional decoder
// Dec(z, s). Trunk blocks are conv(k5, s2, p2) + instance norm + relu;
// the decoder mirrors them with transposed convolutions and ends in a
// sigmoid so pixels stay in [0, 1].

struct ModelConfig {
    int image_channels = 1;
    int image_size = 28;  // 28 or 64; 8 is allowed for downscaled gradient checks
    int z_dim = 16;
    int s_dim = 16;
    std::vector<int> trunk_channels;  // encoder channels, one per conv block
    int conv_blocks = 3;              // 2 for 8, 3 for 28, 4 for 64
    int fc_width = 256;               // width of each decoder input branch

    /// Throws ConfigError when any invariant is violated.
    void validate() const;

    /// Spatial extents after each encoder block: image_size, then one entry
    /// per block (k=5, stride=2, padding=2 halving chain).
    std::vector<int> spatial_chain() const;

    /// Flattened trunk output size feeding the encoder heads.
    int flat_dim() const;

    bool operator==(const ModelConfig&) const = default;
};

/// Baseline configuration for a given image size: trunk {32, 64, 128} at
/// 28, {32, 64, 128, 256} at 64, {8, 16} at 8 (test scale).
ModelConfig default_model_config(int image_size, int image_channels);

/// Encoder outputs for a batch: posterior parameters of z and the
/// specified code s, each [batch, dim].
struct LatentCode {
    Tensor mu;
    Tensor log_var;
    Tensor s;
};

struct ModelParams {
    ModelConfig config;

    // Encoder: trunk kernels [c_out, c_in, 5, 5], then three heads.
    std::vector<Tensor> enc_conv;
    Tensor head_mu_w, head_mu_b;
    Tensor head_logvar_w, head_logvar_b;
    Tensor head_s_w, head_s_b;

    // Decoder: two input branches, merge layer, mirrored transposed-conv
    // kernels [c_in, c_out, 5, 5], and the output channel bias.
    Tensor dec_z_w, dec_z_b;
    Tensor dec_s_w, dec_s_b;
    Tensor dec_merge_w, dec_merge_b;
    std::vector<Tensor> dec_conv;
    Tensor dec_out_bias;

    /// All parameters as (name, tensor), in declaration order. This order
    /// defines the checkpoint block layout.
    std::vector<std::pair<std::string, Tensor>> named() const;
    std::vector<Tensor> encoder_params() const;
    std::vector<Tensor> decoder_params() const;
    std::vector<Tensor> all_params() const;
    void zero_grad() const;
};

/// Reproducible fan-in-scaled uniform init, biases zero.
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

/// x is [batch, channels, size, size] with pixels in [0, 1].
LatentCode encode(const Tensor& x, const ModelParams& params);

/// z = mu + exp(0.5 * log_var) * noise. Differentiable w.r.t. mu and
/// log_var; noise is treated as a constant.
Tensor reparameterize(const Tensor& mu, const Tensor& log_var, const Tensor& noise);

/// z [batch, z_dim], s [batch, s_dim] -> images [batch, c, size, size].
Tensor decode(const Tensor& z, const Tensor& s, const ModelParams& params);

/// Binary checkpoint: "CVAE" magic, format version, config fields, then
/// named parameter blocks in declaration order as little-endian float32.
/// Saving casts doubles to float; loading widens exactly, so a save-load-
/// save cycle is byte-identical.
void save_checkpoint(const ModelParams& params, const std::string& path);
ModelParams load_checkpoint(const std::string& path);

}  // namespace cyclevae
