#pragma once

#include "cyclevae/model.hpp"
#include "cyclevae/rng.hpp"
#include "cyclevae/tensor.hpp"

namespace cyclevae {

struct LossWeights {
    Real kl_weight = 1.0;
    Real reverse_weight = 1.0;

    /// Throws ConfigError on negative or non-finite weights.
    void validate() const;
};

/// KL(q || N(0, I)) = 0.5 * sum_d (mu^2 + exp(log_var) - log_var - 1),
/// summed over dimensions and averaged over rows. Accepts [batch, d] or a
/// single vector [d].
Tensor kl_standard_normal(const Tensor& mu, const Tensor& log_var);

/// Squared error summed over the pixels of each sample and averaged over
/// the batch (leading dimension of rank-4 inputs; plain sum otherwise).
Tensor reconstruction_l2(const Tensor& x_hat, const Tensor& x);

struct ForwardCycleMetrics {
    Real total = 0.0;
    Real reconstruction = 0.0;
    Real kl = 0.0;
};

/// Forward cycle: encode the same-class pair, swap the specified codes,
/// decode, and penalize reconstruction plus the KL of both posteriors:
/// x1' = Dec(z1, s2) against x1, x2' = Dec(z2, s1) against x2. The rng
/// supplies the reparameterization noise (row-major, x1's batch first).
Tensor forward_cycle_loss(const Tensor& x1, const Tensor& x2, const ModelParams& params,
                          Rng& rng, const LossWeights& weights,
                          ForwardCycleMetrics* metrics = nullptr);

/// Reverse cycle: decode one prior sample with both specified codes,
/// re-encode, and penalize the mean L1 distance between the recovered
/// posterior means. z_prior is a constant [batch, z_dim] batch; gradients
/// flow through encoder and decoder alike (masking is the trainer's job).
Tensor reverse_cycle_loss(const Tensor& x1, const Tensor& x2, const ModelParams& params,
                          const Tensor& z_prior);

/// Reference oracle for tests: the absolute variant anchored at z_prior,
/// mean over the batch of |z - z1''| + |z - z2''|. The pairwise loss is
/// bounded above by this via the triangle inequality.
Tensor absolute_reverse_cycle_loss(const Tensor& x1, const Tensor& x2,
                                   const ModelParams& params, const Tensor& z_prior);

}  // namespace cyclevae
