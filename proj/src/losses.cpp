#include "cyclevae/losses.hpp"

#include <cmath>

#include "cyclevae/ops.hpp"

namespace cyclevae {

void LossWeights::validate() const {
    if (!(kl_weight >= 0.0) || !std::isfinite(kl_weight))
        throw ConfigError("losses: kl_weight must be finite and >= 0");
    if (!(reverse_weight >= 0.0) || !std::isfinite(reverse_weight))
        throw ConfigError("losses: reverse_weight must be finite and >= 0");
}

namespace {

int batch_rows(const Tensor& t) { return t.ndim() >= 2 ? t.dim(0) : 1; }

Tensor noise_like(const Tensor& t, Rng& rng) {
    std::vector<Real> v(t.numel());
    for (Real& x : v) x = rng.normal();
    return Tensor::from_data(t.shape(), std::move(v), false);
}

}  // namespace

Tensor kl_standard_normal(const Tensor& mu, const Tensor& log_var) {
    if (mu.shape() != log_var.shape())
        throw ShapeError("kl: mu " + shape_str(mu.shape()) + " vs log_var " +
                         shape_str(log_var.shape()));
    if (mu.ndim() > 2)
        throw ShapeError("kl: expected a vector or [batch, d], got " +
                         shape_str(mu.shape()));
    Tensor per_coord = add_scalar(sub(add(square(mu), exp(log_var)), log_var), -1.0);
    return scale(sum(per_coord), 0.5 / static_cast<Real>(batch_rows(mu)));
}

Tensor reconstruction_l2(const Tensor& x_hat, const Tensor& x) {
    if (x_hat.shape() != x.shape())
        throw ShapeError("reconstruction: " + shape_str(x_hat.shape()) + " vs " +
                         shape_str(x.shape()));
    const int batch = x.ndim() == 4 ? x.dim(0) : 1;
    return scale(sum(square(sub(x_hat, x))), 1.0 / static_cast<Real>(batch));
}

Tensor forward_cycle_loss(const Tensor& x1, const Tensor& x2, const ModelParams& params,
                          Rng& rng, const LossWeights& weights,
                          ForwardCycleMetrics* metrics) {
    if (x1.shape() != x2.shape())
        throw ShapeError("forward_cycle: pair batches differ, " + shape_str(x1.shape()) +
                         " vs " + shape_str(x2.shape()));
    weights.validate();
    LatentCode c1 = encode(x1, params);
    LatentCode c2 = encode(x2, params);
    Tensor z1 = reparameterize(c1.mu, c1.log_var, noise_like(c1.mu, rng));
    Tensor z2 = reparameterize(c2.mu, c2.log_var, noise_like(c2.mu, rng));
    // Swap the specified codes across the same-class pair.
    Tensor x1_hat = decode(z1, c2.s, params);
    Tensor x2_hat = decode(z2, c1.s, params);
    Tensor recon = add(reconstruction_l2(x1_hat, x1), reconstruction_l2(x2_hat, x2));
    Tensor kl = add(kl_standard_normal(c1.mu, c1.log_var),
                    kl_standard_normal(c2.mu, c2.log_var));
    Tensor total = add(recon, scale(kl, weights.kl_weight));
    if (metrics) {
        metrics->reconstruction = recon.value();
        metrics->kl = kl.value();
        metrics->total = total.value();
    }
    return total;
}

Tensor reverse_cycle_loss(const Tensor& x1, const Tensor& x2, const ModelParams& params,
                          const Tensor& z_prior) {
    if (x1.shape() != x2.shape())
        throw ShapeError("reverse_cycle: batches differ, " + shape_str(x1.shape()) +
                         " vs " + shape_str(x2.shape()));
    if (z_prior.ndim() != 2 || z_prior.dim(0) != x1.dim(0) ||
        z_prior.dim(1) != params.config.z_dim)
        throw ShapeError("reverse_cycle: z_prior " + shape_str(z_prior.shape()) +
                         " does not match batch " + std::to_string(x1.dim(0)) +
                         " and z_dim " + std::to_string(params.config.z_dim));
    Tensor s1 = encode(x1, params).s;
    Tensor s2 = encode(x2, params).s;
    Tensor x1_cycle = decode(z_prior, s1, params);
    Tensor x2_cycle = decode(z_prior, s2, params);
    // The recovered code is the posterior mean, not a fresh sample.
    Tensor z1_rec = encode(x1_cycle, params).mu;
    Tensor z2_rec = encode(x2_cycle, params).mu;
    return scale(sum(abs(sub(z1_rec, z2_rec))), 1.0 / static_cast<Real>(x1.dim(0)));
}

Tensor absolute_reverse_cycle_loss(const Tensor& x1, const Tensor& x2,
                                   const ModelParams& params, const Tensor& z_prior) {
    Tensor s1 = encode(x1, params).s;
    Tensor s2 = encode(x2, params).s;
    Tensor z1_rec = encode(decode(z_prior, s1, params), params).mu;
    Tensor z2_rec = encode(decode(z_prior, s2, params), params).mu;
    Tensor total = add(sum(abs(sub(z_prior, z1_rec))), sum(abs(sub(z_prior, z2_rec))));
    return scale(total, 1.0 / static_cast<Real>(x1.dim(0)));
}

}  // namespace cyclevae
