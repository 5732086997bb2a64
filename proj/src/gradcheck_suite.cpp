#include "cyclevae/gradcheck_suite.hpp"

#include <utility>

#include "cyclevae/losses.hpp"
#include "cyclevae/model.hpp"
#include "cyclevae/ops.hpp"
#include "cyclevae/rng.hpp"

namespace cyclevae {

namespace {

Tensor rand_tensor(Rng& rng, Shape shape, Real lo, Real hi, bool requires_grad = true) {
    std::vector<Real> v(shape_numel(shape));
    for (Real& x : v) x = rng.uniform(lo, hi);
    return Tensor::from_data(std::move(shape), std::move(v), requires_grad);
}

// Magnitudes in [0.2, 1.0] with random sign, so +-eps probes never cross
// the kink of relu or abs.
Tensor rand_away_from_zero(Rng& rng, Shape shape, bool requires_grad = true) {
    std::vector<Real> v(shape_numel(shape));
    for (Real& x : v) {
        const Real mag = rng.uniform(0.2, 1.0);
        x = rng.uniform() < 0.5 ? -mag : mag;
    }
    return Tensor::from_data(std::move(shape), std::move(v), requires_grad);
}

// Weighted total keeps per-coordinate gradients distinct, which catches
// transposed or misindexed backward rules that a plain sum would miss.
Tensor weighted_total(const Tensor& t, const Tensor& weights) {
    return sum(mul(t, weights));
}

}  // namespace

std::vector<OpCheck> run_op_gradchecks(std::uint64_t seed) {
    Rng rng(seed);
    std::vector<OpCheck> checks;
    auto run = [&checks](std::string name, const std::vector<Tensor>& inputs,
                         std::function<Tensor(const std::vector<Tensor>&)> f) {
        checks.push_back({std::move(name), grad_check(f, inputs)});
    };

    {
        Tensor a = rand_tensor(rng, {3, 4}, -1.0, 1.0);
        Tensor b = rand_tensor(rng, {3, 4}, -1.0, 1.0);
        Tensor w = rand_tensor(rng, {3, 4}, 0.5, 1.5, false);
        run("add", {a, b}, [w](const std::vector<Tensor>& in) {
            return weighted_total(add(in[0], in[1]), w);
        });
    }
    {
        Tensor a = rand_tensor(rng, {3, 4}, -1.0, 1.0);
        Tensor b = rand_tensor(rng, {3, 4}, -1.0, 1.0);
        Tensor w = rand_tensor(rng, {3, 4}, 0.5, 1.5, false);
        run("sub", {a, b}, [w](const std::vector<Tensor>& in) {
            return weighted_total(sub(in[0], in[1]), w);
        });
    }
    {
        Tensor a = rand_tensor(rng, {3, 4}, -1.0, 1.0);
        Tensor b = rand_tensor(rng, {3, 4}, -1.0, 1.0);
        Tensor w = rand_tensor(rng, {3, 4}, 0.5, 1.5, false);
        run("mul", {a, b}, [w](const std::vector<Tensor>& in) {
            return weighted_total(mul(in[0], in[1]), w);
        });
    }
    {
        Tensor a = rand_tensor(rng, {3, 4}, -1.0, 1.0);
        Tensor w = rand_tensor(rng, {3, 4}, 0.5, 1.5, false);
        run("scale", {a}, [w](const std::vector<Tensor>& in) {
            return weighted_total(scale(in[0], 1.7), w);
        });
    }
    {
        Tensor a = rand_tensor(rng, {3, 4}, -1.0, 1.0);
        Tensor w = rand_tensor(rng, {3, 4}, 0.5, 1.5, false);
        run("add_scalar", {a}, [w](const std::vector<Tensor>& in) {
            return weighted_total(add_scalar(in[0], 0.3), w);
        });
    }
    {
        Tensor a = rand_tensor(rng, {3, 4}, -1.0, 1.0);
        Tensor w = rand_tensor(rng, {3, 4}, 0.5, 1.5, false);
        run("exp", {a}, [w](const std::vector<Tensor>& in) {
            return weighted_total(exp(in[0]), w);
        });
    }
    {
        Tensor a = rand_away_from_zero(rng, {3, 4});
        Tensor w = rand_tensor(rng, {3, 4}, 0.5, 1.5, false);
        run("abs", {a}, [w](const std::vector<Tensor>& in) {
            return weighted_total(abs(in[0]), w);
        });
    }
    {
        Tensor a = rand_tensor(rng, {3, 4}, -1.0, 1.0);
        Tensor w = rand_tensor(rng, {3, 4}, 0.5, 1.5, false);
        run("square", {a}, [w](const std::vector<Tensor>& in) {
            return weighted_total(square(in[0]), w);
        });
    }
    {
        Tensor a = rand_away_from_zero(rng, {3, 4});
        Tensor w = rand_tensor(rng, {3, 4}, 0.5, 1.5, false);
        run("relu", {a}, [w](const std::vector<Tensor>& in) {
            return weighted_total(relu(in[0]), w);
        });
    }
    {
        Tensor a = rand_tensor(rng, {3, 4}, -2.0, 2.0);
        Tensor w = rand_tensor(rng, {3, 4}, 0.5, 1.5, false);
        run("sigmoid", {a}, [w](const std::vector<Tensor>& in) {
            return weighted_total(sigmoid(in[0]), w);
        });
    }
    {
        Tensor a = rand_tensor(rng, {3, 4}, -1.0, 1.0);
        run("sum", {a}, [](const std::vector<Tensor>& in) {
            return square(sum(in[0]));
        });
    }
    {
        Tensor a = rand_tensor(rng, {2, 6}, -1.0, 1.0);
        Tensor w = rand_tensor(rng, {3, 4}, 0.5, 1.5, false);
        run("reshape", {a}, [w](const std::vector<Tensor>& in) {
            return weighted_total(reshape(in[0], {3, 4}), w);
        });
    }
    {
        Tensor a = rand_tensor(rng, {3, 2}, -1.0, 1.0);
        Tensor b = rand_tensor(rng, {3, 4}, -1.0, 1.0);
        Tensor w = rand_tensor(rng, {3, 6}, 0.5, 1.5, false);
        run("concat_cols", {a, b}, [w](const std::vector<Tensor>& in) {
            return weighted_total(concat_cols(in[0], in[1]), w);
        });
    }
    {
        Tensor x = rand_tensor(rng, {4, 5}, -1.0, 1.0);
        Tensor wt = rand_tensor(rng, {3, 5}, -0.7, 0.7);
        Tensor bias = rand_tensor(rng, {3}, -0.5, 0.5);
        Tensor w = rand_tensor(rng, {4, 3}, 0.5, 1.5, false);
        run("linear", {x, wt, bias}, [w](const std::vector<Tensor>& in) {
            return weighted_total(linear(in[0], in[1], in[2]), w);
        });
    }
    {
        Tensor x = rand_tensor(rng, {2, 2, 6, 6}, -1.0, 1.0);
        Tensor k = rand_tensor(rng, {3, 2, 3, 3}, -0.6, 0.6);
        Tensor w = rand_tensor(rng, {2, 3, 3, 3}, 0.5, 1.5, false);
        run("conv2d", {x, k}, [w](const std::vector<Tensor>& in) {
            return weighted_total(conv2d(in[0], in[1], 2, 1), w);
        });
    }
    {
        Tensor x = rand_tensor(rng, {2, 2, 4, 4}, -1.0, 1.0);
        Tensor k = rand_tensor(rng, {2, 3, 3, 3}, -0.6, 0.6);
        Tensor w = rand_tensor(rng, {2, 3, 8, 8}, 0.5, 1.5, false);
        run("conv2d_transpose", {x, k}, [w](const std::vector<Tensor>& in) {
            return weighted_total(conv2d_transpose(in[0], in[1], 2, 1, 1), w);
        });
    }
    {
        Tensor x = rand_tensor(rng, {2, 2, 5, 5}, -1.0, 1.0);
        Tensor w = rand_tensor(rng, {2, 2, 5, 5}, 0.5, 1.5, false);
        run("instance_norm", {x}, [w](const std::vector<Tensor>& in) {
            return weighted_total(instance_norm(in[0]), w);
        });
    }
    {
        Tensor x = rand_tensor(rng, {2, 3, 4, 4}, -1.0, 1.0);
        Tensor bias = rand_tensor(rng, {3}, -0.5, 0.5);
        Tensor w = rand_tensor(rng, {2, 3, 4, 4}, 0.5, 1.5, false);
        run("add_channel_bias", {x, bias}, [w](const std::vector<Tensor>& in) {
            return weighted_total(add_channel_bias(in[0], in[1]), w);
        });
    }
    {
        Tensor logits = rand_tensor(rng, {5, 4}, -1.5, 1.5);
        const std::vector<int> labels = {0, 2, 1, 3, 2};
        run("softmax_cross_entropy", {logits}, [labels](const std::vector<Tensor>& in) {
            return softmax_cross_entropy(in[0], labels);
        });
    }
    return checks;
}

std::vector<OpCheck> run_model_gradchecks(std::uint64_t seed) {
    ModelConfig config;
    config.image_channels = 1;
    config.image_size = 8;
    config.z_dim = 2;
    config.s_dim = 2;
    config.trunk_channels = {3, 4};
    config.conv_blocks = 2;
    config.fc_width = 8;
    config.validate();

    Rng rng(seed);
    ModelParams params = init_params(config, rng.next_u64());
    Tensor x1 = rand_tensor(rng, {2, 1, 8, 8}, 0.1, 0.9);
    Tensor x2 = rand_tensor(rng, {2, 1, 8, 8}, 0.1, 0.9);
    std::vector<Real> zp(2 * config.z_dim);
    for (Real& v : zp) v = rng.normal();
    Tensor z_prior = Tensor::from_data({2, config.z_dim}, std::move(zp), false);
    Tensor noise = [&] {
        std::vector<Real> nv(2 * config.z_dim);
        for (Real& v : nv) v = rng.normal();
        return Tensor::from_data({2, config.z_dim}, std::move(nv), false);
    }();
    const std::uint64_t noise_seed = rng.next_u64();

    // Probe every pixel and every parameter coordinate: the param tensors
    // below alias the ones the captured `params` uses, so perturbing them
    // perturbs the rebuilt expression.
    std::vector<Tensor> inputs{x1, x2};
    for (const Tensor& t : params.all_params()) inputs.push_back(t);

    std::vector<OpCheck> checks;
    const LossWeights weights;
    checks.push_back({"forward_cycle_loss",
                      grad_check(
                          [&params, &weights, noise_seed](const std::vector<Tensor>& in) {
                              Rng noise_rng(noise_seed);
                              return forward_cycle_loss(in[0], in[1], params, noise_rng,
                                                        weights);
                          },
                          inputs)});
    checks.push_back({"reverse_cycle_loss",
                      grad_check(
                          [&params, z_prior](const std::vector<Tensor>& in) {
                              return reverse_cycle_loss(in[0], in[1], params, z_prior);
                          },
                          inputs)});
    checks.push_back({"encode_decode",
                      grad_check(
                          [&params, noise](const std::vector<Tensor>& in) {
                              LatentCode code = encode(in[0], params);
                              Tensor z = reparameterize(code.mu, code.log_var, noise);
                              Tensor s = encode(in[1], params).s;
                              return sum(decode(z, s, params));
                          },
                          inputs)});
    return checks;
}

}  // namespace cyclevae
