#include "cyclevae/model.hpp"

#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <utility>

#include "cyclevae/ops.hpp"
#include "cyclevae/rng.hpp"

namespace cyclevae {

namespace {

constexpr int kKernel = 5;
constexpr int kStride = 2;
constexpr int kPadding = 2;
constexpr std::uint32_t kCheckpointVersion = 1;

int trunk_out_extent(int in) { return (in + 2 * kPadding - kKernel) / kStride + 1; }

// output_padding restoring `target` from `in` under the k5 s2 p2 chain.
int upsample_output_padding(int in, int target) {
    return target - ((in - 1) * kStride - 2 * kPadding + kKernel);
}

}  // namespace

void ModelConfig::validate() const {
    if (image_channels < 1)
        throw ConfigError("model: image_channels must be >= 1");
    if (image_size != 8 && image_size != 28 && image_size != 64)
        throw ConfigError("model: image_size must be 8, 28, or 64, got " +
                          std::to_string(image_size));
    if (z_dim < 1 || s_dim < 1)
        throw ConfigError("model: z_dim and s_dim must be >= 1");
    if (fc_width < 1) throw ConfigError("model: fc_width must be >= 1");
    if (conv_blocks < 1) throw ConfigError("model: conv_blocks must be >= 1");
    if (static_cast<int>(trunk_channels.size()) != conv_blocks)
        throw ConfigError("model: trunk_channels has " +
                          std::to_string(trunk_channels.size()) + " entries for " +
                          std::to_string(conv_blocks) + " conv blocks");
    for (int c : trunk_channels)
        if (c < 1) throw ConfigError("model: trunk channel counts must be >= 1");
    int sp = image_size;
    for (int i = 0; i < conv_blocks; ++i) {
        sp = trunk_out_extent(sp);
        if (sp < 1)
            throw ConfigError("model: conv block " + std::to_string(i) +
                              " shrinks the spatial extent below 1");
    }
}

std::vector<int> ModelConfig::spatial_chain() const {
    std::vector<int> chain{image_size};
    for (int i = 0; i < conv_blocks; ++i) chain.push_back(trunk_out_extent(chain.back()));
    return chain;
}

int ModelConfig::flat_dim() const {
    const int sp = spatial_chain().back();
    return trunk_channels.back() * sp * sp;
}

ModelConfig default_model_config(int image_size, int image_channels) {
    ModelConfig config;
    config.image_channels = image_channels;
    config.image_size = image_size;
    switch (image_size) {
        case 8:
            config.trunk_channels = {8, 16};
            break;
        case 28:
            config.trunk_channels = {32, 64, 128};
            break;
        case 64:
            config.trunk_channels = {32, 64, 128, 256};
            break;
        default:
            throw ConfigError("model: no default configuration for image_size " +
                              std::to_string(image_size));
    }
    config.conv_blocks = static_cast<int>(config.trunk_channels.size());
    config.validate();
    return config;
}

std::vector<std::pair<std::string, Tensor>> ModelParams::named() const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (std::size_t i = 0; i < enc_conv.size(); ++i)
        out.emplace_back("enc_conv" + std::to_string(i), enc_conv[i]);
    out.emplace_back("head_mu_w", head_mu_w);
    out.emplace_back("head_mu_b", head_mu_b);
    out.emplace_back("head_logvar_w", head_logvar_w);
    out.emplace_back("head_logvar_b", head_logvar_b);
    out.emplace_back("head_s_w", head_s_w);
    out.emplace_back("head_s_b", head_s_b);
    out.emplace_back("dec_z_w", dec_z_w);
    out.emplace_back("dec_z_b", dec_z_b);
    out.emplace_back("dec_s_w", dec_s_w);
    out.emplace_back("dec_s_b", dec_s_b);
    out.emplace_back("dec_merge_w", dec_merge_w);
    out.emplace_back("dec_merge_b", dec_merge_b);
    for (std::size_t i = 0; i < dec_conv.size(); ++i)
        out.emplace_back("dec_conv" + std::to_string(i), dec_conv[i]);
    out.emplace_back("dec_out_bias", dec_out_bias);
    return out;
}

std::vector<Tensor> ModelParams::encoder_params() const {
    std::vector<Tensor> out(enc_conv.begin(), enc_conv.end());
    for (const Tensor& t : {head_mu_w, head_mu_b, head_logvar_w, head_logvar_b,
                            head_s_w, head_s_b})
        out.push_back(t);
    return out;
}

std::vector<Tensor> ModelParams::decoder_params() const {
    std::vector<Tensor> out{dec_z_w, dec_z_b, dec_s_w, dec_s_b, dec_merge_w, dec_merge_b};
    out.insert(out.end(), dec_conv.begin(), dec_conv.end());
    out.push_back(dec_out_bias);
    return out;
}

std::vector<Tensor> ModelParams::all_params() const {
    std::vector<Tensor> out = encoder_params();
    std::vector<Tensor> dec = decoder_params();
    out.insert(out.end(), dec.begin(), dec.end());
    return out;
}

void ModelParams::zero_grad() const {
    for (Tensor t : all_params()) t.zero_grad();
}

namespace {

/// All tensors zero-filled with requires_grad, shapes derived from config.
ModelParams allocate_params(const ModelConfig& config) {
    config.validate();
    ModelParams p;
    p.config = config;
    const int flat = config.flat_dim();
    int cin = config.image_channels;
    for (int c : config.trunk_channels) {
        p.enc_conv.push_back(Tensor::zeros({c, cin, kKernel, kKernel}, true));
        cin = c;
    }
    p.head_mu_w = Tensor::zeros({config.z_dim, flat}, true);
    p.head_mu_b = Tensor::zeros({config.z_dim}, true);
    p.head_logvar_w = Tensor::zeros({config.z_dim, flat}, true);
    p.head_logvar_b = Tensor::zeros({config.z_dim}, true);
    p.head_s_w = Tensor::zeros({config.s_dim, flat}, true);
    p.head_s_b = Tensor::zeros({config.s_dim}, true);

    p.dec_z_w = Tensor::zeros({config.fc_width, config.z_dim}, true);
    p.dec_z_b = Tensor::zeros({config.fc_width}, true);
    p.dec_s_w = Tensor::zeros({config.fc_width, config.s_dim}, true);
    p.dec_s_b = Tensor::zeros({config.fc_width}, true);
    p.dec_merge_w = Tensor::zeros({flat, 2 * config.fc_width}, true);
    p.dec_merge_b = Tensor::zeros({flat}, true);
    const auto& chans = config.trunk_channels;
    for (int i = config.conv_blocks - 1; i >= 0; --i) {
        const int dec_in = chans[static_cast<std::size_t>(i)];
        const int dec_out = i > 0 ? chans[static_cast<std::size_t>(i - 1)] : config.image_channels;
        p.dec_conv.push_back(Tensor::zeros({dec_in, dec_out, kKernel, kKernel}, true));
    }
    p.dec_out_bias = Tensor::zeros({config.image_channels}, true);
    return p;
}

void fill_uniform(Tensor t, int fan_in, Rng& rng) {
    const Real bound = 1.0 / std::sqrt(static_cast<Real>(fan_in));
    for (Real& v : t.mutable_data()) v = rng.uniform(-bound, bound);
}

}  // namespace

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
    ModelParams p = allocate_params(config);
    Rng rng(seed);
    // Weights drawn in declaration order; biases remain zero.
    for (Tensor& k : p.enc_conv) fill_uniform(k, k.dim(1) * kKernel * kKernel, rng);
    const int flat = config.flat_dim();
    fill_uniform(p.head_mu_w, flat, rng);
    fill_uniform(p.head_logvar_w, flat, rng);
    fill_uniform(p.head_s_w, flat, rng);
    fill_uniform(p.dec_z_w, config.z_dim, rng);
    fill_uniform(p.dec_s_w, config.s_dim, rng);
    fill_uniform(p.dec_merge_w, 2 * config.fc_width, rng);
    for (Tensor& k : p.dec_conv) fill_uniform(k, k.dim(0) * kKernel * kKernel, rng);
    return p;
}

LatentCode encode(const Tensor& x, const ModelParams& params) {
    const ModelConfig& config = params.config;
    if (x.ndim() != 4 || x.dim(1) != config.image_channels ||
        x.dim(2) != config.image_size || x.dim(3) != config.image_size)
        throw ShapeError("encode: input " + shape_str(x.shape()) + " does not match " +
                         std::to_string(config.image_channels) + "x" +
                         std::to_string(config.image_size) + "x" +
                         std::to_string(config.image_size));
    Tensor h = x;
    for (const Tensor& kernel : params.enc_conv)
        h = relu(instance_norm(conv2d(h, kernel, kStride, kPadding)));
    Tensor flat = reshape(h, {x.dim(0), config.flat_dim()});
    LatentCode code;
    code.mu = linear(flat, params.head_mu_w, params.head_mu_b);
    code.log_var = linear(flat, params.head_logvar_w, params.head_logvar_b);
    code.s = linear(flat, params.head_s_w, params.head_s_b);
    return code;
}

Tensor reparameterize(const Tensor& mu, const Tensor& log_var, const Tensor& noise) {
    if (mu.shape() != log_var.shape() || mu.shape() != noise.shape())
        throw ShapeError("reparameterize: mismatched shapes " + shape_str(mu.shape()) +
                         ", " + shape_str(log_var.shape()) + ", " +
                         shape_str(noise.shape()));
    return add(mu, mul(exp(scale(log_var, 0.5)), noise));
}

Tensor decode(const Tensor& z, const Tensor& s, const ModelParams& params) {
    const ModelConfig& config = params.config;
    if (z.ndim() != 2 || z.dim(1) != config.z_dim)
        throw ShapeError("decode: z " + shape_str(z.shape()) + " does not match z_dim " +
                         std::to_string(config.z_dim));
    if (s.ndim() != 2 || s.dim(1) != config.s_dim)
        throw ShapeError("decode: s " + shape_str(s.shape()) + " does not match s_dim " +
                         std::to_string(config.s_dim));
    if (z.dim(0) != s.dim(0))
        throw ShapeError("decode: batch mismatch " + shape_str(z.shape()) + " vs " +
                         shape_str(s.shape()));
    const int batch = z.dim(0);
    Tensor hz = relu(linear(z, params.dec_z_w, params.dec_z_b));
    Tensor hs = relu(linear(s, params.dec_s_w, params.dec_s_b));
    Tensor h = relu(linear(concat_cols(hz, hs), params.dec_merge_w, params.dec_merge_b));
    const std::vector<int> chain = config.spatial_chain();
    const int blocks = config.conv_blocks;
    int sp = chain[static_cast<std::size_t>(blocks)];
    Tensor img = reshape(h, {batch, config.trunk_channels.back(), sp, sp});
    for (int j = 0; j < blocks; ++j) {
        const int target = chain[static_cast<std::size_t>(blocks - 1 - j)];
        const int op = upsample_output_padding(sp, target);
        img = conv2d_transpose(img, params.dec_conv[static_cast<std::size_t>(j)],
                               kStride, kPadding, op);
        sp = target;
        if (j + 1 < blocks) {
            img = relu(instance_norm(img));
        } else {
            img = sigmoid(add_channel_bias(img, params.dec_out_bias));
        }
    }
    return img;
}

namespace {

void write_u32(std::ostream& os, std::uint32_t v) {
    const char bytes[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
                           static_cast<char>((v >> 16) & 0xff),
                           static_cast<char>((v >> 24) & 0xff)};
    os.write(bytes, 4);
}

void write_i32(std::ostream& os, std::int32_t v) {
    write_u32(os, static_cast<std::uint32_t>(v));
}

void write_f32(std::ostream& os, float v) { write_u32(os, std::bit_cast<std::uint32_t>(v)); }

std::uint32_t read_u32(std::istream& is, const std::string& path) {
    char bytes[4];
    if (!is.read(bytes, 4)) throw IoError("checkpoint truncated: " + path);
    return static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[0])) |
           (static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[1])) << 8) |
           (static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[2])) << 16) |
           (static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[3])) << 24);
}

std::int32_t read_i32(std::istream& is, const std::string& path) {
    return static_cast<std::int32_t>(read_u32(is, path));
}

float read_f32(std::istream& is, const std::string& path) {
    return std::bit_cast<float>(read_u32(is, path));
}

}  // namespace

void save_checkpoint(const ModelParams& params, const std::string& path) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("cannot open checkpoint for writing: " + path);
    os.write("CVAE", 4);
    write_u32(os, kCheckpointVersion);
    const ModelConfig& config = params.config;
    write_i32(os, config.image_channels);
    write_i32(os, config.image_size);
    write_i32(os, config.z_dim);
    write_i32(os, config.s_dim);
    write_i32(os, config.conv_blocks);
    write_i32(os, config.fc_width);
    for (int c : config.trunk_channels) write_i32(os, c);
    const auto blocks = params.named();
    write_u32(os, static_cast<std::uint32_t>(blocks.size()));
    for (const auto& [name, tensor] : blocks) {
        write_u32(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u32(os, static_cast<std::uint32_t>(tensor.ndim()));
        for (int d = 0; d < tensor.ndim(); ++d) write_i32(os, tensor.dim(d));
        for (Real v : tensor.data()) write_f32(os, static_cast<float>(v));
    }
    if (!os) throw IoError("checkpoint write failed: " + path);
}

ModelParams load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open checkpoint: " + path);
    char magic[4];
    if (!is.read(magic, 4)) throw IoError("checkpoint truncated: " + path);
    if (std::string(magic, 4) != "CVAE")
        throw FormatError("not a checkpoint (bad magic): " + path);
    const std::uint32_t version = read_u32(is, path);
    if (version != kCheckpointVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version) +
                          " in " + path);
    ModelConfig config;
    config.image_channels = read_i32(is, path);
    config.image_size = read_i32(is, path);
    config.z_dim = read_i32(is, path);
    config.s_dim = read_i32(is, path);
    config.conv_blocks = read_i32(is, path);
    config.fc_width = read_i32(is, path);
    if (config.conv_blocks < 1 || config.conv_blocks > 16)
        throw FormatError("implausible conv block count in checkpoint: " + path);
    config.trunk_channels.resize(static_cast<std::size_t>(config.conv_blocks));
    for (int& c : config.trunk_channels) c = read_i32(is, path);
    try {
        config.validate();
    } catch (const ConfigError& e) {
        throw FormatError("checkpoint carries an invalid config (" +
                          std::string(e.what()) + "): " + path);
    }
    ModelParams params = allocate_params(config);
    const auto blocks = params.named();
    const std::uint32_t count = read_u32(is, path);
    if (count != blocks.size())
        throw FormatError("checkpoint block count " + std::to_string(count) +
                          " does not match expected " + std::to_string(blocks.size()) +
                          ": " + path);
    for (const auto& [name, tensor] : blocks) {
        const std::uint32_t name_len = read_u32(is, path);
        std::string stored(name_len, '\0');
        if (!is.read(stored.data(), name_len)) throw IoError("checkpoint truncated: " + path);
        if (stored != name)
            throw FormatError("checkpoint block '" + stored + "' where '" + name +
                              "' was expected: " + path);
        const std::uint32_t rank = read_u32(is, path);
        if (rank != static_cast<std::uint32_t>(tensor.ndim()))
            throw FormatError("checkpoint block '" + name + "' has rank " +
                              std::to_string(rank) + ", expected " +
                              std::to_string(tensor.ndim()) + ": " + path);
        for (int d = 0; d < tensor.ndim(); ++d) {
            const std::int32_t dim = read_i32(is, path);
            if (dim != tensor.dim(d))
                throw FormatError("checkpoint block '" + name + "' dimension " +
                                  std::to_string(d) + " is " + std::to_string(dim) +
                                  ", expected " + std::to_string(tensor.dim(d)) + ": " +
                                  path);
        }
        Tensor mutable_tensor = tensor;
        for (Real& v : mutable_tensor.mutable_data())
            v = static_cast<Real>(read_f32(is, path));
    }
    return params;
}

}  // namespace cyclevae
