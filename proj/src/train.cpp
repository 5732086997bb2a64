#include "cyclevae/train.hpp"

#include <bit>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cyclevae/errors.hpp"
#include "cyclevae/ops.hpp"

namespace cyclevae {

void TrainConfig::validate() const {
    if (iterations < 1) throw ConfigError("training: iterations must be >= 1");
    if (batch_size < 1) throw ConfigError("training: batch_size must be >= 1");
    if (checkpoint_every < 0)
        throw ConfigError("training: checkpoint_every must be >= 0");
    adam.validate();
    if (!(adam.learning_rate > 0.0))
        throw ConfigError("training: learning_rate must be > 0");
    weights.validate();
}

void TrainLog::save(const std::string& path) const {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("train log: cannot open " + path + " for writing");
    os << "# iteration forward_total forward_recon forward_kl reverse wall_ms\n";
    char buf[512];
    for (const TrainRecord& r : records) {
        std::snprintf(buf, sizeof(buf), "%d %.17g %.17g %.17g %.17g %.17g\n",
                      r.iteration, r.forward_total, r.forward_recon, r.forward_kl,
                      r.reverse, r.wall_ms);
        os << buf;
    }
    if (!os) throw IoError("train log: write failed for " + path);
}

TrainLog TrainLog::load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("train log: cannot open " + path);
    TrainLog log;
    std::string line;
    int last_iteration = 0;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream fields(line);
        TrainRecord r;
        if (!(fields >> r.iteration >> r.forward_total >> r.forward_recon >>
              r.forward_kl >> r.reverse >> r.wall_ms))
            throw FormatError("train log: malformed record '" + line + "' in " + path);
        if (r.iteration <= last_iteration)
            throw FormatError("train log: iteration indices not increasing in " + path);
        last_iteration = r.iteration;
        log.records.push_back(r);
    }
    return log;
}

bool TrainLog::same_losses(const TrainLog& other) const {
    if (records.size() != other.records.size()) return false;
    for (std::size_t i = 0; i < records.size(); ++i) {
        const TrainRecord& a = records[i];
        const TrainRecord& b = other.records[i];
        if (a.iteration != b.iteration || a.forward_total != b.forward_total ||
            a.forward_recon != b.forward_recon || a.forward_kl != b.forward_kl ||
            a.reverse != b.reverse)
            return false;
    }
    return true;
}

ForwardCycleMetrics train_step_forward(const PairBatch& batch, ModelParams& params,
                                       AdamState& state, const TrainConfig& config,
                                       Rng& rng) {
    params.zero_grad();
    ForwardCycleMetrics metrics;
    Tensor loss =
        forward_cycle_loss(batch.x1, batch.x2, params, rng, config.weights, &metrics);
    backward(loss);
    adam_update(params.all_params(), state, config.adam);
    return metrics;
}

Real train_step_reverse(const Tensor& x1, const Tensor& x2, ModelParams& params,
                        AdamState& state, const TrainConfig& config, Rng& rng) {
    const int batch = x1.ndim() > 0 ? x1.dim(0) : 0;
    std::vector<Real> zv(static_cast<std::size_t>(batch) *
                         static_cast<std::size_t>(params.config.z_dim));
    for (Real& v : zv) v = rng.normal();
    Tensor z_prior =
        Tensor::from_data({batch, params.config.z_dim}, std::move(zv), false);

    params.zero_grad();
    Tensor raw = reverse_cycle_loss(x1, x2, params, z_prior);
    const Real value = raw.value();
    // With reverse_weight zero the step is a no-op by construction: no
    // gradient, no moment decay, no step-count advance.
    if (config.weights.reverse_weight > 0.0) {
        Tensor loss = scale(raw, config.weights.reverse_weight);
        backward(loss);
        adam_update(params.encoder_params(), state, config.adam);
    }
    return value;
}

namespace {

void check_geometry(const LabeledImageDataset& dataset, const ModelConfig& config) {
    if (dataset.channels != config.image_channels ||
        dataset.height != config.image_size || dataset.width != config.image_size)
        throw ConfigError("training: dataset geometry " +
                          std::to_string(dataset.channels) + "x" +
                          std::to_string(dataset.height) + "x" +
                          std::to_string(dataset.width) +
                          " does not match the model config");
}

void check_train_split(const LabeledImageDataset& dataset) {
    std::vector<int> counts(static_cast<std::size_t>(dataset.num_classes), 0);
    for (int i : split_indices(dataset, Split::train))
        ++counts[static_cast<std::size_t>(dataset.labels[static_cast<std::size_t>(i)])];
    int present = 0;
    for (int c = 0; c < dataset.num_classes; ++c) {
        const int n = counts[static_cast<std::size_t>(c)];
        if (n == 1)
            throw ConfigError("training: class " + std::to_string(c) +
                              " has 1 image in the train split; every present class "
                              "needs >= 2");
        if (n > 0) ++present;
    }
    if (present < 2)
        throw ConfigError("training: train split holds " + std::to_string(present) +
                          " class(es); need >= 2");
}

void write_u64_le(std::ostream& os, std::uint64_t v) {
    char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os.write(bytes, 8);
}

std::uint64_t read_u64_le(std::istream& is, const std::string& path) {
    unsigned char bytes[8];
    if (!is.read(reinterpret_cast<char*>(bytes), 8))
        throw IoError("train state truncated: " + path);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    return v;
}

void write_f64(std::ostream& os, Real v) {
    write_u64_le(os, std::bit_cast<std::uint64_t>(v));
}

Real read_f64(std::istream& is, const std::string& path) {
    return std::bit_cast<Real>(read_u64_le(is, path));
}

void write_u32_le(std::ostream& os, std::uint32_t v) {
    char bytes[4];
    for (int i = 0; i < 4; ++i) bytes[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    os.write(bytes, 4);
}

std::uint32_t read_u32_le(std::istream& is, const std::string& path) {
    unsigned char bytes[4];
    if (!is.read(reinterpret_cast<char*>(bytes), 4))
        throw IoError("train state truncated: " + path);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[i]) << (8 * i);
    return v;
}

constexpr std::uint32_t kStateVersion = 1;

FitResult run_training_loop(const LabeledImageDataset& dataset, ModelParams params,
                            AdamState state, Rng rng, const TrainConfig& config,
                            int start_iteration) {
    const bool emit_files = !config.output_dir.empty();
    std::filesystem::path dir(config.output_dir);
    std::filesystem::path checkpoint_path = dir / "model.cvae";
    if (emit_files) std::filesystem::create_directories(dir);

    FitResult result;
    for (int it = start_iteration + 1; it <= config.iterations; ++it) {
        const auto t0 = std::chrono::steady_clock::now();
        PairBatch pairs =
            sample_similar_pair_batch(dataset, Split::train, config.batch_size, rng);
        const ForwardCycleMetrics fm =
            train_step_forward(pairs, params, state, config, rng);
        Tensor rx1 = sample_image_batch(dataset, Split::train, config.batch_size, rng);
        Tensor rx2 = sample_image_batch(dataset, Split::train, config.batch_size, rng);
        const Real reverse = train_step_reverse(rx1, rx2, params, state, config, rng);
        const auto t1 = std::chrono::steady_clock::now();

        TrainRecord record;
        record.iteration = it;
        record.forward_total = fm.total;
        record.forward_recon = fm.reconstruction;
        record.forward_kl = fm.kl;
        record.reverse = reverse;
        record.wall_ms = std::chrono::duration<Real, std::milli>(t1 - t0).count();
        if (!std::isfinite(record.forward_total) || !std::isfinite(record.reverse) ||
            !std::isfinite(record.forward_kl))
            throw NumericError("training: non-finite loss at iteration " +
                               std::to_string(it));
        result.log.records.push_back(record);

        if (emit_files && config.checkpoint_every > 0 &&
            it % config.checkpoint_every == 0 && it != config.iterations) {
            save_checkpoint(params, checkpoint_path.string());
            save_train_state(checkpoint_path.string(), params, state, rng, it);
        }
    }
    if (emit_files) {
        save_checkpoint(params, checkpoint_path.string());
        save_train_state(checkpoint_path.string(), params, state, rng,
                         config.iterations);
        result.log.save((dir / "train_log.txt").string());
    }
    result.params = params;
    return result;
}

}  // namespace

void save_train_state(const std::string& checkpoint_path, const ModelParams& params,
                      const AdamState& state, const Rng& rng,
                      int completed_iterations) {
    const std::string path = checkpoint_path + ".state";
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw IoError("train state: cannot open " + path + " for writing");
    os.write("CVST", 4);
    write_u32_le(os, kStateVersion);
    write_u32_le(os, static_cast<std::uint32_t>(completed_iterations));
    const std::string rng_state = rng.state();
    write_u32_le(os, static_cast<std::uint32_t>(rng_state.size()));
    os.write(rng_state.data(), static_cast<std::streamsize>(rng_state.size()));

    const auto blocks = params.named();
    write_u32_le(os, static_cast<std::uint32_t>(blocks.size()));
    for (const auto& [name, tensor] : blocks) {
        write_u32_le(os, static_cast<std::uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_u64_le(os, tensor.numel());
        for (Real v : tensor.data()) write_f64(os, v);
        const AdamSlot* slot = state.find(tensor);
        if (slot && !slot->m.empty()) {
            if (slot->m.size() != tensor.numel())
                throw ShapeError("train state: moment size mismatch for block " + name);
            for (Real v : slot->m) write_f64(os, v);
            for (Real v : slot->v) write_f64(os, v);
            write_u64_le(os, static_cast<std::uint64_t>(slot->t));
        } else {
            for (std::size_t i = 0; i < 2 * tensor.numel(); ++i) write_f64(os, 0.0);
            write_u64_le(os, 0);
        }
    }
    if (!os) throw IoError("train state: write failed for " + path);
}

TrainState load_train_state(const std::string& checkpoint_path) {
    TrainState out;
    out.params = load_checkpoint(checkpoint_path);

    const std::string path = checkpoint_path + ".state";
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("train state: cannot open " + path);
    char magic[4];
    if (!is.read(magic, 4)) throw IoError("train state truncated: " + path);
    if (std::string(magic, 4) != "CVST")
        throw FormatError("not a train state file (bad magic): " + path);
    const std::uint32_t version = read_u32_le(is, path);
    if (version != kStateVersion)
        throw FormatError("unsupported train state version " + std::to_string(version) +
                          " in " + path);
    out.completed_iterations = static_cast<int>(read_u32_le(is, path));
    const std::uint32_t rng_len = read_u32_le(is, path);
    out.rng_state.resize(rng_len);
    if (!is.read(out.rng_state.data(), rng_len))
        throw IoError("train state truncated: " + path);

    const auto blocks = out.params.named();
    const std::uint32_t count = read_u32_le(is, path);
    if (count != blocks.size())
        throw FormatError("train state block count " + std::to_string(count) +
                          " does not match checkpoint: " + path);
    for (const auto& [name, tensor] : blocks) {
        const std::uint32_t name_len = read_u32_le(is, path);
        std::string stored(name_len, '\0');
        if (!is.read(stored.data(), name_len))
            throw IoError("train state truncated: " + path);
        if (stored != name)
            throw FormatError("train state block '" + stored + "' where '" + name +
                              "' was expected: " + path);
        const std::uint64_t numel = read_u64_le(is, path);
        if (numel != tensor.numel())
            throw FormatError("train state block '" + name + "' holds " +
                              std::to_string(numel) + " values, expected " +
                              std::to_string(tensor.numel()) + ": " + path);
        Tensor mutable_tensor = tensor;
        for (Real& v : mutable_tensor.mutable_data()) v = read_f64(is, path);
        AdamSlot& slot = out.opt_state.slot_for(tensor);
        for (Real& v : slot.m) v = read_f64(is, path);
        for (Real& v : slot.v) v = read_f64(is, path);
        slot.t = static_cast<std::int64_t>(read_u64_le(is, path));
    }
    return out;
}

FitResult fit(const LabeledImageDataset& dataset, const ModelConfig& model_config,
              const TrainConfig& train_config) {
    train_config.validate();
    model_config.validate();
    dataset.validate();
    check_train_split(dataset);
    check_geometry(dataset, model_config);

    Rng rng(train_config.seed);
    ModelParams params = init_params(model_config, rng.next_u64());
    return run_training_loop(dataset, std::move(params), AdamState(), std::move(rng),
                             train_config, 0);
}

FitResult resume_fit(const LabeledImageDataset& dataset,
                     const std::string& checkpoint_path,
                     const TrainConfig& train_config) {
    train_config.validate();
    dataset.validate();
    check_train_split(dataset);
    TrainState state = load_train_state(checkpoint_path);
    check_geometry(dataset, state.params.config);
    if (state.completed_iterations > train_config.iterations)
        throw ConfigError("training: checkpoint already covers " +
                          std::to_string(state.completed_iterations) +
                          " iterations, config asks for " +
                          std::to_string(train_config.iterations));
    Rng rng(0);
    rng.restore(state.rng_state);
    return run_training_loop(dataset, std::move(state.params),
                             std::move(state.opt_state), std::move(rng), train_config,
                             state.completed_iterations);
}

}  // namespace cyclevae
