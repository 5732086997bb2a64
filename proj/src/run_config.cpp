#include "cyclevae/run_config.hpp"

#include <fstream>
#include <set>

#include <json.hpp>

#include "cyclevae/errors.hpp"

namespace cyclevae {

namespace {

using nlohmann::json;

void require_object(const json& j, const std::string& context) {
    if (!j.is_object()) throw ConfigError(context + " must be a JSON object");
}

void reject_unknown_keys(const json& j, const std::string& context,
                         const std::set<std::string>& allowed) {
    for (const auto& item : j.items())
        if (!allowed.contains(item.key()))
            throw ConfigError(context + ": unknown key '" + item.key() + "'");
}

const json& require_key(const json& j, const std::string& context, const std::string& key) {
    const auto it = j.find(key);
    if (it == j.end()) throw ConfigError(context + ": missing required key '" + key + "'");
    return *it;
}

template <typename T>
T get_as(const json& j, const std::string& context, const std::string& key, T fallback) {
    const auto it = j.find(key);
    if (it == j.end()) return fallback;
    try {
        return it->get<T>();
    } catch (const json::exception&) {
        throw ConfigError(context + ": key '" + key + "' has the wrong type");
    }
}

template <typename T>
T get_required(const json& j, const std::string& context, const std::string& key) {
    const json& value = require_key(j, context, key);
    try {
        return value.get<T>();
    } catch (const json::exception&) {
        throw ConfigError(context + ": key '" + key + "' has the wrong type");
    }
}

SplitSpec parse_split(const json& j) {
    require_object(j, "dataset.split");
    reject_unknown_keys(j, "dataset.split",
                        {"train", "val", "test", "seed", "disjoint_identities"});
    SplitSpec split;
    split.fractions[0] = get_as<double>(j, "dataset.split", "train", split.fractions[0]);
    split.fractions[1] = get_as<double>(j, "dataset.split", "val", split.fractions[1]);
    split.fractions[2] = get_as<double>(j, "dataset.split", "test", split.fractions[2]);
    split.seed = get_required<std::uint64_t>(j, "dataset.split", "seed");
    split.disjoint_identities =
        get_as<bool>(j, "dataset.split", "disjoint_identities", false);
    return split;
}

DatasetSpec parse_dataset(const json& j) {
    require_object(j, "dataset");
    reject_unknown_keys(j, "dataset", {"kind", "images", "labels", "toy", "split"});
    DatasetSpec spec;
    const std::string kind = get_required<std::string>(j, "dataset", "kind");
    if (kind == "mnist") {
        spec.kind = DatasetKind::mnist;
        spec.images_path = get_required<std::string>(j, "dataset", "images");
        spec.labels_path = get_required<std::string>(j, "dataset", "labels");
        if (j.contains("toy"))
            throw ConfigError("dataset: the 'toy' block is only valid for kind 'toy'");
    } else if (kind == "toy") {
        spec.kind = DatasetKind::toy;
        if (j.contains("images") || j.contains("labels"))
            throw ConfigError("dataset: IDX paths are only valid for kind 'mnist'");
        const json& toy = require_key(j, "dataset", "toy");
        require_object(toy, "dataset.toy");
        reject_unknown_keys(toy, "dataset.toy",
                            {"num_identities", "images_per_identity", "image_size", "seed"});
        spec.toy.num_identities =
            get_as<int>(toy, "dataset.toy", "num_identities", spec.toy.num_identities);
        spec.toy.images_per_identity = get_as<int>(toy, "dataset.toy", "images_per_identity",
                                                   spec.toy.images_per_identity);
        spec.toy.image_size = get_as<int>(toy, "dataset.toy", "image_size", spec.toy.image_size);
        spec.toy_seed = get_required<std::uint64_t>(toy, "dataset.toy", "seed");
    } else {
        throw ConfigError("dataset: kind must be 'mnist' or 'toy', got '" + kind + "'");
    }
    spec.split = parse_split(require_key(j, "dataset", "split"));
    return spec;
}

ModelConfig parse_model(const json& j) {
    require_object(j, "model");
    reject_unknown_keys(
        j, "model", {"image_channels", "image_size", "z_dim", "s_dim", "trunk_channels",
                     "fc_width"});
    const int image_size = get_required<int>(j, "model", "image_size");
    const int image_channels = get_required<int>(j, "model", "image_channels");
    ModelConfig defaults;
    try {
        defaults = default_model_config(image_size, image_channels);
    } catch (const ConfigError&) {
        // Leave geometry validation to RunConfig::validate for a uniform
        // error path; defaults here only seed the optional fields.
        defaults.image_size = image_size;
        defaults.image_channels = image_channels;
        defaults.trunk_channels = {32, 64, 128};
        defaults.conv_blocks = 3;
    }
    ModelConfig model = defaults;
    model.z_dim = get_as<int>(j, "model", "z_dim", model.z_dim);
    model.s_dim = get_as<int>(j, "model", "s_dim", model.s_dim);
    model.fc_width = get_as<int>(j, "model", "fc_width", model.fc_width);
    if (j.contains("trunk_channels")) {
        model.trunk_channels =
            get_required<std::vector<int>>(j, "model", "trunk_channels");
        model.conv_blocks = static_cast<int>(model.trunk_channels.size());
    }
    return model;
}

TrainConfig parse_train(const json& j) {
    require_object(j, "train");
    reject_unknown_keys(j, "train",
                        {"iterations", "batch_size", "seed", "learning_rate", "beta1", "beta2",
                         "eps", "kl_weight", "reverse_weight", "checkpoint_every"});
    TrainConfig train;
    train.iterations = get_required<int>(j, "train", "iterations");
    train.batch_size = get_as<int>(j, "train", "batch_size", train.batch_size);
    train.seed = get_required<std::uint64_t>(j, "train", "seed");
    train.adam.learning_rate =
        get_as<double>(j, "train", "learning_rate", train.adam.learning_rate);
    train.adam.beta1 = get_as<double>(j, "train", "beta1", train.adam.beta1);
    train.adam.beta2 = get_as<double>(j, "train", "beta2", train.adam.beta2);
    train.adam.eps = get_as<double>(j, "train", "eps", train.adam.eps);
    train.weights.kl_weight = get_as<double>(j, "train", "kl_weight", train.weights.kl_weight);
    train.weights.reverse_weight =
        get_as<double>(j, "train", "reverse_weight", train.weights.reverse_weight);
    train.checkpoint_every = get_as<int>(j, "train", "checkpoint_every", train.checkpoint_every);
    return train;
}

ProbeConfig parse_probe(const json& j) {
    require_object(j, "probe");
    reject_unknown_keys(j, "probe",
                        {"hidden_units", "epochs", "batch_size", "learning_rate", "seed"});
    ProbeConfig probe;
    probe.hidden_units = get_as<int>(j, "probe", "hidden_units", probe.hidden_units);
    probe.epochs = get_as<int>(j, "probe", "epochs", probe.epochs);
    probe.batch_size = get_as<int>(j, "probe", "batch_size", probe.batch_size);
    probe.learning_rate = get_as<double>(j, "probe", "learning_rate", probe.learning_rate);
    probe.seed = get_required<std::uint64_t>(j, "probe", "seed");
    return probe;
}

}  // namespace

void RunConfig::validate() const {
    model.validate();
    train.validate();
    if (has_probe) probe.validate();
    if (output_dir.empty()) throw ConfigError("config: output_dir must not be empty");

    if (dataset.kind == DatasetKind::toy) {
        dataset.toy.validate();
        if (model.image_size != dataset.toy.image_size)
            throw ConfigError("config: model image_size " + std::to_string(model.image_size) +
                              " does not match toy image_size " +
                              std::to_string(dataset.toy.image_size));
        if (model.image_channels != 3)
            throw ConfigError("config: toy sprites are RGB; model image_channels must be 3");
    } else {
        if (dataset.images_path.empty() || dataset.labels_path.empty())
            throw ConfigError("config: mnist dataset needs both IDX paths");
        if (model.image_channels != 1)
            throw ConfigError("config: mnist is grayscale; model image_channels must be 1");
    }
    for (const double f : dataset.split.fractions)
        if (!(f >= 0.0 && f <= 1.0))
            throw ConfigError("config: split fractions must lie in [0, 1]");
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in.good()) throw IoError("cannot open config file " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw FormatError(path + ": " + e.what());
    }
    require_object(j, "config root");
    reject_unknown_keys(j, "config root",
                        {"dataset", "model", "train", "probe", "output_dir"});

    RunConfig config;
    config.dataset = parse_dataset(require_key(j, "config root", "dataset"));
    config.model = parse_model(require_key(j, "config root", "model"));
    config.train = parse_train(require_key(j, "config root", "train"));
    if (j.contains("probe")) {
        config.probe = parse_probe(j["probe"]);
        config.has_probe = true;
    }
    config.output_dir = get_required<std::string>(j, "config root", "output_dir");
    config.train.output_dir = config.output_dir;
    config.validate();
    return config;
}

LabeledImageDataset load_run_dataset(const DatasetSpec& spec) {
    LabeledImageDataset dataset;
    if (spec.kind == DatasetKind::mnist)
        dataset = load_mnist_idx(spec.images_path, spec.labels_path);
    else
        dataset = generate_toy_sprites(spec.toy, spec.toy_seed);
    return split_dataset(dataset, spec.split.fractions, spec.split.seed,
                         spec.split.disjoint_identities);
}

}  // namespace cyclevae
