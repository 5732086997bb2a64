#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "cyclevae/data.hpp"
#include "cyclevae/eval.hpp"
#include "cyclevae/model.hpp"
#include "cyclevae/train.hpp"

namespace cyclevae {

// Strict JSON run configuration. Unknown keys are rejected at every level
// and every random seed must be written out explicitly, so a config file
// pins a run completely.

enum class DatasetKind { mnist, toy };

struct SplitSpec {
    std::array<double, 3> fractions{0.8, 0.1, 0.1};
    std::uint64_t seed = 0;
    bool disjoint_identities = false;
};

struct DatasetSpec {
    DatasetKind kind = DatasetKind::toy;
    std::string images_path;  // mnist: IDX image file
    std::string labels_path;  // mnist: IDX label file
    ToySpriteConfig toy;
    std::uint64_t toy_seed = 0;
    SplitSpec split;
};

struct RunConfig {
    DatasetSpec dataset;
    ModelConfig model;
    TrainConfig train;
    ProbeConfig probe;
    bool has_probe = false;
    std::string output_dir;

    void validate() const;
};

// Parses and validates a config file. Throws IoError when the file cannot
// be read, FormatError on malformed JSON, and ConfigError on schema or
// invariant violations.
RunConfig load_run_config(const std::string& path);

// Loads or generates the configured dataset and applies the split.
LabeledImageDataset load_run_dataset(const DatasetSpec& spec);

}  // namespace cyclevae
