#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cyclevae/data.hpp"
#include "cyclevae/model.hpp"

namespace cyclevae {

// Quantitative disentanglement measurement. A probe classifier is trained
// separately on each latent space; high accuracy from the specified space
// and chance-level accuracy from the unspecified space indicate that
// identity information lives where it should.

enum class EmbeddingSource { z_space, s_space };

struct EmbeddingMatrix {
    int dim = 0;
    int num_classes = 0;
    EmbeddingSource source = EmbeddingSource::z_space;
    std::vector<Real> vectors;  // row-major [count, dim]
    std::vector<int> labels;    // one class index per row

    int count() const { return static_cast<int>(labels.size()); }
    std::span<const Real> row(int i) const;
    void validate() const;
};

// Encodes every image in the dataset and keeps the posterior mean (z_space)
// or the specified code (s_space). Row i corresponds to image i.
EmbeddingMatrix extract_embeddings(const ModelParams& params,
                                   const LabeledImageDataset& dataset,
                                   EmbeddingSource source);

// Keeps only the rows whose split tag matches. The matrix must have been
// extracted from this dataset (row counts must agree).
EmbeddingMatrix filter_embeddings(const EmbeddingMatrix& all,
                                  const LabeledImageDataset& dataset, Split split);

struct ProbeConfig {
    int hidden_units = 256;
    int epochs = 30;
    int batch_size = 128;
    Real learning_rate = 1e-3;
    std::uint64_t seed = 0;

    void validate() const;
};

// Two-layer classifier: input -> hidden (ReLU) -> logits. Inputs are
// standardized with the training set's per-dimension mean and deviation so
// the probe is insensitive to embedding scale; empty vectors mean identity.
struct ProbeClassifier {
    Tensor w1;  // [hidden, dim]
    Tensor b1;  // [hidden]
    Tensor w2;  // [classes, hidden]
    Tensor b2;  // [classes]
    std::vector<Real> feature_mean;
    std::vector<Real> feature_scale;

    int input_dim() const;
    int num_classes() const;
};

// Trains the probe with softmax cross-entropy and Adam on seeded shuffled
// mini-batches. Deterministic per seed. Requires at least two classes
// present in the training rows.
ProbeClassifier train_probe(const EmbeddingMatrix& train, const ProbeConfig& config);

// Argmax class per row; ties resolve to the lowest class index.
std::vector<int> probe_predictions(const ProbeClassifier& probe,
                                   const EmbeddingMatrix& embeddings);

// Fraction of rows whose predicted class matches the label.
Real probe_accuracy(const ProbeClassifier& probe, const EmbeddingMatrix& embeddings);

struct PcaProjection {
    std::vector<Real> coords;  // row-major [count, 2]
    std::array<Real, 2> component_variance{0.0, 0.0};
    bool degenerate = false;
};

// Projects the rows onto the top two principal components of the centered
// data. Component variances are non-increasing; each axis is sign-fixed so
// the loading of largest magnitude is positive. All-identical input rows
// produce a zero projection with the degenerate flag set.
PcaProjection pca_project_2d(const EmbeddingMatrix& embeddings);

struct EvalReport {
    Real z_train_acc = 0.0;
    Real z_test_acc = 0.0;
    Real s_train_acc = 0.0;
    Real s_test_acc = 0.0;
    int z_dim = 0;
    int s_dim = 0;
    int num_classes = 0;
    int train_count = 0;
    int test_count = 0;
    ProbeConfig probe;

    std::string table() const;
    void save_key_values(const std::string& path) const;
};

// Full pipeline: extract both embedding spaces, train a probe on the train
// rows of each, and report train/test accuracies for both spaces.
EvalReport evaluate_disentanglement(const ModelParams& params,
                                    const LabeledImageDataset& dataset,
                                    const ProbeConfig& config);

}  // namespace cyclevae
