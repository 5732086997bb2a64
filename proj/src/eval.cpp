#include "cyclevae/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>

#include "cyclevae/errors.hpp"
#include "cyclevae/ops.hpp"
#include "cyclevae/optim.hpp"
#include "cyclevae/rng.hpp"

namespace cyclevae {

namespace {

const char* source_name(EmbeddingSource source) {
    return source == EmbeddingSource::z_space ? "z_space" : "s_space";
}

Tensor rows_to_tensor(const EmbeddingMatrix& matrix, const std::vector<int>& rows,
                      const std::vector<Real>& mean, const std::vector<Real>& scale) {
    Tensor x = Tensor::zeros({static_cast<int>(rows.size()), matrix.dim});
    auto out = x.mutable_data();
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto src = matrix.row(rows[r]);
        std::copy(src.begin(), src.end(), out.begin() + r * matrix.dim);
    }
    if (!mean.empty())
        for (std::size_t r = 0; r < rows.size(); ++r)
            for (int j = 0; j < matrix.dim; ++j) {
                Real& v = out[r * static_cast<std::size_t>(matrix.dim) + j];
                v = (v - mean[j]) / scale[j];
            }
    return x;
}

Tensor init_uniform(Shape shape, int fan_in, Rng& rng) {
    Tensor t = Tensor::zeros(shape, true);
    const Real bound = 1.0 / std::sqrt(static_cast<Real>(fan_in));
    auto data = t.mutable_data();
    for (Real& v : data) v = rng.uniform(-bound, bound);
    return t;
}

Tensor probe_logits(const ProbeClassifier& probe, const Tensor& x) {
    return linear(relu(linear(x, probe.w1, probe.b1)), probe.w2, probe.b2);
}

// Symmetric Jacobi eigensolver on a dense d x d matrix. Returns eigenvalues
// and column eigenvectors sorted by eigenvalue, largest first.
void jacobi_eigen(std::vector<Real>& a, int d, std::vector<Real>& eigenvalues,
                  std::vector<Real>& eigenvectors) {
    eigenvectors.assign(static_cast<std::size_t>(d) * d, 0.0);
    for (int i = 0; i < d; ++i) eigenvectors[i * d + i] = 1.0;

    auto off_diagonal_norm = [&]() {
        Real s = 0.0;
        for (int i = 0; i < d; ++i)
            for (int j = i + 1; j < d; ++j) s += a[i * d + j] * a[i * d + j];
        return std::sqrt(s);
    };
    Real scale_ref = 0.0;
    for (int i = 0; i < d; ++i) scale_ref = std::max(scale_ref, std::abs(a[i * d + i]));
    const Real tol = std::max(scale_ref, Real(1.0)) * 1e-14;

    for (int sweep = 0; sweep < 100 && off_diagonal_norm() > tol; ++sweep) {
        for (int p = 0; p < d - 1; ++p) {
            for (int q = p + 1; q < d; ++q) {
                const Real apq = a[p * d + q];
                if (std::abs(apq) <= tol * 1e-3) continue;
                const Real app = a[p * d + p];
                const Real aqq = a[q * d + q];
                const Real theta = (aqq - app) / (2.0 * apq);
                const Real t = (theta >= 0.0 ? 1.0 : -1.0) /
                               (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const Real c = 1.0 / std::sqrt(t * t + 1.0);
                const Real s = t * c;
                for (int k = 0; k < d; ++k) {
                    const Real akp = a[k * d + p];
                    const Real akq = a[k * d + q];
                    a[k * d + p] = c * akp - s * akq;
                    a[k * d + q] = s * akp + c * akq;
                }
                for (int k = 0; k < d; ++k) {
                    const Real apk = a[p * d + k];
                    const Real aqk = a[q * d + k];
                    a[p * d + k] = c * apk - s * aqk;
                    a[q * d + k] = s * apk + c * aqk;
                }
                for (int k = 0; k < d; ++k) {
                    const Real vkp = eigenvectors[k * d + p];
                    const Real vkq = eigenvectors[k * d + q];
                    eigenvectors[k * d + p] = c * vkp - s * vkq;
                    eigenvectors[k * d + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    std::vector<int> order(d);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int i, int j) { return a[i * d + i] > a[j * d + j]; });

    std::vector<Real> sorted_values(d);
    std::vector<Real> sorted_vectors(static_cast<std::size_t>(d) * d);
    for (int col = 0; col < d; ++col) {
        sorted_values[col] = a[order[col] * d + order[col]];
        for (int row = 0; row < d; ++row)
            sorted_vectors[row * d + col] = eigenvectors[row * d + order[col]];
    }
    eigenvalues = std::move(sorted_values);
    eigenvectors = std::move(sorted_vectors);
}

}  // namespace

std::span<const Real> EmbeddingMatrix::row(int i) const {
    if (i < 0 || i >= count())
        throw UsageError("embedding row " + std::to_string(i) + " out of range [0, " +
                         std::to_string(count()) + ")");
    return std::span<const Real>(vectors).subspan(static_cast<std::size_t>(i) * dim, dim);
}

void EmbeddingMatrix::validate() const {
    if (dim <= 0) throw ConfigError("embedding matrix: dim must be positive");
    if (num_classes <= 0) throw ConfigError("embedding matrix: num_classes must be positive");
    if (vectors.size() != labels.size() * static_cast<std::size_t>(dim))
        throw ConfigError("embedding matrix: vector storage does not match count * dim");
    for (const Real v : vectors)
        if (!std::isfinite(v)) throw ConfigError("embedding matrix: non-finite entry");
    for (const int label : labels)
        if (label < 0 || label >= num_classes)
            throw ConfigError("embedding matrix: label " + std::to_string(label) +
                              " outside [0, " + std::to_string(num_classes) + ")");
}

EmbeddingMatrix extract_embeddings(const ModelParams& params,
                                   const LabeledImageDataset& dataset,
                                   EmbeddingSource source) {
    dataset.validate();
    const ModelConfig& config = params.config;
    if (dataset.channels != config.image_channels || dataset.height != config.image_size ||
        dataset.width != config.image_size)
        throw ConfigError("extract_embeddings: dataset geometry " +
                          std::to_string(dataset.channels) + "x" +
                          std::to_string(dataset.height) + "x" + std::to_string(dataset.width) +
                          " does not match the model's " +
                          std::to_string(config.image_channels) + "x" +
                          std::to_string(config.image_size) + "x" +
                          std::to_string(config.image_size));

    EmbeddingMatrix matrix;
    matrix.source = source;
    matrix.dim = source == EmbeddingSource::z_space ? config.z_dim : config.s_dim;
    matrix.num_classes = dataset.num_classes;
    matrix.labels = dataset.labels;
    matrix.vectors.reserve(static_cast<std::size_t>(dataset.count()) * matrix.dim);

    constexpr int kChunk = 64;
    const std::size_t image_stride = dataset.image_stride();
    for (int start = 0; start < dataset.count(); start += kChunk) {
        const int rows = std::min(kChunk, dataset.count() - start);
        Tensor batch = Tensor::zeros({rows, dataset.channels, dataset.height, dataset.width});
        auto out = batch.mutable_data();
        std::copy(dataset.images.begin() + start * image_stride,
                  dataset.images.begin() + (start + rows) * image_stride, out.begin());
        const LatentCode code = encode(batch, params);
        const Tensor& chosen = source == EmbeddingSource::z_space ? code.mu : code.s;
        const auto values = chosen.data();
        matrix.vectors.insert(matrix.vectors.end(), values.begin(), values.end());
    }
    matrix.validate();
    return matrix;
}

EmbeddingMatrix filter_embeddings(const EmbeddingMatrix& all,
                                  const LabeledImageDataset& dataset, Split split) {
    if (all.count() != dataset.count())
        throw UsageError("filter_embeddings: matrix has " + std::to_string(all.count()) +
                         " rows but the dataset has " + std::to_string(dataset.count()));
    EmbeddingMatrix out;
    out.dim = all.dim;
    out.num_classes = all.num_classes;
    out.source = all.source;
    for (int i = 0; i < all.count(); ++i) {
        if (dataset.split_tags[i] != split) continue;
        const auto src = all.row(i);
        out.vectors.insert(out.vectors.end(), src.begin(), src.end());
        out.labels.push_back(all.labels[i]);
    }
    return out;
}

void ProbeConfig::validate() const {
    if (hidden_units < 1) throw ConfigError("probe: hidden_units must be >= 1");
    if (epochs < 1) throw ConfigError("probe: epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("probe: batch_size must be >= 1");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate))
        throw ConfigError("probe: learning_rate must be positive and finite");
}

int ProbeClassifier::input_dim() const { return w1.shape()[1]; }

int ProbeClassifier::num_classes() const { return w2.shape()[0]; }

ProbeClassifier train_probe(const EmbeddingMatrix& train, const ProbeConfig& config) {
    config.validate();
    train.validate();
    std::set<int> present(train.labels.begin(), train.labels.end());
    if (present.size() < 2)
        throw ConfigError("train_probe: need at least 2 classes present, found " +
                          std::to_string(present.size()));

    Rng rng(config.seed);
    ProbeClassifier probe;
    probe.w1 = init_uniform({config.hidden_units, train.dim}, train.dim, rng);
    probe.b1 = Tensor::zeros({config.hidden_units}, true);
    probe.w2 = init_uniform({train.num_classes, config.hidden_units}, config.hidden_units, rng);
    probe.b2 = Tensor::zeros({train.num_classes}, true);
    const std::vector<Tensor> trainable = {probe.w1, probe.b1, probe.w2, probe.b2};

    probe.feature_mean.assign(train.dim, 0.0);
    probe.feature_scale.assign(train.dim, 1.0);
    for (int i = 0; i < train.count(); ++i) {
        const auto row = train.row(i);
        for (int j = 0; j < train.dim; ++j) probe.feature_mean[j] += row[j];
    }
    for (Real& m : probe.feature_mean) m /= static_cast<Real>(train.count());
    std::vector<Real> variance(train.dim, 0.0);
    for (int i = 0; i < train.count(); ++i) {
        const auto row = train.row(i);
        for (int j = 0; j < train.dim; ++j) {
            const Real d = row[j] - probe.feature_mean[j];
            variance[j] += d * d;
        }
    }
    for (int j = 0; j < train.dim; ++j) {
        const Real sd = std::sqrt(variance[j] / static_cast<Real>(train.count()));
        if (sd > 0.0) probe.feature_scale[j] = sd;
    }

    AdamState state;
    AdamConfig adam;
    adam.learning_rate = config.learning_rate;

    std::vector<int> order(train.count());
    std::iota(order.begin(), order.end(), 0);
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
        for (int i = train.count() - 1; i > 0; --i) {
            const int j = static_cast<int>(rng.uniform_index(static_cast<std::size_t>(i) + 1));
            std::swap(order[i], order[j]);
        }
        for (int start = 0; start < train.count(); start += config.batch_size) {
            const int rows = std::min(config.batch_size, train.count() - start);
            std::vector<int> batch_rows(order.begin() + start, order.begin() + start + rows);
            const Tensor x =
                rows_to_tensor(train, batch_rows, probe.feature_mean, probe.feature_scale);
            std::vector<int> batch_labels(rows);
            for (int r = 0; r < rows; ++r) batch_labels[r] = train.labels[batch_rows[r]];

            for (Tensor p : trainable) p.zero_grad();
            const Tensor loss = softmax_cross_entropy(probe_logits(probe, x), batch_labels);
            backward(loss);
            adam_update(trainable, state, adam);
        }
    }
    return probe;
}

std::vector<int> probe_predictions(const ProbeClassifier& probe,
                                   const EmbeddingMatrix& embeddings) {
    embeddings.validate();
    if (embeddings.dim != probe.input_dim())
        throw ShapeError("probe expects dim " + std::to_string(probe.input_dim()) +
                         " embeddings, got dim " + std::to_string(embeddings.dim));
    std::vector<int> predictions(embeddings.count());
    constexpr int kChunk = 256;
    for (int start = 0; start < embeddings.count(); start += kChunk) {
        const int rows = std::min(kChunk, embeddings.count() - start);
        std::vector<int> batch_rows(rows);
        std::iota(batch_rows.begin(), batch_rows.end(), start);
        const Tensor logits = probe_logits(
            probe, rows_to_tensor(embeddings, batch_rows, probe.feature_mean,
                                  probe.feature_scale));
        const auto values = logits.data();
        const int classes = probe.num_classes();
        for (int r = 0; r < rows; ++r) {
            int best = 0;
            for (int c = 1; c < classes; ++c)
                if (values[r * classes + c] > values[r * classes + best]) best = c;
            predictions[start + r] = best;
        }
    }
    return predictions;
}

Real probe_accuracy(const ProbeClassifier& probe, const EmbeddingMatrix& embeddings) {
    if (embeddings.count() == 0)
        throw UsageError("probe_accuracy: empty embedding matrix");
    const std::vector<int> predictions = probe_predictions(probe, embeddings);
    int correct = 0;
    for (int i = 0; i < embeddings.count(); ++i)
        if (predictions[i] == embeddings.labels[i]) ++correct;
    return static_cast<Real>(correct) / static_cast<Real>(embeddings.count());
}

PcaProjection pca_project_2d(const EmbeddingMatrix& embeddings) {
    embeddings.validate();
    const int n = embeddings.count();
    const int d = embeddings.dim;
    if (n < 2) throw UsageError("pca_project_2d: need at least 2 rows, got " + std::to_string(n));

    std::vector<Real> mean(d, 0.0);
    for (int i = 0; i < n; ++i) {
        const auto row = embeddings.row(i);
        for (int j = 0; j < d; ++j) mean[j] += row[j];
    }
    for (Real& m : mean) m /= static_cast<Real>(n);

    std::vector<Real> centered(static_cast<std::size_t>(n) * d);
    for (int i = 0; i < n; ++i) {
        const auto row = embeddings.row(i);
        for (int j = 0; j < d; ++j) centered[i * static_cast<std::size_t>(d) + j] = row[j] - mean[j];
    }

    std::vector<Real> covariance(static_cast<std::size_t>(d) * d, 0.0);
    for (int i = 0; i < n; ++i)
        for (int a = 0; a < d; ++a) {
            const Real va = centered[i * static_cast<std::size_t>(d) + a];
            for (int b = a; b < d; ++b)
                covariance[a * static_cast<std::size_t>(d) + b] +=
                    va * centered[i * static_cast<std::size_t>(d) + b];
        }
    for (int a = 0; a < d; ++a)
        for (int b = a; b < d; ++b) {
            covariance[a * static_cast<std::size_t>(d) + b] /= static_cast<Real>(n - 1);
            covariance[b * static_cast<std::size_t>(d) + a] =
                covariance[a * static_cast<std::size_t>(d) + b];
        }

    PcaProjection projection;
    projection.coords.assign(static_cast<std::size_t>(n) * 2, 0.0);

    Real trace = 0.0;
    for (int a = 0; a < d; ++a) trace += covariance[a * static_cast<std::size_t>(d) + a];
    if (trace <= 1e-18) {
        projection.degenerate = true;
        return projection;
    }

    std::vector<Real> eigenvalues;
    std::vector<Real> eigenvectors;
    jacobi_eigen(covariance, d, eigenvalues, eigenvectors);

    const int components = std::min(2, d);
    for (int k = 0; k < components; ++k) {
        int pivot = 0;
        for (int j = 1; j < d; ++j)
            if (std::abs(eigenvectors[j * static_cast<std::size_t>(d) + k]) >
                std::abs(eigenvectors[pivot * static_cast<std::size_t>(d) + k]))
                pivot = j;
        const Real sign =
            eigenvectors[pivot * static_cast<std::size_t>(d) + k] < 0.0 ? -1.0 : 1.0;
        projection.component_variance[k] = std::max(eigenvalues[k], Real(0.0));
        for (int i = 0; i < n; ++i) {
            Real dot = 0.0;
            for (int j = 0; j < d; ++j)
                dot += centered[i * static_cast<std::size_t>(d) + j] *
                       eigenvectors[j * static_cast<std::size_t>(d) + k];
            projection.coords[i * 2 + k] = sign * dot;
        }
    }
    return projection;
}

std::string EvalReport::table() const {
    char buffer[256];
    std::string out = "space   dim   train acc.   test acc.\n";
    std::snprintf(buffer, sizeof(buffer), "z      %4d      %7.4f     %7.4f\n", z_dim,
                  z_train_acc, z_test_acc);
    out += buffer;
    std::snprintf(buffer, sizeof(buffer), "s      %4d      %7.4f     %7.4f\n", s_dim,
                  s_train_acc, s_test_acc);
    out += buffer;
    return out;
}

void EvalReport::save_key_values(const std::string& path) const {
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (f == nullptr) throw IoError("cannot open " + path + " for writing");
    std::fprintf(f, "z_train_acc=%.17g\n", z_train_acc);
    std::fprintf(f, "z_test_acc=%.17g\n", z_test_acc);
    std::fprintf(f, "s_train_acc=%.17g\n", s_train_acc);
    std::fprintf(f, "s_test_acc=%.17g\n", s_test_acc);
    std::fprintf(f, "z_dim=%d\n", z_dim);
    std::fprintf(f, "s_dim=%d\n", s_dim);
    std::fprintf(f, "num_classes=%d\n", num_classes);
    std::fprintf(f, "train_count=%d\n", train_count);
    std::fprintf(f, "test_count=%d\n", test_count);
    std::fprintf(f, "probe_hidden_units=%d\n", probe.hidden_units);
    std::fprintf(f, "probe_epochs=%d\n", probe.epochs);
    std::fprintf(f, "probe_batch_size=%d\n", probe.batch_size);
    std::fprintf(f, "probe_learning_rate=%.17g\n", probe.learning_rate);
    std::fprintf(f, "probe_seed=%llu\n", static_cast<unsigned long long>(probe.seed));
    if (std::fclose(f) != 0) throw IoError("failed to finish writing " + path);
}

EvalReport evaluate_disentanglement(const ModelParams& params,
                                    const LabeledImageDataset& dataset,
                                    const ProbeConfig& config) {
    config.validate();
    EvalReport report;
    report.probe = config;
    report.z_dim = params.config.z_dim;
    report.s_dim = params.config.s_dim;
    report.num_classes = dataset.num_classes;

    for (const EmbeddingSource source : {EmbeddingSource::z_space, EmbeddingSource::s_space}) {
        const EmbeddingMatrix all = extract_embeddings(params, dataset, source);
        const EmbeddingMatrix train = filter_embeddings(all, dataset, Split::train);
        const EmbeddingMatrix test = filter_embeddings(all, dataset, Split::test);
        if (test.count() == 0)
            throw ConfigError(std::string("evaluate_disentanglement: no test rows for ") +
                              source_name(source));
        const ProbeClassifier probe = train_probe(train, config);
        const Real train_acc = probe_accuracy(probe, train);
        const Real test_acc = probe_accuracy(probe, test);
        if (source == EmbeddingSource::z_space) {
            report.z_train_acc = train_acc;
            report.z_test_acc = test_acc;
        } else {
            report.s_train_acc = train_acc;
            report.s_test_acc = test_acc;
        }
        report.train_count = train.count();
        report.test_count = test.count();
    }
    return report;
}

}  // namespace cyclevae
