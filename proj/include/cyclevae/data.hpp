#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cyclevae/rng.hpp"
#include "cyclevae/tensor.hpp"

namespace cyclevae {

enum class Split { train = 0, val = 1, test = 2 };

/// Immutable image collection with class labels and per-index split tags.
/// Pixels are stored row-major as [n, channels, height, width] in [0, 1].
struct LabeledImageDataset {
    int channels = 0;
    int height = 0;
    int width = 0;
    int num_classes = 0;
    std::vector<Real> images;
    std::vector<int> labels;
    std::vector<Split> split_tags;  // defaults to all-train on construction

    int count() const { return static_cast<int>(labels.size()); }
    std::size_t image_stride() const {
        return static_cast<std::size_t>(channels) * static_cast<std::size_t>(height) *
               static_cast<std::size_t>(width);
    }
    std::span<const Real> image(int index) const;

    /// Throws ConfigError when sizes, labels, split tags, or the pixel
    /// range break the container invariants.
    void validate() const;
};

/// Reads the big-endian IDX pair (magic 2051 images, 2049 labels) into a
/// dataset scaled to [0, 1] by dividing raw bytes by 255.
LabeledImageDataset load_mnist_idx(const std::string& images_path,
                                   const std::string& labels_path);

/// Writes the dataset back out as an IDX pair, quantizing pixels with
/// round-half-up to bytes. Loading data that originated from bytes is
/// reproduced exactly by a save-load cycle.
void save_mnist_idx(const LabeledImageDataset& dataset, const std::string& images_path,
                    const std::string& labels_path);

struct ToySpriteConfig {
    int num_identities = 10;
    int images_per_identity = 200;
    int image_size = 64;

    void validate() const;
};

constexpr int kSpriteShapeCount = 5;
constexpr int kSpritePaletteCount = 8;

/// Identity factors: which of the 5 shapes and 8 foreground palettes an
/// identity renders. A seeded permutation of all shape x palette combos
/// makes this a pure function of (config, seed, identity).
struct SpriteFactors {
    int shape = 0;
    int palette = 0;
};

SpriteFactors toy_identity_factors(const ToySpriteConfig& config, std::uint64_t seed,
                                   int identity);

/// Renders one RGB sprite into `out` (size 3 * image_size^2). The shape is
/// scaled, rotated (radians), and translated from the canvas center, and
/// drawn with 2x2 supersampling onto a black background.
void render_sprite(std::span<Real> out, int image_size, const SpriteFactors& factors,
                   Real tx, Real ty, Real rotation, Real scale);

/// Procedural stand-in dataset: each identity keeps a fixed shape and
/// palette while every image draws fresh nuisance factors (translation
/// within +-25% of the canvas, rotation within +-45 degrees, scale in
/// [0.7, 1.2]). Centers are clamped so shapes stay on canvas;
/// `clamp_warnings`, when given, receives the number of clamped draws.
LabeledImageDataset generate_toy_sprites(const ToySpriteConfig& config,
                                         std::uint64_t seed,
                                         int* clamp_warnings = nullptr);

/// Tags every index with train/val/test. Sizes follow the fractions by
/// floor plus largest remainder; with disjoint_identities the partition is
/// over class ids, so no identity spans two splits.
LabeledImageDataset split_dataset(const LabeledImageDataset& dataset,
                                  const std::array<double, 3>& fractions,
                                  std::uint64_t seed, bool disjoint_identities);

/// Same-class image pairs for the forward cycle.
struct PairBatch {
    Tensor x1;
    Tensor x2;
    std::vector<int> labels;
};

/// Draws batch_size pairs: a class uniform over the classes with >= 2
/// members in the split, then two distinct member images. Throws
/// ConfigError when no class has two members in the split.
PairBatch sample_similar_pair_batch(const LabeledImageDataset& dataset, Split split,
                                    int batch_size, Rng& rng);

/// Independent uniform draws over the split, any labels.
Tensor sample_image_batch(const LabeledImageDataset& dataset, Split split,
                          int batch_size, Rng& rng);

/// Indices carrying the given split tag, in dataset order.
std::vector<int> split_indices(const LabeledImageDataset& dataset, Split split);

/// Copies the selected images into a [n, c, h, w] tensor.
Tensor gather_images(const LabeledImageDataset& dataset, const std::vector<int>& indices);

}  // namespace cyclevae
