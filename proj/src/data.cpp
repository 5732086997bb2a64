#include "cyclevae/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numeric>
#include <utility>

#include "cyclevae/errors.hpp"

namespace cyclevae {

std::span<const Real> LabeledImageDataset::image(int index) const {
    if (index < 0 || index >= count())
        throw UsageError("dataset: image index " + std::to_string(index) +
                         " out of range [0, " + std::to_string(count()) + ")");
    return std::span<const Real>(images).subspan(
        static_cast<std::size_t>(index) * image_stride(), image_stride());
}

void LabeledImageDataset::validate() const {
    if (channels < 1 || height < 1 || width < 1)
        throw ConfigError("dataset: non-positive image geometry");
    if (num_classes < 1) throw ConfigError("dataset: num_classes must be >= 1");
    if (images.size() != static_cast<std::size_t>(count()) * image_stride())
        throw ConfigError("dataset: pixel buffer holds " + std::to_string(images.size()) +
                          " values for " + std::to_string(count()) + " images");
    if (split_tags.size() != labels.size())
        throw ConfigError("dataset: split tags out of step with labels");
    for (int label : labels)
        if (label < 0 || label >= num_classes)
            throw ConfigError("dataset: label " + std::to_string(label) +
                              " outside [0, " + std::to_string(num_classes) + ")");
    for (Real v : images)
        if (!(v >= 0.0 && v <= 1.0))
            throw ConfigError("dataset: pixel value " + std::to_string(v) +
                              " outside [0, 1]");
}

namespace {

constexpr std::uint32_t kIdxImagesMagic = 2051;
constexpr std::uint32_t kIdxLabelsMagic = 2049;

std::uint32_t read_u32_be(std::istream& is, const std::string& path) {
    unsigned char bytes[4];
    if (!is.read(reinterpret_cast<char*>(bytes), 4))
        throw IoError("idx: truncated header in " + path);
    return (static_cast<std::uint32_t>(bytes[0]) << 24) |
           (static_cast<std::uint32_t>(bytes[1]) << 16) |
           (static_cast<std::uint32_t>(bytes[2]) << 8) |
           static_cast<std::uint32_t>(bytes[3]);
}

void write_u32_be(std::ostream& os, std::uint32_t v) {
    const char bytes[4] = {
        static_cast<char>((v >> 24) & 0xff), static_cast<char>((v >> 16) & 0xff),
        static_cast<char>((v >> 8) & 0xff), static_cast<char>(v & 0xff)};
    os.write(bytes, 4);
}

std::vector<unsigned char> read_payload(std::istream& is, std::size_t n,
                                        const std::string& path) {
    std::vector<unsigned char> bytes(n);
    if (!is.read(reinterpret_cast<char*>(bytes.data()),
                 static_cast<std::streamsize>(n)))
        throw IoError("idx: truncated payload in " + path + ", expected " +
                      std::to_string(n) + " bytes");
    is.peek();
    if (!is.eof()) throw FormatError("idx: trailing bytes after payload in " + path);
    return bytes;
}

}  // namespace

LabeledImageDataset load_mnist_idx(const std::string& images_path,
                                   const std::string& labels_path) {
    std::ifstream imgs(images_path, std::ios::binary);
    if (!imgs) throw IoError("idx: cannot open " + images_path);
    const std::uint32_t images_magic = read_u32_be(imgs, images_path);
    if (images_magic != kIdxImagesMagic)
        throw FormatError("idx: magic " + std::to_string(images_magic) + " in " +
                          images_path + ", expected " + std::to_string(kIdxImagesMagic));
    const std::uint32_t image_count = read_u32_be(imgs, images_path);
    const std::uint32_t rows = read_u32_be(imgs, images_path);
    const std::uint32_t cols = read_u32_be(imgs, images_path);
    if (rows == 0 || cols == 0 || rows > 4096 || cols > 4096)
        throw FormatError("idx: implausible geometry " + std::to_string(rows) + "x" +
                          std::to_string(cols) + " in " + images_path);
    const auto pixels = read_payload(
        imgs, static_cast<std::size_t>(image_count) * rows * cols, images_path);

    std::ifstream lbls(labels_path, std::ios::binary);
    if (!lbls) throw IoError("idx: cannot open " + labels_path);
    const std::uint32_t labels_magic = read_u32_be(lbls, labels_path);
    if (labels_magic != kIdxLabelsMagic)
        throw FormatError("idx: magic " + std::to_string(labels_magic) + " in " +
                          labels_path + ", expected " + std::to_string(kIdxLabelsMagic));
    const std::uint32_t label_count = read_u32_be(lbls, labels_path);
    if (label_count != image_count)
        throw FormatError("idx: " + std::to_string(image_count) + " images in " +
                          images_path + " but " + std::to_string(label_count) +
                          " labels in " + labels_path);
    const auto raw_labels = read_payload(lbls, label_count, labels_path);

    LabeledImageDataset dataset;
    dataset.channels = 1;
    dataset.height = static_cast<int>(rows);
    dataset.width = static_cast<int>(cols);
    dataset.num_classes = 10;
    dataset.images.resize(pixels.size());
    for (std::size_t i = 0; i < pixels.size(); ++i)
        dataset.images[i] = static_cast<Real>(pixels[i]) / 255.0;
    dataset.labels.assign(raw_labels.begin(), raw_labels.end());
    dataset.split_tags.assign(dataset.labels.size(), Split::train);
    dataset.validate();
    return dataset;
}

void save_mnist_idx(const LabeledImageDataset& dataset, const std::string& images_path,
                    const std::string& labels_path) {
    if (dataset.channels != 1)
        throw UsageError("idx: only single-channel datasets can be saved");
    std::ofstream imgs(images_path, std::ios::binary | std::ios::trunc);
    if (!imgs) throw IoError("idx: cannot open " + images_path + " for writing");
    write_u32_be(imgs, kIdxImagesMagic);
    write_u32_be(imgs, static_cast<std::uint32_t>(dataset.count()));
    write_u32_be(imgs, static_cast<std::uint32_t>(dataset.height));
    write_u32_be(imgs, static_cast<std::uint32_t>(dataset.width));
    for (Real v : dataset.images) {
        const int byte = static_cast<int>(std::floor(v * 255.0 + 0.5));
        imgs.put(static_cast<char>(std::clamp(byte, 0, 255)));
    }
    if (!imgs) throw IoError("idx: write failed for " + images_path);

    std::ofstream lbls(labels_path, std::ios::binary | std::ios::trunc);
    if (!lbls) throw IoError("idx: cannot open " + labels_path + " for writing");
    write_u32_be(lbls, kIdxLabelsMagic);
    write_u32_be(lbls, static_cast<std::uint32_t>(dataset.count()));
    for (int label : dataset.labels) lbls.put(static_cast<char>(label));
    if (!lbls) throw IoError("idx: write failed for " + labels_path);
}

void ToySpriteConfig::validate() const {
    if (num_identities < 1 ||
        num_identities > kSpriteShapeCount * kSpritePaletteCount)
        throw ConfigError("toy sprites: num_identities must lie in [1, " +
                          std::to_string(kSpriteShapeCount * kSpritePaletteCount) +
                          "], got " + std::to_string(num_identities));
    if (images_per_identity < 1)
        throw ConfigError("toy sprites: images_per_identity must be >= 1");
    if (image_size < 16)
        throw ConfigError("toy sprites: image_size must be >= 16");
}

namespace {

constexpr Real kPalettes[kSpritePaletteCount][3] = {
    {1.00, 0.15, 0.15}, {0.15, 0.95, 0.20}, {0.20, 0.35, 1.00}, {0.95, 0.90, 0.10},
    {0.90, 0.20, 0.90}, {0.10, 0.90, 0.90}, {1.00, 0.55, 0.10}, {0.65, 0.45, 1.00}};

// Shape membership test in the local frame, where the nominal half-extent
// is `r`. Index order: square, circle, triangle, cross, ring.
bool inside_shape(int shape, Real x, Real y, Real r) {
    switch (shape) {
        case 0:
            return std::abs(x) <= r && std::abs(y) <= r;
        case 1:
            return x * x + y * y <= r * r;
        case 2:
            return y >= -r && y <= r && std::abs(x) <= (y + r) * 0.5;
        case 3:
            return (std::abs(x) <= 0.35 * r && std::abs(y) <= r) ||
                   (std::abs(y) <= 0.35 * r && std::abs(x) <= r);
        default: {
            const Real d2 = x * x + y * y;
            return d2 <= r * r && d2 >= 0.30 * r * r;
        }
    }
}

// Seeded shuffle of all shape x palette combinations; identity i takes the
// i-th entry, so factors never collide between identities.
std::vector<SpriteFactors> identity_table(std::uint64_t seed) {
    std::vector<SpriteFactors> combos;
    combos.reserve(static_cast<std::size_t>(kSpriteShapeCount) * kSpritePaletteCount);
    for (int shape = 0; shape < kSpriteShapeCount; ++shape)
        for (int palette = 0; palette < kSpritePaletteCount; ++palette)
            combos.push_back({shape, palette});
    Rng rng(seed ^ 0x9e3779b97f4a7c15ull);
    for (std::size_t i = combos.size() - 1; i > 0; --i)
        std::swap(combos[i], combos[rng.uniform_index(i + 1)]);
    return combos;
}

constexpr Real kSpriteBaseExtent = 0.15;  // nominal half-extent as a canvas fraction
constexpr Real kPi = 3.14159265358979323846;

}  // namespace

SpriteFactors toy_identity_factors(const ToySpriteConfig& config, std::uint64_t seed,
                                   int identity) {
    config.validate();
    if (identity < 0 || identity >= config.num_identities)
        throw UsageError("toy sprites: identity " + std::to_string(identity) +
                         " outside [0, " + std::to_string(config.num_identities) + ")");
    return identity_table(seed)[static_cast<std::size_t>(identity)];
}

void render_sprite(std::span<Real> out, int image_size, const SpriteFactors& factors,
                   Real tx, Real ty, Real rotation, Real scale) {
    const std::size_t plane = static_cast<std::size_t>(image_size) *
                              static_cast<std::size_t>(image_size);
    if (out.size() != 3 * plane)
        throw ShapeError("render_sprite: output span holds " +
                         std::to_string(out.size()) + " values, expected " +
                         std::to_string(3 * plane));
    if (factors.shape < 0 || factors.shape >= kSpriteShapeCount ||
        factors.palette < 0 || factors.palette >= kSpritePaletteCount)
        throw UsageError("render_sprite: factor indices out of range");

    const Real r = kSpriteBaseExtent * static_cast<Real>(image_size);
    const Real cx = 0.5 * static_cast<Real>(image_size) + tx;
    const Real cy = 0.5 * static_cast<Real>(image_size) + ty;
    const Real cos_t = std::cos(rotation);
    const Real sin_t = std::sin(rotation);
    const Real* fg = kPalettes[factors.palette];

    for (int py = 0; py < image_size; ++py) {
        for (int px = 0; px < image_size; ++px) {
            int hits = 0;
            for (int sy = 0; sy < 2; ++sy) {
                for (int sx = 0; sx < 2; ++sx) {
                    const Real gx = static_cast<Real>(px) + 0.25 + 0.5 * sx - cx;
                    const Real gy = static_cast<Real>(py) + 0.25 + 0.5 * sy - cy;
                    // Inverse transform into the local frame.
                    const Real lx = (cos_t * gx + sin_t * gy) / scale;
                    const Real ly = (-sin_t * gx + cos_t * gy) / scale;
                    if (inside_shape(factors.shape, lx, ly, r)) ++hits;
                }
            }
            const Real coverage = static_cast<Real>(hits) / 4.0;
            const std::size_t idx =
                static_cast<std::size_t>(py) * static_cast<std::size_t>(image_size) +
                static_cast<std::size_t>(px);
            for (int c = 0; c < 3; ++c)
                out[static_cast<std::size_t>(c) * plane + idx] = coverage * fg[c];
        }
    }
}

LabeledImageDataset generate_toy_sprites(const ToySpriteConfig& config,
                                         std::uint64_t seed, int* clamp_warnings) {
    config.validate();
    const std::vector<SpriteFactors> table = identity_table(seed);

    LabeledImageDataset dataset;
    dataset.channels = 3;
    dataset.height = config.image_size;
    dataset.width = config.image_size;
    dataset.num_classes = config.num_identities;
    const int n = config.num_identities * config.images_per_identity;
    dataset.images.resize(static_cast<std::size_t>(n) * dataset.image_stride());
    dataset.labels.reserve(static_cast<std::size_t>(n));

    const Real size = static_cast<Real>(config.image_size);
    const Real max_shift = 0.25 * size;
    int clamped = 0;
    Rng rng(seed);
    std::size_t offset = 0;
    for (int identity = 0; identity < config.num_identities; ++identity) {
        const SpriteFactors factors = table[static_cast<std::size_t>(identity)];
        for (int j = 0; j < config.images_per_identity; ++j) {
            Real tx = rng.uniform(-max_shift, max_shift);
            Real ty = rng.uniform(-max_shift, max_shift);
            const Real rotation = rng.uniform(-kPi / 4.0, kPi / 4.0);
            const Real scale = rng.uniform(0.7, 1.2);

            // Keep the whole shape on canvas: bound its reach by the
            // scaled half-extent across the diagonal.
            const Real reach = scale * kSpriteBaseExtent * size * 1.4142135623730951;
            const Real limit = 0.5 * size - reach;
            const Real tx_clamped = std::clamp(tx, -limit, limit);
            const Real ty_clamped = std::clamp(ty, -limit, limit);
            if (tx_clamped != tx || ty_clamped != ty) ++clamped;

            render_sprite(std::span<Real>(dataset.images)
                              .subspan(offset, dataset.image_stride()),
                          config.image_size, factors, tx_clamped, ty_clamped, rotation,
                          scale);
            dataset.labels.push_back(identity);
            offset += dataset.image_stride();
        }
    }
    dataset.split_tags.assign(dataset.labels.size(), Split::train);
    if (clamp_warnings) *clamp_warnings = clamped;
    dataset.validate();
    return dataset;
}

namespace {

/// Floor allocation plus largest-remainder distribution of the leftovers;
/// ties go to the lower bucket index.
std::array<int, 3> split_sizes(const std::array<double, 3>& fractions, int n) {
    double total = 0.0;
    for (double f : fractions) {
        if (!(f >= 0.0) || !std::isfinite(f))
            throw ConfigError("split: fractions must be finite and >= 0");
        total += f;
    }
    if (std::abs(total - 1.0) > 1e-9)
        throw ConfigError("split: fractions sum to " + std::to_string(total) +
                          ", expected 1");
    std::array<int, 3> sizes{};
    std::array<double, 3> remainders{};
    int assigned = 0;
    for (std::size_t i = 0; i < 3; ++i) {
        const double exact = fractions[i] * n;
        sizes[i] = static_cast<int>(std::floor(exact));
        remainders[i] = exact - std::floor(exact);
        assigned += sizes[i];
    }
    std::array<std::size_t, 3> order{0, 1, 2};
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return remainders[a] > remainders[b];
    });
    for (int k = 0; k < n - assigned; ++k) ++sizes[order[static_cast<std::size_t>(k) % 3]];
    return sizes;
}

}  // namespace

LabeledImageDataset split_dataset(const LabeledImageDataset& dataset,
                                  const std::array<double, 3>& fractions,
                                  std::uint64_t seed, bool disjoint_identities) {
    dataset.validate();
    LabeledImageDataset tagged = dataset;
    Rng rng(seed);

    if (disjoint_identities) {
        std::vector<int> ids(static_cast<std::size_t>(dataset.num_classes));
        std::iota(ids.begin(), ids.end(), 0);
        for (std::size_t i = ids.size() - 1; i > 0; --i)
            std::swap(ids[i], ids[rng.uniform_index(i + 1)]);
        const std::array<int, 3> sizes = split_sizes(fractions, dataset.num_classes);
        std::vector<Split> id_split(static_cast<std::size_t>(dataset.num_classes));
        int cursor = 0;
        for (int bucket = 0; bucket < 3; ++bucket)
            for (int k = 0; k < sizes[static_cast<std::size_t>(bucket)]; ++k)
                id_split[static_cast<std::size_t>(ids[static_cast<std::size_t>(cursor++)])] =
                    static_cast<Split>(bucket);
        for (int i = 0; i < dataset.count(); ++i)
            tagged.split_tags[static_cast<std::size_t>(i)] =
                id_split[static_cast<std::size_t>(dataset.labels[static_cast<std::size_t>(i)])];
        return tagged;
    }

    std::vector<int> indices(static_cast<std::size_t>(dataset.count()));
    std::iota(indices.begin(), indices.end(), 0);
    for (std::size_t i = indices.size() - 1; i > 0; --i)
        std::swap(indices[i], indices[rng.uniform_index(i + 1)]);
    const std::array<int, 3> sizes = split_sizes(fractions, dataset.count());
    int cursor = 0;
    for (int bucket = 0; bucket < 3; ++bucket)
        for (int k = 0; k < sizes[static_cast<std::size_t>(bucket)]; ++k)
            tagged.split_tags[static_cast<std::size_t>(
                indices[static_cast<std::size_t>(cursor++)])] = static_cast<Split>(bucket);
    return tagged;
}

std::vector<int> split_indices(const LabeledImageDataset& dataset, Split split) {
    std::vector<int> out;
    for (int i = 0; i < dataset.count(); ++i)
        if (dataset.split_tags[static_cast<std::size_t>(i)] == split) out.push_back(i);
    return out;
}

Tensor gather_images(const LabeledImageDataset& dataset, const std::vector<int>& indices) {
    const std::size_t stride = dataset.image_stride();
    std::vector<Real> buf(indices.size() * stride);
    for (std::size_t k = 0; k < indices.size(); ++k) {
        const auto src = dataset.image(indices[k]);
        std::copy(src.begin(), src.end(), buf.begin() + static_cast<std::ptrdiff_t>(k * stride));
    }
    return Tensor::from_data({static_cast<int>(indices.size()), dataset.channels,
                              dataset.height, dataset.width},
                             std::move(buf), false);
}

PairBatch sample_similar_pair_batch(const LabeledImageDataset& dataset, Split split,
                                    int batch_size, Rng& rng) {
    if (batch_size < 1) throw UsageError("pair sampler: batch_size must be >= 1");
    std::vector<std::vector<int>> members(static_cast<std::size_t>(dataset.num_classes));
    for (int i : split_indices(dataset, split))
        members[static_cast<std::size_t>(dataset.labels[static_cast<std::size_t>(i)])]
            .push_back(i);
    std::vector<int> eligible;
    for (int c = 0; c < dataset.num_classes; ++c)
        if (members[static_cast<std::size_t>(c)].size() >= 2) eligible.push_back(c);
    if (eligible.empty())
        throw ConfigError("pair sampler: no class has two images in the requested split");

    std::vector<int> first, second;
    PairBatch batch;
    for (int k = 0; k < batch_size; ++k) {
        const int cls = eligible[rng.uniform_index(eligible.size())];
        const auto& pool = members[static_cast<std::size_t>(cls)];
        const std::size_t i = rng.uniform_index(pool.size());
        std::size_t j = rng.uniform_index(pool.size() - 1);
        if (j >= i) ++j;
        first.push_back(pool[i]);
        second.push_back(pool[j]);
        batch.labels.push_back(cls);
    }
    batch.x1 = gather_images(dataset, first);
    batch.x2 = gather_images(dataset, second);
    return batch;
}

Tensor sample_image_batch(const LabeledImageDataset& dataset, Split split,
                          int batch_size, Rng& rng) {
    if (batch_size < 1) throw UsageError("image sampler: batch_size must be >= 1");
    const std::vector<int> pool = split_indices(dataset, split);
    if (pool.empty()) throw ConfigError("image sampler: requested split is empty");
    std::vector<int> picks;
    for (int k = 0; k < batch_size; ++k)
        picks.push_back(pool[rng.uniform_index(pool.size())]);
    return gather_images(dataset, picks);
}

}  // namespace cyclevae
