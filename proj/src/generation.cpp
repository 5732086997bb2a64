#include "cyclevae/generation.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "cyclevae/errors.hpp"

namespace cyclevae {

namespace {

void require_image_batch(const char* what, const Tensor& images, const ModelConfig& config) {
    if (!images.defined() || images.ndim() != 4)
        throw ShapeError(std::string(what) + ": expected a [n, c, h, w] image batch");
    if (images.dim(0) < 1) throw UsageError(std::string(what) + ": empty image batch");
    if (images.dim(1) != config.image_channels || images.dim(2) != config.image_size ||
        images.dim(3) != config.image_size)
        throw ShapeError(std::string(what) + ": image geometry " + std::to_string(images.dim(1)) +
                         "x" + std::to_string(images.dim(2)) + "x" + std::to_string(images.dim(3)) +
                         " does not match the model's " + std::to_string(config.image_channels) +
                         "x" + std::to_string(config.image_size) + "x" +
                         std::to_string(config.image_size));
}

Tensor repeat_row(std::span<const Real> row, int copies) {
    std::vector<Real> data;
    data.reserve(row.size() * static_cast<std::size_t>(copies));
    for (int i = 0; i < copies; ++i) data.insert(data.end(), row.begin(), row.end());
    return Tensor::from_data({copies, static_cast<int>(row.size())}, std::move(data));
}

std::span<const Real> tensor_row(const Tensor& t, int row) {
    const std::size_t stride = t.numel() / static_cast<std::size_t>(t.dim(0));
    return t.data().subspan(static_cast<std::size_t>(row) * stride, stride);
}

void copy_into_cell(ImageGrid& grid, int row, int col, std::span<const Real> pixels) {
    auto dst = grid.mutable_cell(row, col);
    std::copy(pixels.begin(), pixels.end(), dst.begin());
}

void store_decoded_row(ImageGrid& grid, int grid_row, int first_col, const Tensor& decoded) {
    for (int j = 0; j < decoded.dim(0); ++j)
        copy_into_cell(grid, grid_row, first_col + j, tensor_row(decoded, j));
}

// Exact at alpha 0 and 1, and exact when the endpoints agree, so both the
// corner cells and a degenerate (a, a) pair reproduce their sources bitwise.
Real lerp_code(Real a, Real b, Real alpha) {
    if (a == b) return a;
    return (1.0 - alpha) * a + alpha * b;
}

std::vector<std::uint8_t> zlib_deflate(const std::vector<unsigned char>& raw) {
    uLongf bound = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> out(bound);
    const int rc = compress2(out.data(), &bound, raw.data(), static_cast<uLong>(raw.size()),
                             Z_DEFAULT_COMPRESSION);
    if (rc != Z_OK) throw IoError("png: zlib compression failed with code " + std::to_string(rc));
    out.resize(bound);
    return out;
}

void append_u32_be(std::vector<std::uint8_t>& out, std::uint32_t value) {
    out.push_back(static_cast<std::uint8_t>(value >> 24));
    out.push_back(static_cast<std::uint8_t>(value >> 16));
    out.push_back(static_cast<std::uint8_t>(value >> 8));
    out.push_back(static_cast<std::uint8_t>(value));
}

void append_chunk(std::vector<std::uint8_t>& out, const char type[4],
                  const std::vector<std::uint8_t>& payload) {
    append_u32_be(out, static_cast<std::uint32_t>(payload.size()));
    const std::size_t crc_start = out.size();
    out.insert(out.end(), type, type + 4);
    out.insert(out.end(), payload.begin(), payload.end());
    const uLong crc =
        crc32(0L, out.data() + crc_start, static_cast<uInt>(4 + payload.size()));
    append_u32_be(out, static_cast<std::uint32_t>(crc));
}

void write_bytes(const std::string& path, const void* data, std::size_t size) {
    std::ofstream out(path, std::ios::binary);
    if (!out.good()) throw IoError("cannot open " + path + " for writing");
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(size));
    if (!out.good()) throw IoError("failed to write " + path);
}

}  // namespace

ImageGrid ImageGrid::create(int rows, int cols, int channels, int height, int width) {
    if (rows < 1 || cols < 1 || channels < 1 || height < 1 || width < 1)
        throw UsageError("image grid: all dimensions must be positive");
    ImageGrid grid;
    grid.rows = rows;
    grid.cols = cols;
    grid.channels = channels;
    grid.height = height;
    grid.width = width;
    grid.cells.assign(static_cast<std::size_t>(rows) * cols * channels * height * width, 0.0);
    return grid;
}

std::size_t ImageGrid::cell_stride() const {
    return static_cast<std::size_t>(channels) * height * width;
}

std::span<const Real> ImageGrid::cell(int row, int col) const {
    if (row < 0 || row >= rows || col < 0 || col >= cols)
        throw UsageError("image grid: cell (" + std::to_string(row) + ", " + std::to_string(col) +
                         ") outside " + std::to_string(rows) + "x" + std::to_string(cols));
    return std::span<const Real>(cells).subspan(
        (static_cast<std::size_t>(row) * cols + col) * cell_stride(), cell_stride());
}

std::span<Real> ImageGrid::mutable_cell(int row, int col) {
    if (row < 0 || row >= rows || col < 0 || col >= cols)
        throw UsageError("image grid: cell (" + std::to_string(row) + ", " + std::to_string(col) +
                         ") outside " + std::to_string(rows) + "x" + std::to_string(cols));
    return std::span<Real>(cells).subspan(
        (static_cast<std::size_t>(row) * cols + col) * cell_stride(), cell_stride());
}

void ImageGrid::validate() const {
    if (rows < 1 || cols < 1 || channels < 1 || height < 1 || width < 1)
        throw UsageError("image grid: all dimensions must be positive");
    if (cells.size() != static_cast<std::size_t>(rows) * cols * cell_stride())
        throw UsageError("image grid: cell storage size does not match dimensions");
    for (const Real v : cells)
        if (!(v >= 0.0 && v <= 1.0))
            throw UsageError("image grid: pixel value " + std::to_string(v) +
                             " outside [0, 1]");
}

ImageGrid swap_grid(const Tensor& row_images, const Tensor& col_images,
                    const ModelParams& params) {
    const ModelConfig& config = params.config;
    require_image_batch("swap_grid row images", row_images, config);
    require_image_batch("swap_grid col images", col_images, config);

    const int m = row_images.dim(0);
    const int n = col_images.dim(0);
    ImageGrid grid = ImageGrid::create(n + 1, m + 1, config.image_channels, config.image_size,
                                       config.image_size);

    // White corner, then the source images along the header row and column.
    auto corner = grid.mutable_cell(0, 0);
    std::fill(corner.begin(), corner.end(), 1.0);
    for (int j = 0; j < m; ++j) copy_into_cell(grid, 0, j + 1, tensor_row(row_images, j));
    for (int i = 0; i < n; ++i) copy_into_cell(grid, i + 1, 0, tensor_row(col_images, i));

    const Tensor s_codes = encode(row_images, params).s;
    const Tensor z_codes = encode(col_images, params).mu;
    for (int i = 0; i < n; ++i) {
        const Tensor z_row = repeat_row(tensor_row(z_codes, i), m);
        const Tensor decoded = decode(z_row, s_codes, params);
        store_decoded_row(grid, i + 1, 1, decoded);
    }
    grid.validate();
    return grid;
}

ImageGrid interpolation_grid(const Tensor& corner_a, const Tensor& corner_b, int steps,
                             const ModelParams& params) {
    const ModelConfig& config = params.config;
    require_image_batch("interpolation corner a", corner_a, config);
    require_image_batch("interpolation corner b", corner_b, config);
    if (corner_a.dim(0) != 1 || corner_b.dim(0) != 1)
        throw ShapeError("interpolation corners must be single [1, c, h, w] images");
    if (steps < 2)
        throw UsageError("interpolation_grid: steps must be >= 2, got " + std::to_string(steps));

    const LatentCode code_a = encode(corner_a, params);
    const LatentCode code_b = encode(corner_b, params);
    const auto za = code_a.mu.data();
    const auto zb = code_b.mu.data();
    const auto sa = code_a.s.data();
    const auto sb = code_b.s.data();

    ImageGrid grid = ImageGrid::create(steps, steps, config.image_channels, config.image_size,
                                       config.image_size);

    // Specified codes for one full row: column c sits at fraction c/(steps-1).
    std::vector<Real> s_row_data;
    s_row_data.reserve(static_cast<std::size_t>(steps) * config.s_dim);
    for (int c = 0; c < steps; ++c) {
        const Real alpha = static_cast<Real>(c) / static_cast<Real>(steps - 1);
        for (int j = 0; j < config.s_dim; ++j)
            s_row_data.push_back(lerp_code(sa[j], sb[j], alpha));
    }
    const Tensor s_row = Tensor::from_data({steps, config.s_dim}, std::move(s_row_data));

    for (int r = 0; r < steps; ++r) {
        const Real alpha = static_cast<Real>(r) / static_cast<Real>(steps - 1);
        std::vector<Real> z_data;
        z_data.reserve(static_cast<std::size_t>(steps) * config.z_dim);
        for (int c = 0; c < steps; ++c)
            for (int j = 0; j < config.z_dim; ++j)
                z_data.push_back(lerp_code(za[j], zb[j], alpha));
        const Tensor z_row = Tensor::from_data({steps, config.z_dim}, std::move(z_data));
        store_decoded_row(grid, r, 0, decode(z_row, s_row, params));
    }
    grid.validate();
    return grid;
}

ImageGrid conditional_sample(const Tensor& source_images, int samples_per_source,
                             const ModelParams& params, Rng& rng) {
    const ModelConfig& config = params.config;
    require_image_batch("conditional_sample sources", source_images, config);
    if (samples_per_source < 1)
        throw UsageError("conditional_sample: samples_per_source must be >= 1, got " +
                         std::to_string(samples_per_source));

    const int k = source_images.dim(0);
    const int n = samples_per_source;

    // One shared set of prior draws; column j shows draw j for every source.
    std::vector<Real> z_data;
    z_data.reserve(static_cast<std::size_t>(n) * config.z_dim);
    for (int j = 0; j < n * config.z_dim; ++j) z_data.push_back(rng.normal());
    const Tensor z_draws = Tensor::from_data({n, config.z_dim}, std::move(z_data));

    const Tensor s_codes = encode(source_images, params).s;
    ImageGrid grid =
        ImageGrid::create(k, n, config.image_channels, config.image_size, config.image_size);
    for (int i = 0; i < k; ++i) {
        const Tensor s_rep = repeat_row(tensor_row(s_codes, i), n);
        store_decoded_row(grid, i, 0, decode(z_draws, s_rep, params));
    }
    grid.validate();
    return grid;
}

unsigned char quantize_pixel(Real value) {
    if (!(value >= 0.0 && value <= 1.0))
        throw UsageError("pixel value " + std::to_string(value) + " outside [0, 1]");
    return static_cast<unsigned char>(std::floor(value * 255.0 + 0.5));
}

GridCanvas render_grid_canvas(const ImageGrid& grid) {
    grid.validate();
    GridCanvas canvas;
    canvas.channels = grid.channels;
    canvas.height = grid.rows * grid.height + grid.rows + 1;
    canvas.width = grid.cols * grid.width + grid.cols + 1;
    canvas.bytes.assign(
        static_cast<std::size_t>(canvas.height) * canvas.width * canvas.channels, 255);

    for (int r = 0; r < grid.rows; ++r)
        for (int c = 0; c < grid.cols; ++c) {
            const auto pixels = grid.cell(r, c);
            const int top = r * (grid.height + 1) + 1;
            const int left = c * (grid.width + 1) + 1;
            for (int y = 0; y < grid.height; ++y)
                for (int x = 0; x < grid.width; ++x)
                    for (int ch = 0; ch < grid.channels; ++ch) {
                        const Real v = pixels[(static_cast<std::size_t>(ch) * grid.height + y) *
                                                  grid.width +
                                              x];
                        canvas.bytes[(static_cast<std::size_t>(top + y) * canvas.width +
                                      (left + x)) *
                                         canvas.channels +
                                     ch] = quantize_pixel(v);
                    }
        }
    return canvas;
}

void write_pgm(const GridCanvas& canvas, const std::string& path) {
    if (canvas.channels != 1)
        throw UsageError("pgm supports single-channel images, got " +
                         std::to_string(canvas.channels) + " channels");
    if (canvas.bytes.size() != static_cast<std::size_t>(canvas.height) * canvas.width)
        throw UsageError("pgm: canvas byte count does not match its dimensions");
    char header[64];
    const int header_len =
        std::snprintf(header, sizeof(header), "P5\n%d %d\n255\n", canvas.width, canvas.height);
    std::vector<unsigned char> out(header, header + header_len);
    out.insert(out.end(), canvas.bytes.begin(), canvas.bytes.end());
    write_bytes(path, out.data(), out.size());
}

GridCanvas read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in.good()) throw IoError("cannot open " + path + " for reading");

    // Reads one header token, skipping whitespace and # comments. The
    // whitespace byte that terminates the token is consumed, which matches
    // the format's single separator before the pixel payload.
    auto next_token = [&]() {
        std::string token;
        int ch = in.get();
        while (ch != EOF && (std::isspace(ch) || ch == '#')) {
            if (ch == '#')
                while (ch != EOF && ch != '\n') ch = in.get();
            else
                ch = in.get();
        }
        while (ch != EOF && !std::isspace(ch)) {
            token.push_back(static_cast<char>(ch));
            ch = in.get();
        }
        return token;
    };

    const std::string magic = next_token();
    if (magic != "P5") throw FormatError(path + ": expected PGM magic P5, got '" + magic + "'");
    int width = 0, height = 0, maxval = 0;
    try {
        width = std::stoi(next_token());
        height = std::stoi(next_token());
        maxval = std::stoi(next_token());
    } catch (const std::exception&) {
        throw FormatError(path + ": malformed PGM header");
    }
    if (width < 1 || height < 1) throw FormatError(path + ": invalid PGM dimensions");
    if (maxval != 255)
        throw FormatError(path + ": expected maxval 255, got " + std::to_string(maxval));

    GridCanvas canvas;
    canvas.channels = 1;
    canvas.width = width;
    canvas.height = height;
    canvas.bytes.resize(static_cast<std::size_t>(width) * height);
    in.read(reinterpret_cast<char*>(canvas.bytes.data()),
            static_cast<std::streamsize>(canvas.bytes.size()));
    if (in.gcount() != static_cast<std::streamsize>(canvas.bytes.size()))
        throw IoError(path + ": PGM pixel payload truncated");
    return canvas;
}

void write_png(const GridCanvas& canvas, const std::string& path) {
    if (canvas.channels != 1 && canvas.channels != 3)
        throw UsageError("png supports 1 or 3 channels, got " + std::to_string(canvas.channels));
    if (canvas.bytes.size() !=
        static_cast<std::size_t>(canvas.height) * canvas.width * canvas.channels)
        throw UsageError("png: canvas byte count does not match its dimensions");

    const std::size_t row_bytes = static_cast<std::size_t>(canvas.width) * canvas.channels;
    std::vector<unsigned char> raw;
    raw.reserve(static_cast<std::size_t>(canvas.height) * (row_bytes + 1));
    for (int y = 0; y < canvas.height; ++y) {
        raw.push_back(0);  // filter type none
        raw.insert(raw.end(), canvas.bytes.begin() + y * row_bytes,
                   canvas.bytes.begin() + (y + 1) * row_bytes);
    }

    std::vector<std::uint8_t> ihdr;
    append_u32_be(ihdr, static_cast<std::uint32_t>(canvas.width));
    append_u32_be(ihdr, static_cast<std::uint32_t>(canvas.height));
    ihdr.push_back(8);                                   // bit depth
    ihdr.push_back(canvas.channels == 1 ? 0 : 2);        // grayscale or truecolor
    ihdr.push_back(0);                                   // compression
    ihdr.push_back(0);                                   // filter
    ihdr.push_back(0);                                   // interlace

    std::vector<std::uint8_t> out = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    append_chunk(out, "IHDR", ihdr);
    append_chunk(out, "IDAT", zlib_deflate(raw));
    append_chunk(out, "IEND", {});
    write_bytes(path, out.data(), out.size());
}

void write_image(const ImageGrid& grid, const std::string& path, ImageFormat format) {
    const GridCanvas canvas = render_grid_canvas(grid);
    if (format == ImageFormat::pgm)
        write_pgm(canvas, path);
    else
        write_png(canvas, path);
}

std::string grid_filename(const std::string& mode, std::uint64_t seed, int rows, int cols,
                          ImageFormat format) {
    return mode + "_" + std::to_string(seed) + "_" + std::to_string(rows) + "x" +
           std::to_string(cols) + (format == ImageFormat::pgm ? ".pgm" : ".png");
}

}  // namespace cyclevae
