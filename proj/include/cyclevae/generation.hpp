#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "cyclevae/model.hpp"
#include "cyclevae/rng.hpp"

namespace cyclevae {

// Qualitative generative outputs: swap grids, interpolation grids, and
// conditional samples from the prior, rendered to PGM or PNG files. All
// grids decode from posterior means so regeneration is reproducible.

struct ImageGrid {
    int rows = 0;
    int cols = 0;
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<Real> cells;  // [rows, cols, channels, height, width]

    static ImageGrid create(int rows, int cols, int channels, int height, int width);
    std::size_t cell_stride() const;
    std::span<const Real> cell(int row, int col) const;
    std::span<Real> mutable_cell(int row, int col);
    void validate() const;
};

// Grid of identity-pose swaps. Cell (i, j) for i, j >= 1 decodes the
// unspecified code of col_images[i-1] with the specified code of
// row_images[j-1], so the unspecified code is constant along each row and
// the specified code is constant down each column. Row 0 and column 0 hold
// the source images; the corner cell is white.
ImageGrid swap_grid(const Tensor& row_images, const Tensor& col_images,
                    const ModelParams& params);

// steps x steps grid interpolating both codes between two images, each
// given as a [1, c, h, w] tensor. The unspecified code moves from a to b
// down the columns, the specified code along the rows; corner (0, 0)
// reconstructs a and corner (steps-1, steps-1) reconstructs b.
ImageGrid interpolation_grid(const Tensor& corner_a, const Tensor& corner_b, int steps,
                             const ModelParams& params);

// k x n grid: row i decodes the specified code of source_images[i] against
// n draws from the standard normal prior. Draws are shared across rows, so
// each column shows one prior sample rendered with every identity.
ImageGrid conditional_sample(const Tensor& source_images, int samples_per_source,
                             const ModelParams& params, Rng& rng);

enum class ImageFormat { pgm, png };

// Flat 8-bit canvas of a grid with a 1-pixel white border around every
// cell. Quantization is round-half-up: byte = floor(p * 255 + 0.5).
struct GridCanvas {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<unsigned char> bytes;  // row-major, channels interleaved
};

unsigned char quantize_pixel(Real value);
GridCanvas render_grid_canvas(const ImageGrid& grid);

// Raw binary PGM, single channel only. The reader accepts comment lines
// and requires maxval 255.
void write_pgm(const GridCanvas& canvas, const std::string& path);
GridCanvas read_pgm(const std::string& path);

// 8-bit PNG, grayscale or RGB.
void write_png(const GridCanvas& canvas, const std::string& path);

// Renders the grid and dispatches on format. PGM demands a single channel.
void write_image(const ImageGrid& grid, const std::string& path, ImageFormat format);

// Canonical output name: <mode>_<seed>_<rows>x<cols>.<ext>
std::string grid_filename(const std::string& mode, std::uint64_t seed, int rows, int cols,
                          ImageFormat format);

}  // namespace cyclevae
