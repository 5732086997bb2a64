#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <zlib.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "cyclevae/errors.hpp"
#include "cyclevae/generation.hpp"
#include "cyclevae/rng.hpp"

using namespace cyclevae;

namespace {

ModelConfig tiny_config() {
    ModelConfig config;
    config.image_channels = 1;
    config.image_size = 8;
    config.z_dim = 3;
    config.s_dim = 4;
    config.trunk_channels = {3, 5};
    config.conv_blocks = 2;
    config.fc_width = 8;
    config.validate();
    return config;
}

Tensor random_images(int n, std::uint64_t seed) {
    Tensor x = Tensor::zeros({n, 1, 8, 8});
    Rng rng(seed);
    auto data = x.mutable_data();
    for (Real& v : data) v = rng.uniform(0.05, 0.95);
    return x;
}

Tensor image_slice(const Tensor& batch, int row) {
    const std::size_t stride = batch.numel() / static_cast<std::size_t>(batch.dim(0));
    const auto src = batch.data().subspan(row * stride, stride);
    return Tensor::from_data({1, batch.dim(1), batch.dim(2), batch.dim(3)},
                             std::vector<Real>(src.begin(), src.end()));
}

bool spans_equal(std::span<const Real> a, std::span<const Real> b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i] != b[i]) return false;
    return true;
}

Tensor reconstruction(const Tensor& image, const ModelParams& params) {
    const LatentCode code = encode(image, params);
    return decode(code.mu, code.s, params);
}

std::vector<unsigned char> slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    return std::vector<unsigned char>((std::istreambuf_iterator<char>(in)),
                                      std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("image grid: storage layout and bounds checks") {
    ImageGrid grid = ImageGrid::create(2, 3, 1, 4, 4);
    CHECK(grid.cells.size() == 2u * 3u * 16u);
    CHECK(grid.cell_stride() == 16u);
    auto cell = grid.mutable_cell(1, 2);
    std::fill(cell.begin(), cell.end(), 0.5);
    CHECK(grid.cell(1, 2)[0] == 0.5);
    CHECK(grid.cell(0, 0)[0] == 0.0);
    CHECK_THROWS_AS(grid.cell(2, 0), UsageError);
    CHECK_THROWS_AS(grid.cell(0, 3), UsageError);
    CHECK_THROWS_AS(ImageGrid::create(0, 1, 1, 4, 4), UsageError);

    grid.cells[0] = 1.5;
    CHECK_THROWS_AS(grid.validate(), UsageError);
    grid.cells[0] = 0.0;
    grid.cells.pop_back();
    CHECK_THROWS_AS(grid.validate(), UsageError);
}

TEST_CASE("swap grid: layout, headers, and code routing") {
    const ModelParams params = init_params(tiny_config(), 3);
    const Tensor row_images = random_images(3, 10);  // specified-code sources
    const Tensor col_images = random_images(2, 11);  // unspecified-code sources

    const ImageGrid grid = swap_grid(row_images, col_images, params);
    CHECK(grid.rows == 3);
    CHECK(grid.cols == 4);
    CHECK(grid.channels == 1);
    CHECK(grid.height == 8);

    const auto corner = grid.cell(0, 0);
    for (const Real v : corner) CHECK(v == 1.0);
    for (int j = 0; j < 3; ++j) {
        const Tensor src = image_slice(row_images, j);
        CHECK(spans_equal(grid.cell(0, j + 1), src.data()));
    }
    for (int i = 0; i < 2; ++i) {
        const Tensor src = image_slice(col_images, i);
        CHECK(spans_equal(grid.cell(i + 1, 0), src.data()));
    }

    // Cell (i, j) must decode mu(col i) with s(row j).
    const LatentCode row_codes = encode(row_images, params);
    const LatentCode col_codes = encode(col_images, params);
    for (int i = 0; i < 2; ++i)
        for (int j = 0; j < 3; ++j) {
            const auto mu = col_codes.mu.data().subspan(i * 3, 3);
            const auto s = row_codes.s.data().subspan(j * 4, 4);
            const Tensor z = Tensor::from_data({1, 3}, std::vector<Real>(mu.begin(), mu.end()));
            const Tensor sc = Tensor::from_data({1, 4}, std::vector<Real>(s.begin(), s.end()));
            const Tensor expected = decode(z, sc, params);
            CHECK(spans_equal(grid.cell(i + 1, j + 1), expected.data()));
        }

    const ImageGrid again = swap_grid(row_images, col_images, params);
    CHECK(grid.cells == again.cells);
}

TEST_CASE("swap grid: self-swap diagonal equals plain reconstructions") {
    const ModelParams params = init_params(tiny_config(), 5);
    const Tensor images = random_images(3, 12);

    const ImageGrid grid = swap_grid(images, images, params);
    for (int i = 0; i < 3; ++i) {
        const Tensor recon = reconstruction(image_slice(images, i), params);
        CHECK(spans_equal(grid.cell(i + 1, i + 1), recon.data()));
    }
}

TEST_CASE("swap grid: input validation") {
    const ModelParams params = init_params(tiny_config(), 6);
    const Tensor ok = random_images(2, 13);
    CHECK_THROWS_AS(swap_grid(Tensor(), ok, params), ShapeError);
    CHECK_THROWS_AS(swap_grid(ok, Tensor::zeros({2, 1, 4, 4}), params), ShapeError);
    CHECK_THROWS_AS(swap_grid(Tensor::zeros({2, 3, 8, 8}), ok, params), ShapeError);
}

TEST_CASE("interpolation grid: corners, midpoint, and degenerate pair") {
    const ModelParams params = init_params(tiny_config(), 7);
    const Tensor a = random_images(1, 20);
    const Tensor b = random_images(1, 21);

    const ImageGrid grid = interpolation_grid(a, b, 3, params);
    CHECK(grid.rows == 3);
    CHECK(grid.cols == 3);

    CHECK(spans_equal(grid.cell(0, 0), reconstruction(a, params).data()));
    CHECK(spans_equal(grid.cell(2, 2), reconstruction(b, params).data()));

    const LatentCode ca = encode(a, params);
    const LatentCode cb = encode(b, params);
    std::vector<Real> z_mid(3), s_mid(4);
    for (int j = 0; j < 3; ++j) z_mid[j] = (ca.mu.data()[j] + cb.mu.data()[j]) / 2.0;
    for (int j = 0; j < 4; ++j) s_mid[j] = (ca.s.data()[j] + cb.s.data()[j]) / 2.0;
    const Tensor mid = decode(Tensor::from_data({1, 3}, z_mid),
                              Tensor::from_data({1, 4}, s_mid), params);
    CHECK(spans_equal(grid.cell(1, 1), mid.data()));

    // Off-diagonal corner: unspecified code from b (row 2), specified from a (col 0).
    const Tensor cross = decode(cb.mu, ca.s, params);
    CHECK(spans_equal(grid.cell(2, 0), cross.data()));

    const ImageGrid flat = interpolation_grid(a, a, 4, params);
    for (int r = 0; r < 4; ++r)
        for (int c = 0; c < 4; ++c) CHECK(spans_equal(flat.cell(r, c), flat.cell(0, 0)));

    CHECK_THROWS_AS(interpolation_grid(a, b, 1, params), UsageError);
    CHECK_THROWS_AS(interpolation_grid(random_images(2, 22), b, 3, params), ShapeError);
}

TEST_CASE("conditional sampling: seeded determinism and shared draws") {
    const ModelParams params = init_params(tiny_config(), 8);
    const Tensor sources = random_images(3, 30);

    Rng rng1(99);
    const ImageGrid grid = conditional_sample(sources, 5, params, rng1);
    CHECK(grid.rows == 3);
    CHECK(grid.cols == 5);

    Rng rng2(99);
    const ImageGrid again = conditional_sample(sources, 5, params, rng2);
    CHECK(grid.cells == again.cells);

    Rng rng3(100);
    const ImageGrid other = conditional_sample(sources, 5, params, rng3);
    CHECK(grid.cells != other.cells);

    // The draw order is one shared z per column: reproduce it by hand.
    Rng manual(99);
    std::vector<Real> z_data(5 * 3);
    for (Real& v : z_data) v = manual.normal();
    Real mean = 0.0;
    for (const Real v : z_data) mean += v;
    mean /= static_cast<Real>(z_data.size());
    CHECK(std::abs(mean) < 4.0 / std::sqrt(static_cast<Real>(z_data.size())));

    const Tensor z = Tensor::from_data({5, 3}, z_data);
    const LatentCode codes = encode(sources, params);
    for (int i = 0; i < 3; ++i) {
        const auto s_row = codes.s.data().subspan(i * 4, 4);
        std::vector<Real> s_rep;
        for (int j = 0; j < 5; ++j) s_rep.insert(s_rep.end(), s_row.begin(), s_row.end());
        const Tensor s = Tensor::from_data({5, 4}, std::move(s_rep));
        const Tensor expected = decode(z, s, params);
        for (int j = 0; j < 5; ++j) {
            const auto want = expected.data().subspan(j * grid.cell_stride(), grid.cell_stride());
            CHECK(spans_equal(grid.cell(i, j), want));
        }
    }

    Rng rng4(1);
    CHECK_THROWS_AS(conditional_sample(sources, 0, params, rng4), UsageError);
}

TEST_CASE("quantization: round-half-up rule and range rejection") {
    CHECK(quantize_pixel(0.0) == 0);
    CHECK(quantize_pixel(1.0) == 255);
    CHECK(quantize_pixel(0.5) == 128);  // 127.5 rounds up
    CHECK(quantize_pixel(127.0 / 255.0) == 127);
    CHECK(quantize_pixel(127.49 / 255.0) == 127);
    CHECK(quantize_pixel(127.51 / 255.0) == 128);
    CHECK_THROWS_AS(quantize_pixel(-0.001), UsageError);
    CHECK_THROWS_AS(quantize_pixel(1.001), UsageError);
    CHECK_THROWS_AS(quantize_pixel(std::nan("")), UsageError);
}

TEST_CASE("canvas: border placement around cells") {
    ImageGrid grid = ImageGrid::create(1, 2, 1, 2, 2);
    auto left = grid.mutable_cell(0, 0);
    std::fill(left.begin(), left.end(), 0.0);
    auto right = grid.mutable_cell(0, 1);
    std::fill(right.begin(), right.end(), 0.5);

    const GridCanvas canvas = render_grid_canvas(grid);
    CHECK(canvas.height == 4);  // 1 row of 2px cells plus borders
    CHECK(canvas.width == 7);   // 2 cols of 2px cells plus 3 borders
    const auto at = [&](int y, int x) { return canvas.bytes[y * canvas.width + x]; };
    for (int x = 0; x < 7; ++x) {
        CHECK(at(0, x) == 255);
        CHECK(at(3, x) == 255);
    }
    for (int y = 0; y < 4; ++y) {
        CHECK(at(y, 0) == 255);
        CHECK(at(y, 3) == 255);
        CHECK(at(y, 6) == 255);
    }
    CHECK(at(1, 1) == 0);
    CHECK(at(2, 2) == 0);
    CHECK(at(1, 4) == 128);
    CHECK(at(2, 5) == 128);
}

TEST_CASE("pgm: write/read roundtrip is exact") {
    ImageGrid grid = ImageGrid::create(2, 2, 1, 3, 3);
    Rng rng(7);
    for (Real& v : grid.cells) v = rng.uniform();

    const GridCanvas canvas = render_grid_canvas(grid);
    const std::string path = "build/test_roundtrip.pgm";
    write_pgm(canvas, path);
    const GridCanvas back = read_pgm(path);
    CHECK(back.channels == 1);
    CHECK(back.width == canvas.width);
    CHECK(back.height == canvas.height);
    CHECK(back.bytes == canvas.bytes);

    write_image(grid, path, ImageFormat::pgm);
    const GridCanvas again = read_pgm(path);
    CHECK(again.bytes == canvas.bytes);
    std::remove(path.c_str());
}

TEST_CASE("pgm: header tolerance and malformed inputs") {
    const std::string path = "build/test_pgm_variants.pgm";
    {
        std::ofstream out(path, std::ios::binary);
        out << "P5\n# a comment line\n3 2\n# another\n255\n";
        const unsigned char pixels[6] = {0, 50, 100, 150, 200, 250};
        out.write(reinterpret_cast<const char*>(pixels), 6);
    }
    const GridCanvas canvas = read_pgm(path);
    CHECK(canvas.width == 3);
    CHECK(canvas.height == 2);
    CHECK(canvas.bytes[5] == 250);

    {
        std::ofstream out(path, std::ios::binary);
        out << "P6\n3 2\n255\n";
    }
    CHECK_THROWS_AS(read_pgm(path), FormatError);
    {
        std::ofstream out(path, std::ios::binary);
        out << "P5\n3 2\n127\n";
    }
    CHECK_THROWS_AS(read_pgm(path), FormatError);
    {
        std::ofstream out(path, std::ios::binary);
        out << "P5\n3 2\n255\n";
        const unsigned char pixels[3] = {1, 2, 3};
        out.write(reinterpret_cast<const char*>(pixels), 3);
    }
    CHECK_THROWS_AS(read_pgm(path), IoError);
    CHECK_THROWS_AS(read_pgm("build/no_such_file.pgm"), IoError);

    GridCanvas color;
    color.channels = 3;
    color.width = 1;
    color.height = 1;
    color.bytes = {9, 9, 9};
    CHECK_THROWS_AS(write_pgm(color, path), UsageError);
    std::remove(path.c_str());
}

TEST_CASE("png: structure, header fields, and payload roundtrip") {
    ImageGrid grid = ImageGrid::create(1, 2, 3, 4, 5);
    Rng rng(17);
    for (Real& v : grid.cells) v = rng.uniform();
    const GridCanvas canvas = render_grid_canvas(grid);
    const std::string path = "build/test_color.png";
    write_image(grid, path, ImageFormat::png);

    const std::vector<unsigned char> bytes = slurp(path);
    const unsigned char signature[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    REQUIRE(bytes.size() > 45);
    for (int i = 0; i < 8; ++i) CHECK(bytes[i] == signature[i]);

    const auto be32 = [&](std::size_t off) {
        return (static_cast<std::uint32_t>(bytes[off]) << 24) |
               (static_cast<std::uint32_t>(bytes[off + 1]) << 16) |
               (static_cast<std::uint32_t>(bytes[off + 2]) << 8) |
               static_cast<std::uint32_t>(bytes[off + 3]);
    };
    CHECK(be32(8) == 13);  // IHDR length
    CHECK(std::string(bytes.begin() + 12, bytes.begin() + 16) == "IHDR");
    CHECK(be32(16) == static_cast<std::uint32_t>(canvas.width));
    CHECK(be32(20) == static_cast<std::uint32_t>(canvas.height));
    CHECK(bytes[24] == 8);  // bit depth
    CHECK(bytes[25] == 2);  // truecolor
    const uLong ihdr_crc = crc32(0L, bytes.data() + 12, 17);
    CHECK(be32(29) == static_cast<std::uint32_t>(ihdr_crc));

    const std::uint32_t idat_len = be32(33);
    REQUIRE(std::string(bytes.begin() + 37, bytes.begin() + 41) == "IDAT");
    const std::size_t raw_size =
        static_cast<std::size_t>(canvas.height) * (1 + canvas.width * canvas.channels);
    std::vector<unsigned char> raw(raw_size);
    uLongf raw_len = raw_size;
    const int rc = uncompress(raw.data(), &raw_len, bytes.data() + 41, idat_len);
    REQUIRE(rc == Z_OK);
    REQUIRE(raw_len == raw_size);
    const std::size_t row_bytes = static_cast<std::size_t>(canvas.width) * canvas.channels;
    for (int y = 0; y < canvas.height; ++y) {
        CHECK(raw[y * (row_bytes + 1)] == 0);
        for (std::size_t x = 0; x < row_bytes; ++x)
            CHECK(raw[y * (row_bytes + 1) + 1 + x] == canvas.bytes[y * row_bytes + x]);
    }
    CHECK(std::string(bytes.end() - 8, bytes.end() - 4) == "IEND");
    std::remove(path.c_str());

    GridCanvas two_channel;
    two_channel.channels = 2;
    two_channel.width = 1;
    two_channel.height = 1;
    two_channel.bytes = {1, 2};
    CHECK_THROWS_AS(write_png(two_channel, path), UsageError);
}

TEST_CASE("grid filenames follow the naming pattern") {
    CHECK(grid_filename("swap", 42, 5, 5, ImageFormat::pgm) == "swap_42_5x5.pgm");
    CHECK(grid_filename("interp", 7, 8, 8, ImageFormat::png) == "interp_7_8x8.png");
    CHECK(grid_filename("sample", 0, 3, 10, ImageFormat::png) == "sample_0_3x10.png");
}
