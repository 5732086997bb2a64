#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "cyclevae/data.hpp"
#include "cyclevae/errors.hpp"
#include "cyclevae/eval.hpp"
#include "cyclevae/generation.hpp"
#include "cyclevae/gradcheck_suite.hpp"
#include "cyclevae/model.hpp"
#include "cyclevae/ops.hpp"
#include "cyclevae/run_config.hpp"
#include "cyclevae/train.hpp"

namespace {

using namespace cyclevae;

constexpr int kExitGeneric = 1;
constexpr int kExitConfig = 2;
constexpr int kExitUsage = 3;
constexpr int kExitFormat = 4;
constexpr int kExitIo = 5;

int cmd_train(const std::string& config_path) {
    const RunConfig config = load_run_config(config_path);
    const LabeledImageDataset dataset = load_run_dataset(config.dataset);
    std::printf("training on %d images (%s) for %d iterations\n", dataset.count(),
                config.dataset.kind == DatasetKind::mnist ? "mnist" : "toy",
                config.train.iterations);
    const FitResult result = fit(dataset, config.model, config.train);
    const TrainRecord& last = result.log.records.back();
    std::printf("done: forward %.6f (recon %.6f, kl %.6f), reverse %.6f\n", last.forward_total,
                last.forward_recon, last.forward_kl, last.reverse);
    std::printf("checkpoint: %s/model.cvae\n", config.output_dir.c_str());
    std::printf("train log:  %s/train_log.txt\n", config.output_dir.c_str());
    return 0;
}

void write_pca_tsv(const EmbeddingMatrix& embeddings, const std::string& path) {
    const PcaProjection projection = pca_project_2d(embeddings);
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (f == nullptr) throw IoError("cannot open " + path + " for writing");
    std::fprintf(f, "# x\ty\tlabel%s\n", projection.degenerate ? "\t(degenerate)" : "");
    for (int i = 0; i < embeddings.count(); ++i)
        std::fprintf(f, "%.8g\t%.8g\t%d\n", projection.coords[2 * i],
                     projection.coords[2 * i + 1], embeddings.labels[i]);
    if (std::fclose(f) != 0) throw IoError("failed to finish writing " + path);
}

int cmd_eval(const std::string& config_path, const std::string& checkpoint_path,
             std::string out_dir) {
    const RunConfig config = load_run_config(config_path);
    if (!config.has_probe)
        throw ConfigError("config " + config_path + " has no probe section");
    if (out_dir.empty()) out_dir = config.output_dir;

    const ModelParams params = load_checkpoint(checkpoint_path);
    const LabeledImageDataset dataset = load_run_dataset(config.dataset);
    const EvalReport report = evaluate_disentanglement(params, dataset, config.probe);

    std::filesystem::create_directories(out_dir);
    report.save_key_values(out_dir + "/eval_report.txt");
    for (const EmbeddingSource source : {EmbeddingSource::z_space, EmbeddingSource::s_space}) {
        const EmbeddingMatrix all = extract_embeddings(params, dataset, source);
        const EmbeddingMatrix test = filter_embeddings(all, dataset, Split::test);
        const char* name = source == EmbeddingSource::z_space ? "pca_z.tsv" : "pca_s.tsv";
        write_pca_tsv(test, out_dir + "/" + name);
    }
    std::fputs(report.table().c_str(), stdout);
    std::printf("report: %s/eval_report.txt\n", out_dir.c_str());
    return 0;
}

int cmd_generate(const std::string& config_path, const std::string& checkpoint_path,
                 const std::string& mode, std::uint64_t seed, std::string out_dir, int count,
                 int steps) {
    if (mode != "swap" && mode != "interp" && mode != "sample")
        throw UsageError("unknown mode '" + mode + "', expected swap, interp, or sample");
    if (count < 1) throw UsageError("--count must be >= 1");

    const RunConfig config = load_run_config(config_path);
    if (out_dir.empty()) out_dir = config.output_dir;
    const ModelParams params = load_checkpoint(checkpoint_path);
    const LabeledImageDataset dataset = load_run_dataset(config.dataset);

    Rng rng(seed);
    ImageGrid grid;
    if (mode == "swap") {
        const Tensor rows = sample_image_batch(dataset, Split::test, count, rng);
        const Tensor cols = sample_image_batch(dataset, Split::test, count, rng);
        grid = swap_grid(rows, cols, params);
    } else if (mode == "interp") {
        const Tensor pair = sample_image_batch(dataset, Split::test, 2, rng);
        const auto stride = pair.numel() / 2;
        const auto data = pair.data();
        const Shape single{1, pair.dim(1), pair.dim(2), pair.dim(3)};
        const Tensor a = Tensor::from_data(
            single, std::vector<Real>(data.begin(), data.begin() + stride));
        const Tensor b = Tensor::from_data(
            single, std::vector<Real>(data.begin() + stride, data.end()));
        grid = interpolation_grid(a, b, steps, params);
    } else {
        const Tensor sources = sample_image_batch(dataset, Split::test, count, rng);
        grid = conditional_sample(sources, count, params, rng);
    }

    const ImageFormat format =
        params.config.image_channels == 1 ? ImageFormat::pgm : ImageFormat::png;
    std::filesystem::create_directories(out_dir);
    const std::string path =
        out_dir + "/" + grid_filename(mode, seed, grid.rows, grid.cols, format);
    write_image(grid, path, format);
    std::printf("wrote %s (%dx%d cells)\n", path.c_str(), grid.rows, grid.cols);
    return 0;
}

int cmd_gradcheck(std::uint64_t seed, const std::string& inject_fault) {
    constexpr Real kOpTolerance = 1e-4;
    constexpr Real kModelTolerance = 1e-3;

    if (!inject_fault.empty()) detail::set_backward_fault(inject_fault, 1.02);
    const std::vector<OpCheck> op_checks = run_op_gradchecks(seed);
    const std::vector<OpCheck> model_checks = run_model_gradchecks(seed);
    detail::set_backward_fault("", 1.0);

    bool all_pass = true;
    std::string worst_name;
    Real worst_margin = 0.0;  // max_rel_error / tolerance
    const auto report = [&](const OpCheck& check, Real tolerance) {
        const bool pass = check.result.max_rel_error < tolerance;
        all_pass = all_pass && pass;
        const Real margin = check.result.max_rel_error / tolerance;
        if (margin > worst_margin) {
            worst_margin = margin;
            worst_name = check.name;
        }
        std::printf("%-24s max_rel %.3e  coords %5zu  tol %.0e  %s\n", check.name.c_str(),
                    check.result.max_rel_error, check.result.coords_checked, tolerance,
                    pass ? "PASS" : "FAIL");
    };
    for (const OpCheck& check : op_checks) report(check, kOpTolerance);
    for (const OpCheck& check : model_checks) report(check, kModelTolerance);
    std::printf("worst: %s at %.3f of its tolerance\n", worst_name.c_str(), worst_margin);
    if (!all_pass) {
        std::fprintf(stderr, "gradient check failed: %s exceeded its tolerance\n",
                     worst_name.c_str());
        return 1;
    }
    return 0;
}

int cmd_make_toy_data(const std::string& config_path, std::string out_dir) {
    const RunConfig config = load_run_config(config_path);
    if (config.dataset.kind != DatasetKind::toy)
        throw ConfigError("make-toy-data requires a config with dataset kind 'toy'");
    if (out_dir.empty()) out_dir = config.output_dir;

    const LabeledImageDataset dataset =
        generate_toy_sprites(config.dataset.toy, config.dataset.toy_seed);
    std::filesystem::create_directories(out_dir);

    std::FILE* manifest = std::fopen((out_dir + "/manifest.tsv").c_str(), "w");
    if (manifest == nullptr) throw IoError("cannot open " + out_dir + "/manifest.tsv");
    for (int i = 0; i < dataset.count(); ++i) {
        GridCanvas canvas;
        canvas.channels = dataset.channels;
        canvas.height = dataset.height;
        canvas.width = dataset.width;
        canvas.bytes.resize(dataset.image_stride());
        const auto pixels = dataset.image(i);
        // Interleave channels for the encoder: planar in, RGB-tuples out.
        const std::size_t plane = static_cast<std::size_t>(dataset.height) * dataset.width;
        for (std::size_t p = 0; p < plane; ++p)
            for (int c = 0; c < dataset.channels; ++c)
                canvas.bytes[p * dataset.channels + c] = quantize_pixel(pixels[c * plane + p]);

        char name[32];
        std::snprintf(name, sizeof(name), "sprite_%05d.png", i);
        write_png(canvas, out_dir + "/" + name);
        std::fprintf(manifest, "%s\t%d\n", name, dataset.labels[i]);
    }
    if (std::fclose(manifest) != 0) throw IoError("failed to finish writing the manifest");
    std::printf("wrote %d sprites and manifest.tsv to %s\n", dataset.count(), out_dir.c_str());
    return 0;
}

template <typename F>
int run_guarded(F&& body) {
    try {
        return body();
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const FormatError& e) {
        std::cerr << "format error: " << e.what() << "\n";
        return kExitFormat;
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return kExitIo;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitGeneric;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"cycle-consistent variational auto-encoder"};
    app.require_subcommand(1);

    std::string config_path;
    std::string checkpoint_path;
    std::string mode;
    std::string out_dir;
    std::string inject_fault;
    std::uint64_t seed = 12345;
    int count = 8;
    int steps = 8;

    CLI::App* train = app.add_subcommand("train", "train a model from a config file");
    train->add_option("--config", config_path, "run config (JSON)")->required();

    CLI::App* eval = app.add_subcommand("eval", "probe-classifier evaluation of a checkpoint");
    eval->add_option("--config", config_path, "run config (JSON)")->required();
    eval->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();
    eval->add_option("--out", out_dir, "report directory (default: config output_dir)");

    CLI::App* generate = app.add_subcommand("generate", "write an image grid from a checkpoint");
    generate->add_option("--config", config_path, "run config (JSON)")->required();
    generate->add_option("--checkpoint", checkpoint_path, "model checkpoint")->required();
    generate->add_option("--mode", mode, "swap | interp | sample")->required();
    generate->add_option("--seed", seed, "sampling seed")->required();
    generate->add_option("--out", out_dir, "output directory (default: config output_dir)");
    generate->add_option("--count", count, "images per grid side (swap, sample)");
    generate->add_option("--steps", steps, "interpolation steps per side");

    CLI::App* gradcheck =
        app.add_subcommand("gradcheck", "finite-difference check of every op and loss");
    gradcheck->add_option("--seed", seed, "input sampling seed");
    gradcheck->add_option("--inject-fault", inject_fault, "corrupt one op's backward rule")
        ->group("");

    CLI::App* make_toy =
        app.add_subcommand("make-toy-data", "render the toy sprite set to image files");
    make_toy->add_option("--config", config_path, "run config (JSON) with a toy dataset")
        ->required();
    make_toy->add_option("--out", out_dir, "output directory (default: config output_dir)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitUsage;
    }

    if (train->parsed()) return run_guarded([&] { return cmd_train(config_path); });
    if (eval->parsed())
        return run_guarded([&] { return cmd_eval(config_path, checkpoint_path, out_dir); });
    if (generate->parsed())
        return run_guarded([&] {
            return cmd_generate(config_path, checkpoint_path, mode, seed, out_dir, count, steps);
        });
    if (gradcheck->parsed()) return run_guarded([&] { return cmd_gradcheck(seed, inject_fault); });
    if (make_toy->parsed())
        return run_guarded([&] { return cmd_make_toy_data(config_path, out_dir); });
    return kExitUsage;
}
