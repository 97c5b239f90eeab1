// Command-line front end for the colorization pipeline: corpus ingestion,
// the two training stages, diverse colorization, evaluation, and the
// gradient self-check. Flags override config-file values, which override
// built-in defaults. Exit codes: 2 for usage problems, 3 for data or
// geometry problems, 4 for numerical failures.
#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "chroma/checkpoint.hpp"
#include "chroma/dataset.hpp"
#include "chroma/error.hpp"
#include "chroma/gradcheck.hpp"
#include "chroma/image_io.hpp"
#include "chroma/pipeline.hpp"

namespace fs = std::filesystem;
using namespace chroma;

namespace {

// Fitting a basis on a small corpus cannot ask for more directions than
// the samples span; quietly use the feasible maximum.
int clamp_pca_k(int requested, int n_samples, int dim) {
    const int feasible = std::min(n_samples - 1, dim);
    if (feasible < 1) throw DataError("corpus too small to fit a color basis");
    if (requested <= feasible) return requested;
    std::cerr << "note: pca components reduced from " << requested << " to " << feasible
              << " for a corpus of " << n_samples << '\n';
    return feasible;
}

struct TrainVaeArgs {
    std::string corpus, out;
    int d = 8, epochs = 30, batch_size = 32, pca_k = 8;
    double lambda_mah = 0.1, lambda_grad = 1e-3, kl_weight = 1e-2, lr = 2e-4;
    std::uint64_t seed = 1;
    bool plain_sse = false, no_batchnorm = false, no_skip = false;
};

void add_train_vae_flags(CLI::App* cmd, TrainVaeArgs& args) {
    cmd->add_option("--corpus", args.corpus, "manifest written by ingest")->required();
    cmd->add_option("--out", args.out, "checkpoint to write")->required();
    cmd->add_option("--d", args.d, "embedding dimension")->capture_default_str();
    cmd->add_option("--epochs", args.epochs)->capture_default_str();
    cmd->add_option("--batch-size", args.batch_size)->capture_default_str();
    cmd->add_option("--pca-k", args.pca_k, "principal directions for the specificity loss")
        ->capture_default_str();
    cmd->add_option("--lambda-mah", args.lambda_mah)->capture_default_str();
    cmd->add_option("--lambda-grad", args.lambda_grad)->capture_default_str();
    cmd->add_option("--kl-weight", args.kl_weight)->capture_default_str();
    cmd->add_option("--lr", args.lr)->capture_default_str();
    cmd->add_option("--seed", args.seed)->capture_default_str();
    cmd->add_flag("--plain-sse", args.plain_sse,
                  "ablation: unweighted squared error instead of the loss stack");
    cmd->add_flag("--no-batchnorm", args.no_batchnorm);
}

void run_train_vae(const TrainVaeArgs& args, VaeConfig::Variant variant) {
    const CorpusManifest manifest = load_manifest(args.corpus);
    const std::vector<ColorField> fields = load_corpus(manifest, &std::cerr);
    const std::vector<ColorField> train = split_fields(manifest, fields, 0);
    if (train.empty()) throw DataError("train split is empty");

    const int dim = 2 * manifest.field_size * manifest.field_size;
    const PcaBasis basis =
        pca_fit_fields(train, clamp_pca_k(args.pca_k, static_cast<int>(train.size()), dim));
    const AbHistogram hist = build_histogram(train);

    VaeConfig config;
    config.field_size = manifest.field_size;
    config.embedding_dim = args.d;
    config.variant = variant;
    config.use_batchnorm = !args.no_batchnorm;
    config.skip_connections = !args.no_skip;
    Rng rng(args.seed);
    VaeModel model(config, rng);

    VaeTrainConfig train_config;
    train_config.epochs = args.epochs;
    train_config.batch_size = args.batch_size;
    train_config.adam.lr = args.lr;
    train_config.seed = args.seed;
    train_config.weights.lambda_mah = args.lambda_mah;
    train_config.weights.lambda_grad = args.lambda_grad;
    train_config.weights.kl_weight = args.kl_weight;
    train_config.plain_sse = args.plain_sse;
    const VaeTrainResult result = train_vae(model, train, basis, hist, train_config, &std::cout);

    // The checkpoint carries the best-epoch snapshot, not the last step.
    NamedTensors live = model.parameters();
    for (auto& [name, tensor] : live)
        for (const auto& [saved_name, saved] : result.best_params)
            if (saved_name == name) *tensor = saved;
    save_checkpoint(args.out, vae_checkpoint(model, basis, hist, args.seed));
    std::cout << "saved " << args.out << " (best epoch " << result.best_epoch << ", total "
              << result.history[static_cast<std::size_t>(result.best_epoch)].total << ")\n";
}

ImageU8 to_rgb(const ImageU8& img) {
    if (img.channels == 3) return img;
    ImageU8 out(img.height, img.width, 3);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < 3; ++c) out.at(y, x, c) = img.at(y, x, 0);
    return out;
}

// One row of field-sized cells: grey input, the k modes, source image.
ImageU8 compose_grid(const std::vector<ImageU8>& cells) {
    const int f = cells.front().height;
    ImageU8 grid(f, f * static_cast<int>(cells.size()), 3);
    for (std::size_t i = 0; i < cells.size(); ++i)
        for (int y = 0; y < f; ++y)
            for (int x = 0; x < f; ++x)
                for (int c = 0; c < 3; ++c)
                    grid.at(y, static_cast<int>(i) * f + x, c) = cells[i].at(y, x, c);
    return grid;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"diverse colorization pipeline"};
    app.require_subcommand(1);
    app.set_config("--config", "", "read flag defaults from a config file");

    // ingest
    std::string ingest_dir;
    int ingest_size = 16;
    std::uint64_t ingest_seed = 1;
    double ingest_frac = 0.2;
    CLI::App* cmd_ingest = app.add_subcommand("ingest", "scan a directory into a corpus");
    cmd_ingest->add_option("--dir", ingest_dir, "image directory")->required();
    cmd_ingest->add_option("--size", ingest_size, "field size")->capture_default_str();
    cmd_ingest->add_option("--seed", ingest_seed, "split seed")->capture_default_str();
    cmd_ingest->add_option("--test-frac", ingest_frac, "test fraction")->capture_default_str();
    cmd_ingest->callback([&] {
        const IngestResult result =
            ingest(ingest_dir, ingest_size, ingest_seed, ingest_frac, &std::cerr);
        const std::string manifest_path = (fs::path(ingest_dir) / "manifest.json").string();
        save_manifest(manifest_path, result.manifest);
        int n_test = 0;
        for (int s : result.manifest.split) n_test += s;
        std::cout << "ingested " << result.fields.size() << " fields (" << result.decoded
                  << " decoded, " << result.cache_hits << " cached, " << result.skipped
                  << " skipped), train " << (result.fields.size() - n_test) << " / test "
                  << n_test << ", manifest " << manifest_path << '\n';
    });

    // train-vae / train-cvae
    TrainVaeArgs vae_args;
    CLI::App* cmd_vae = app.add_subcommand("train-vae", "train the color autoencoder");
    add_train_vae_flags(cmd_vae, vae_args);
    cmd_vae->callback([&] { run_train_vae(vae_args, VaeConfig::Variant::plain); });

    TrainVaeArgs cvae_args;
    CLI::App* cmd_cvae =
        app.add_subcommand("train-cvae", "train the grey-conditioned autoencoder");
    add_train_vae_flags(cmd_cvae, cvae_args);
    cmd_cvae->add_flag("--no-skip", cvae_args.no_skip, "drop grey-to-decoder skip connections");
    cmd_cvae->callback([&] { run_train_vae(cvae_args, VaeConfig::Variant::cvae); });

    // train-mdn
    std::string mdn_corpus, mdn_vae, mdn_out;
    int mdn_components = 8, mdn_epochs = 200, mdn_batch = 8;
    double mdn_sigma_sq = 0.1, mdn_lr = 2e-4;
    std::uint64_t mdn_seed = 1;
    CLI::App* cmd_mdn = app.add_subcommand("train-mdn", "train the grey-to-embedding mixture");
    cmd_mdn->add_option("--corpus", mdn_corpus)->required();
    cmd_mdn->add_option("--vae", mdn_vae, "frozen encoder checkpoint")->required();
    cmd_mdn->add_option("--out", mdn_out)->required();
    cmd_mdn->add_option("--components", mdn_components)->capture_default_str();
    cmd_mdn->add_option("--sigma-sq", mdn_sigma_sq)->capture_default_str();
    cmd_mdn->add_option("--epochs", mdn_epochs)->capture_default_str();
    cmd_mdn->add_option("--batch-size", mdn_batch)->capture_default_str();
    cmd_mdn->add_option("--lr", mdn_lr)->capture_default_str();
    cmd_mdn->add_option("--seed", mdn_seed)->capture_default_str();
    cmd_mdn->callback([&] {
        const CorpusManifest manifest = load_manifest(mdn_corpus);
        VaeModel vae = vae_from_checkpoint(load_checkpoint(mdn_vae));
        if (vae.config().field_size != manifest.field_size)
            throw DataError("vae checkpoint is " + std::to_string(vae.config().field_size) +
                            " pixels but the corpus is " + std::to_string(manifest.field_size));
        const std::vector<ColorField> fields = load_corpus(manifest, &std::cerr);
        const std::vector<ColorField> train = split_fields(manifest, fields, 0);
        if (train.empty()) throw DataError("train split is empty");
        const std::vector<std::pair<Tensor, Tensor>> pairs = embed_corpus(vae, train);

        MdnConfig config;
        config.field_size = vae.config().field_size;
        config.embedding_dim = vae.config().embedding_dim;
        config.components = mdn_components;
        config.sigma_sq = mdn_sigma_sq;
        Rng rng(mdn_seed);
        MdnModel model(config, rng);
        MdnTrainConfig train_config;
        train_config.epochs = mdn_epochs;
        train_config.batch_size = mdn_batch;
        train_config.adam.lr = mdn_lr;
        train_config.seed = mdn_seed;
        train_mdn(model, pairs, train_config, &std::cout);
        save_checkpoint(mdn_out, mdn_checkpoint(model, mdn_seed));
        std::cout << "saved " << mdn_out << '\n';
    });

    // colorize
    std::string col_vae, col_mdn, col_input, col_out;
    int col_k = 5;
    CLI::App* cmd_col = app.add_subcommand("colorize", "emit k diverse colorizations");
    cmd_col->add_option("--vae", col_vae)->required();
    cmd_col->add_option("--mdn", col_mdn)->required();
    cmd_col->add_option("--input", col_input, "grey or color image")->required();
    cmd_col->add_option("--k", col_k, "number of modes")->capture_default_str();
    cmd_col->add_option("--out", col_out, "output directory")->required();
    cmd_col->callback([&] {
        VaeModel vae = vae_from_checkpoint(load_checkpoint(col_vae));
        MdnModel mdn = mdn_from_checkpoint(load_checkpoint(col_mdn));
        const ImageU8 source = read_image(col_input);
        const ImageU8 small = center_crop_resize(source, vae.config().field_size);
        const ColorField field = rgb_to_lab(small);
        const std::vector<ColorField> preds = colorize_topk(vae, mdn, field.L, col_k);

        fs::create_directories(col_out);
        const std::string stem = fs::path(col_input).stem().string();
        std::vector<ImageU8> cells;
        ColorField grey_only{Tensor({2, vae.config().field_size, vae.config().field_size}),
                             field.L};
        cells.push_back(lab_to_rgb(grey_only));
        for (std::size_t i = 0; i < preds.size(); ++i) {
            const ImageU8 img = lab_to_rgb(preds[i]);
            const std::string path =
                (fs::path(col_out) / (stem + "-mode" + std::to_string(i) + ".png")).string();
            write_png(path, img);
            std::cout << path << '\n';
            cells.push_back(img);
        }
        cells.push_back(to_rgb(small));
        const std::string grid_path = (fs::path(col_out) / (stem + "-grid.png")).string();
        write_png(grid_path, compose_grid(cells));
        std::cout << grid_path << '\n';
    });

    // eval
    std::string eval_vae, eval_mdn, eval_corpus, eval_out;
    int eval_k = 5;
    CLI::App* cmd_eval = app.add_subcommand("eval", "score the test split");
    cmd_eval->add_option("--vae", eval_vae)->required();
    cmd_eval->add_option("--mdn", eval_mdn)->required();
    cmd_eval->add_option("--corpus", eval_corpus)->required();
    cmd_eval->add_option("--k", eval_k)->capture_default_str();
    cmd_eval->add_option("--out", eval_out, "CSV report path")->required();
    cmd_eval->callback([&] {
        AbHistogram hist;
        VaeModel vae = vae_from_checkpoint(load_checkpoint(eval_vae), nullptr, &hist);
        MdnModel mdn = mdn_from_checkpoint(load_checkpoint(eval_mdn));
        const CorpusManifest manifest = load_manifest(eval_corpus);
        const std::vector<ColorField> fields = load_corpus(manifest, &std::cerr);
        const EvalReport report = evaluate(vae, mdn, hist, manifest, fields, eval_k);
        std::ofstream out(eval_out);
        if (!out) throw DataError("cannot write " + eval_out);
        out << report_to_csv(report);
        std::cout << report_to_kv(report);
    });

    // gradcheck
    std::string gc_module = "all";
    int gc_trials = 8;
    std::uint64_t gc_seed = 1;
    CLI::App* cmd_gc = app.add_subcommand("gradcheck", "finite-difference gradient audit");
    cmd_gc->add_option("--module", gc_module)
        ->check(CLI::IsMember({"all", "conv", "losses", "mdn"}))
        ->capture_default_str();
    cmd_gc->add_option("--trials", gc_trials, "random problems per operation")
        ->capture_default_str();
    cmd_gc->add_option("--seed", gc_seed)->capture_default_str();
    int gc_exit = 0;
    cmd_gc->callback([&] {
        const GradcheckReport report = gradcheck(gc_module, gc_trials, gc_seed, &std::cout);
        std::cout << "gradcheck " << gc_module << ": " << report.trials << " trials, "
                  << report.failures << " failures, worst rel " << report.worst_rel << '\n';
        for (const std::string& note : report.failure_notes) std::cout << "  " << note << '\n';
        if (!report.passed()) gc_exit = 4;
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const ShapeError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    } catch (const DataError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 4;
    }
    return gc_exit;
}
