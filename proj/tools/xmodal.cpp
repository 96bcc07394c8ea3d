#include "xmodal/checkpoint.hpp"
#include "xmodal/dataset_io.hpp"
#include "xmodal/errors.hpp"
#include "xmodal/service.hpp"

#include <CLI11.hpp>
#include <httplib.h>

#include <cstdio>
#include <filesystem>

namespace fs = std::filesystem;
using namespace xmodal;

namespace {

void report_epoch(std::size_t epoch, double validation_loss) {
    std::fprintf(stderr, "epoch %zu  validation %.6f\n", epoch, validation_loss);
}

int run_generate(std::size_t n, std::uint64_t seed, const fs::path& out) {
    const auto ds = generate_cohort(n, seed);
    write_dataset(ds, out);
    const auto c = ds.split_counts();
    std::printf("wrote %zu subjects to %s (train %zu, validation %zu, test %zu)\n", ds.size(), out.c_str(), c.train,
                c.validation, c.test);
    return 0;
}

int run_train(const fs::path& data, const fs::path& out, const TrainConfig& config, bool fit, bool quiet) {
    const auto ds = read_dataset(data);
    auto ckpt = train(ds, config, quiet ? nullptr : report_epoch);
    if (fit) {
        const auto tables = ConditionTables::encode(ckpt, ds);
        ckpt.heads = fit_heads(tables, ds, default_phenotypes());
    }
    save_checkpoint(ckpt, out);
    std::printf("best epoch %zu of %zu, validation loss %.6f (initial %.6f), %.1f s\n", ckpt.epoch_of_best,
                ckpt.epochs_run, ckpt.validation_loss_at_best, ckpt.validation_history.front(), ckpt.train_seconds);
    return 0;
}

int run_embed(const fs::path& data, const fs::path& checkpoint, const fs::path& out, const TsneConfig& config) {
    const auto ds = read_dataset(data);
    const auto ckpt = load_checkpoint(checkpoint);
    if (ckpt.dataset_fingerprint != ds.fingerprint()) {
        throw ArgumentError("checkpoint was trained on dataset " + ckpt.dataset_fingerprint + ", loaded dataset is " +
                            ds.fingerprint());
    }
    EmbeddingSet set;
    for (auto m : {Modality::ecg, Modality::mri}) {
        auto e = embed_modality(latent_table(ckpt, ds, m), m, config);
        std::printf("%s: KL %.4f\n", std::string(to_string(m)).c_str(), e.kl_final);
        set.emplace(m, std::move(e));
    }
    write_embeddings(set, out);
    return 0;
}

int run_serve(const fs::path& data, const fs::path& checkpoint, const fs::path& embeddings, const std::string& host,
              int port) {
    auto ds = read_dataset(data);
    auto ckpt = load_checkpoint(checkpoint);
    EmbeddingSet set;
    if (!embeddings.empty()) set = read_embeddings(embeddings);
    Session session(std::move(ds), std::move(ckpt), std::move(set));
    Api api(session);
    httplib::Server server;
    api.bind(server);
    std::printf("listening on http://%s:%d\n", host.c_str(), port);
    std::fflush(stdout);
    if (!server.listen(host, port)) throw UnavailableError("cannot listen on " + host + ":" + std::to_string(port));
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cross-modal latent space explorer"};
    app.require_subcommand(1);

    std::size_t n = 2000;
    std::uint64_t gen_seed = 7;
    std::string gen_out;
    auto* gen = app.add_subcommand("generate", "Generate a synthetic paired ECG/MRI cohort");
    gen->add_option("-n,--subjects", n, "Number of subjects (>= 30)")->capture_default_str();
    gen->add_option("--seed", gen_seed, "Generator seed")->capture_default_str();
    gen->add_option("-o,--out", gen_out, "Output directory")->required();

    TrainConfig tc;
    std::string train_data, train_out;
    std::string activation = "relu";
    bool no_heads = false, quiet = false;
    auto* tr = app.add_subcommand("train", "Train the cross-modal autoencoder");
    tr->add_option("-d,--data", train_data, "Dataset directory")->required();
    tr->add_option("-o,--out", train_out, "Checkpoint path")->required();
    tr->add_option("--latent-dim", tc.latent_dim)->capture_default_str();
    tr->add_option("--temperature", tc.temperature)->capture_default_str();
    tr->add_option("--contrastive-weight", tc.contrastive_weight)->capture_default_str();
    tr->add_option("--batch-size", tc.batch_size)->capture_default_str();
    tr->add_option("--max-epochs", tc.max_epochs)->capture_default_str();
    tr->add_option("--patience", tc.patience)->capture_default_str();
    tr->add_option("--lr", tc.lr)->capture_default_str();
    tr->add_option("--seed", tc.seed)->capture_default_str();
    tr->add_option("--encoder-hidden", tc.encoder_hidden_width)->capture_default_str();
    tr->add_option("--decoder-hidden", tc.decoder_hidden_width)->capture_default_str();
    tr->add_option("--activation", activation)->capture_default_str();
    tr->add_flag("--no-heads", no_heads, "Skip fitting phenotype heads");
    tr->add_flag("-q,--quiet", quiet, "No per-epoch output");

    TsneConfig ec;
    std::string embed_data, embed_ckpt, embed_out;
    auto* em = app.add_subcommand("embed", "Compute per-modality t-SNE layouts");
    em->add_option("-d,--data", embed_data, "Dataset directory")->required();
    em->add_option("-c,--checkpoint", embed_ckpt, "Checkpoint path")->required();
    em->add_option("-o,--out", embed_out, "Embeddings JSON path")->required();
    em->add_option("--perplexity", ec.perplexity)->capture_default_str();
    em->add_option("--iterations", ec.iterations)->capture_default_str();
    em->add_option("--seed", ec.seed)->capture_default_str();

    std::string serve_data, serve_ckpt, serve_emb, host = "127.0.0.1";
    int port = 8080;
    auto* sv = app.add_subcommand("serve", "Serve the HTTP/JSON API");
    sv->add_option("-d,--data", serve_data, "Dataset directory")->required();
    sv->add_option("-c,--checkpoint", serve_ckpt, "Checkpoint path")->required();
    sv->add_option("-e,--embeddings", serve_emb, "Embeddings JSON (computed at startup if absent)");
    sv->add_option("--host", host)->capture_default_str();
    sv->add_option("-p,--port", port)->envname("XMODAL_PORT")->capture_default_str();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen) return run_generate(n, gen_seed, gen_out);
        if (*tr) {
            tc.hidden_activation = activation_from_string(activation);
            return run_train(train_data, train_out, tc, !no_heads, quiet);
        }
        if (*em) return run_embed(embed_data, embed_ckpt, embed_out, ec);
        if (*sv) return run_serve(serve_data, serve_ckpt, serve_emb, host, port);
    } catch (const Error& e) {
        std::fprintf(stderr, "error [%s]: %s\n", std::string(e.code()).c_str(), e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
