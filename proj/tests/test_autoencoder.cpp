#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "xmodal/adam.hpp"
#include "xmodal/autoencoder.hpp"
#include "xmodal/rng.hpp"
#include "xmodal/synth.hpp"

using namespace xmodal;

namespace {

double relative_error(double a, double b) {
    const double scale = std::max({std::abs(a), std::abs(b), 1e-6});
    return std::abs(a - b) / scale;
}

Tensor<double> random_batch(Rng& rng, std::size_t rows, std::size_t cols) {
    Tensor<double> t({rows, cols});
    for (auto& v : t.values()) v = rng.normal();
    return t;
}

// Brute-force symmetric InfoNCE written from the definition.
double reference_infonce(const Tensor<double>& a, const Tensor<double>& b, double tau) {
    const std::size_t n = a.rows(), d = a.cols();
    auto cosine = [&](std::size_t i, std::size_t j) {
        double ab = 0, aa = 0, bb = 0;
        for (std::size_t k = 0; k < d; ++k) {
            ab += a(i, k) * b(j, k);
            aa += a(i, k) * a(i, k);
            bb += b(j, k) * b(j, k);
        }
        return ab / std::sqrt(aa * bb);
    };
    double total = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double row = 0, col = 0;
        for (std::size_t j = 0; j < n; ++j) {
            row += std::exp(cosine(i, j) / tau);
            col += std::exp(cosine(j, i) / tau);
        }
        total += -std::log(std::exp(cosine(i, i) / tau) / row);
        total += -std::log(std::exp(cosine(i, i) / tau) / col);
    }
    return total / (2.0 * static_cast<double>(n));
}

TrainConfig micro_config(std::uint64_t seed) {
    TrainConfig cfg;
    cfg.latent_dim = 3;
    cfg.encoder_hidden_width = 4;
    cfg.decoder_hidden_width = 4;
    cfg.hidden_activation = Activation::tanh;
    cfg.batch_size = 2;
    cfg.seed = seed;
    return cfg;
}

const Dataset& small_cohort() {
    static const Dataset ds = generate_cohort(200, 11);
    return ds;
}

InputScaling train_scaling(const Dataset& ds) {
    const auto ids = ds.ids_in(Split::train);
    return {FeatureScaling::fit(gather_batch(ds, ids, Modality::ecg)),
            FeatureScaling::fit(gather_batch(ds, ids, Modality::mri))};
}

double aligned_fraction(const ModelCheckpoint& ckpt, const Dataset& ds) {
    const auto ids = ds.ids_in(Split::test);
    const auto ze = encode_subjects(ckpt, ds, ids, Modality::ecg);
    const auto zm = encode_subjects(ckpt, ds, ids, Modality::mri);
    const std::size_t n = ids.size(), d = ckpt.latent_dim();
    auto cosine = [&](std::size_t i, std::size_t j) {
        double ab = 0, aa = 0, bb = 0;
        for (std::size_t k = 0; k < d; ++k) {
            ab += ze(i, k) * zm(j, k);
            aa += ze(i, k) * ze(i, k);
            bb += zm(j, k) * zm(j, k);
        }
        return ab / std::sqrt(aa * bb);
    };
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i) {
        double others = 0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j != i) others += cosine(i, j);
        }
        if (cosine(i, i) > others / static_cast<double>(n - 1)) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(n);
}

}  // namespace

TEST_CASE("reconstruction loss basics") {
    const std::vector<float> a{0.5f, -1.0f, 2.0f};
    CHECK(reconstruction_loss<float>(a, a) == 0.0);
    const std::vector<double> zero{0, 0}, one{1, 1};
    CHECK(reconstruction_loss<double>(zero, one) == doctest::Approx(1.0));
    const std::vector<float> b{1.5f, 0.0f, -2.0f};
    CHECK(reconstruction_loss<float>(a, b) == reconstruction_loss<float>(b, a));
    CHECK(reconstruction_loss<float>(a, b) == doctest::Approx((1.0 + 1.0 + 16.0) / 3.0));
    const std::vector<float> short_one{1.0f};
    CHECK_THROWS_AS(reconstruction_loss<float>(a, short_one), DimensionError);
}

TEST_CASE("contrastive loss of a single pair is zero") {
    Tensor<double> a({1, 3}, {1, 2, 3});
    Tensor<double> b({1, 3}, {-1, 0, 4});
    CHECK(contrastive_loss(a, b, 0.1) == 0.0);
}

TEST_CASE("contrastive loss on orthonormal pairs") {
    Tensor<double> e({2, 2}, {1, 0, 0, 1});
    const double expected = std::log(1.0 + std::exp(-1.0));
    const double loss = contrastive_loss(e, e, 1.0);
    CHECK(std::abs(loss - expected) < 1e-6);
    CHECK(std::abs(loss - reference_infonce(e, e, 1.0)) < 1e-12);
    CHECK(std::abs(loss - 0.3133) < 1e-4);
}

TEST_CASE("contrastive loss matches brute force and is positive") {
    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t b = 2 + rng.uniform_index(7);
        const std::size_t d = 1 + rng.uniform_index(6);
        const auto za = random_batch(rng, b, d);
        const auto zb = random_batch(rng, b, d);
        const double tau = rng.uniform(0.05, 2.0);
        const double loss = contrastive_loss(za, zb, tau);
        CHECK(loss > 0.0);
        CHECK(relative_error(loss, reference_infonce(za, zb, tau)) < 1e-10);
    }
}

TEST_CASE("contrastive loss is invariant to a shared permutation") {
    Rng rng(9);
    const auto za = random_batch(rng, 6, 4);
    const auto zb = random_batch(rng, 6, 4);
    std::vector<std::size_t> perm(6);
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(perm);
    Tensor<double> pa({6, 4}), pb({6, 4});
    for (std::size_t i = 0; i < 6; ++i) {
        for (std::size_t k = 0; k < 4; ++k) {
            pa(i, k) = za(perm[i], k);
            pb(i, k) = zb(perm[i], k);
        }
    }
    CHECK(std::abs(contrastive_loss(za, zb, 0.1) - contrastive_loss(pa, pb, 0.1)) < 1e-12);
}

TEST_CASE("contrastive loss rejects bad arguments") {
    Tensor<double> a({2, 2}, {1, 0, 0, 1});
    CHECK_THROWS_AS(contrastive_loss(a, a, 0.0), ArgumentError);
    CHECK_THROWS_AS(contrastive_loss(a, a, -1.0), ArgumentError);
    Tensor<double> c({3, 2}, 1.0);
    CHECK_THROWS_AS(contrastive_loss(a, c, 0.1), DimensionError);
}

TEST_CASE("contrastive gradient matches finite differences") {
    Rng rng(21);
    double worst = 0;
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t b = 2 + rng.uniform_index(5), d = 2 + rng.uniform_index(5);
        auto za = random_batch(rng, b, d);
        auto zb = random_batch(rng, b, d);
        Tensor<double> ga, gb;
        contrastive_loss(za, zb, 0.3, &ga, &gb);
        const double h = 1e-6;
        for (std::size_t i = 0; i < za.size(); ++i) {
            const double saved = za[i];
            za[i] = saved + h;
            const double up = contrastive_loss(za, zb, 0.3);
            za[i] = saved - h;
            const double down = contrastive_loss(za, zb, 0.3);
            za[i] = saved;
            worst = std::max(worst, relative_error(ga[i], (up - down) / (2 * h)));

            const double saved_b = zb[i];
            zb[i] = saved_b + h;
            const double up_b = contrastive_loss(za, zb, 0.3);
            zb[i] = saved_b - h;
            const double down_b = contrastive_loss(za, zb, 0.3);
            zb[i] = saved_b;
            worst = std::max(worst, relative_error(gb[i], (up_b - down_b) / (2 * h)));
        }
    }
    CHECK(worst < 1e-3);
}

TEST_CASE("latent normalization has norm sqrt(d) and a consistent gradient") {
    Rng rng(4);
    auto z = random_batch(rng, 3, 5);
    const auto n = normalize_latents(z);
    for (std::size_t i = 0; i < 3; ++i) {
        double s = 0;
        for (std::size_t k = 0; k < 5; ++k) s += n.values(i, k) * n.values(i, k);
        CHECK(std::sqrt(s) == doctest::Approx(std::sqrt(5.0)));
    }
    // Linear functional L = sum c .* u, so dL/du = c.
    const auto c = random_batch(rng, 3, 5);
    auto functional = [&](const Tensor<double>& zz) {
        const auto u = normalize_latents(zz).values;
        double s = 0;
        for (std::size_t i = 0; i < u.size(); ++i) s += c[i] * u[i];
        return s;
    };
    const auto g = normalize_latents_backward(n, c);
    const double h = 1e-6;
    for (std::size_t i = 0; i < z.size(); ++i) {
        const double saved = z[i];
        z[i] = saved + h;
        const double up = functional(z);
        z[i] = saved - h;
        const double down = functional(z);
        z[i] = saved;
        CHECK(relative_error(g[i], (up - down) / (2 * h)) < 1e-5);
    }
}

TEST_CASE("total loss gradient matches finite differences on two subjects") {
    const auto& ds = small_cohort();
    const std::vector<std::uint64_t> ids{0, 1};
    const auto ecg = gather_batch(ds, ids, Modality::ecg).cast<double>();
    const auto mri = gather_batch(ds, ids, Modality::mri).cast<double>();
    const auto cfg = micro_config(3);
    const auto specs = AutoencoderSpecs::make(kEcgValues, kMriValues, cfg);
    const auto scaling = train_scaling(ds);
    auto w = AutoencoderWeights<double>::init(specs);
    AutoencoderWeights<double> g;
    autoencoder_loss(specs, w, scaling, ecg, mri, cfg.temperature, cfg.contrastive_weight, &g);

    const double h = 1e-5;
    double worst = 0;
    std::size_t checked = 0;
    auto sweep = [&](ParamSet<double>& params, const ParamSet<double>& grads) {
        for (std::size_t t = 0; t < params.tensors.size(); ++t) {
            for (std::size_t i = 0; i < params.tensors[t].size(); ++i) {
                auto& v = params.tensors[t][i];
                const double saved = v;
                v = saved + h;
                const double up = autoencoder_loss(specs, w, scaling, ecg, mri, cfg.temperature, 1.0).total;
                v = saved - h;
                const double down = autoencoder_loss(specs, w, scaling, ecg, mri, cfg.temperature, 1.0).total;
                v = saved;
                worst = std::max(worst, relative_error(grads.tensors[t][i], (up - down) / (2 * h)));
                ++checked;
            }
        }
    };
    sweep(w.ecg_encoder, g.ecg_encoder);
    sweep(w.mri_encoder, g.mri_encoder);
    sweep(w.ecg_decoder, g.ecg_decoder);
    sweep(w.mri_decoder, g.mri_decoder);
    CHECK(checked == specs.ecg_encoder.layer_widths[0] * 4 + 4 + 4 * 3 + 3 +
                         kMriValues * 4 + 4 + 4 * 3 + 3 + 3 * 4 + 4 + 4 * kEcgValues +
                         kEcgValues + 3 * 4 + 4 + 4 * kMriValues + kMriValues);
    CHECK(worst < 1e-3);
}

TEST_CASE("input scaling centres features on the training split") {
    DenseTensor x({3, 2}, {1, 10, 2, 10, 6, 10});
    const auto f = FeatureScaling::fit(x);
    CHECK(f.mean == std::vector<float>{3.0f, 10.0f});
    CHECK(f.scale == std::vector<float>{1.0f, 1.0f});
    const auto y = f.apply(x);
    CHECK(y.values()[0] == -2.0f);
    CHECK(y.values()[5] == 0.0f);
    CHECK(FeatureScaling{}.apply(x) == x);
    CHECK_THROWS_AS(f.apply(DenseTensor({1, 3}, 0.0f)), DimensionError);

    const auto& ds = small_cohort();
    TrainConfig cfg;
    cfg.max_epochs = 0;
    const auto ckpt = train(ds, cfg);
    CHECK(ckpt.input_scaling == train_scaling(ds));
    const auto& s = ds.at(7);
    DenseTensor raw({1, kMriValues}, s.mri);
    const auto direct = normalize_latents(mlp_forward(ckpt.specs.mri_encoder, ckpt.weights.mri_encoder,
                                                      ckpt.input_scaling.mri.apply(raw))
                                              .output)
                            .values;
    const auto z = encode(ckpt, s.mri, Modality::mri);
    double norm = 0;
    for (std::size_t k = 0; k < z.size(); ++k) {
        CHECK(z.values[k] == direct.values()[k]);
        norm += static_cast<double>(z.values[k]) * z.values[k];
    }
    CHECK(std::sqrt(norm) == doctest::Approx(std::sqrt(static_cast<double>(z.size()))).epsilon(1e-5));
}

TEST_CASE("one Adam step lowers the batch loss") {
    const auto& ds = small_cohort();
    const std::vector<std::uint64_t> ids{3, 4, 5, 6};
    const auto ecg = gather_batch(ds, ids, Modality::ecg);
    const auto mri = gather_batch(ds, ids, Modality::mri);
    const auto scaling = train_scaling(ds);
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        TrainConfig cfg;
        cfg.seed = seed;
        const auto specs = AutoencoderSpecs::make(kEcgValues, kMriValues, cfg);
        auto w = AutoencoderWeights<float>::init(specs);
        AutoencoderWeights<float> g;
        const double before =
            autoencoder_loss(specs, w, scaling, ecg, mri, cfg.temperature, cfg.contrastive_weight, &g).total;
        const AdamConfig adam{1e-3, 0.9, 0.999, 1e-8};
        auto step = [&](ParamSet<float>& p, const ParamSet<float>& gp) {
            auto state = AdamState<float>::for_params(p, adam);
            adam_step(p, gp, state);
        };
        step(w.ecg_encoder, g.ecg_encoder);
        step(w.mri_encoder, g.mri_encoder);
        step(w.ecg_decoder, g.ecg_decoder);
        step(w.mri_decoder, g.mri_decoder);
        const double after =
            autoencoder_loss(specs, w, scaling, ecg, mri, cfg.temperature, cfg.contrastive_weight).total;
        CHECK_MESSAGE(after < before, "seed " << seed);
    }
}

TEST_CASE("train config validation") {
    TrainConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.batch_size = 1;
    CHECK_THROWS_AS(cfg.validate(), ArgumentError);
    cfg.contrastive_weight = 0.0;
    CHECK_NOTHROW(cfg.validate());
    cfg = TrainConfig{};
    cfg.temperature = 0.0;
    CHECK_THROWS_AS(cfg.validate(), ArgumentError);
    cfg = TrainConfig{};
    cfg.contrastive_weight = -1.0;
    CHECK_THROWS_AS(cfg.validate(), ArgumentError);
    cfg = TrainConfig{};
    cfg.latent_dim = 0;
    CHECK_THROWS_AS(cfg.validate(), ArgumentError);
}

TEST_CASE("zero epochs returns the initial weights") {
    const auto& ds = small_cohort();
    TrainConfig cfg;
    cfg.max_epochs = 0;
    cfg.seed = 8;
    const auto ckpt = train(ds, cfg);
    CHECK(ckpt.epoch_of_best == 0);
    CHECK(ckpt.epochs_run == 0);
    REQUIRE(ckpt.validation_history.size() == 1);
    CHECK(ckpt.validation_loss_at_best == ckpt.validation_history[0]);
    const auto init = AutoencoderWeights<float>::init(ckpt.specs);
    CHECK(ckpt.weights.ecg_encoder.tensors == init.ecg_encoder.tensors);
    CHECK(ckpt.weights.mri_decoder.tensors == init.mri_decoder.tensors);
    CHECK(ckpt.dataset_fingerprint == ds.fingerprint());
}

TEST_CASE("short training keeps the best weights and is reproducible") {
    const auto& ds = small_cohort();
    TrainConfig cfg;
    cfg.max_epochs = 12;
    cfg.patience = 3;
    cfg.batch_size = 16;
    cfg.seed = 2;
    const auto a = train(ds, cfg);
    CHECK(a.validation_history.size() == a.epochs_run + 1);
    CHECK(a.epochs_run <= 12);
    for (double v : a.validation_history) CHECK(a.validation_loss_at_best <= v);
    CHECK(a.validation_history[a.epoch_of_best] == a.validation_loss_at_best);
    CHECK(a.validation_loss_at_best < a.validation_history[0]);
    if (a.epochs_run < 12) CHECK(a.epochs_run - a.epoch_of_best == cfg.patience);
    CHECK(checkpoint_consistency_gap(a, ds) < 1e-5);

    const auto b = train(ds, cfg);
    CHECK(b.weights == a.weights);
    CHECK(b.validation_history == a.validation_history);
}

TEST_CASE("divergence is reported with its epoch and batch") {
    const auto& ds = small_cohort();
    TrainConfig cfg;
    cfg.max_epochs = 3;
    cfg.lr = 1e30;
    try {
        train(ds, cfg);
        FAIL("expected a training error");
    } catch (const TrainingError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("epoch 1") != std::string::npos);
        CHECK(msg.find("batch") != std::string::npos);
        CHECK(std::string(e.code()) == "training_diverged");
    }
}

TEST_CASE("encode and decode contracts") {
    const auto& ds = small_cohort();
    TrainConfig cfg;
    cfg.max_epochs = 0;
    const auto ckpt = train(ds, cfg);
    const auto& s = ds.at(10);

    const auto z1 = encode(ckpt, s.ecg, Modality::ecg);
    const auto z2 = encode(ckpt, s.ecg, Modality::ecg);
    CHECK(z1 == z2);
    CHECK(z1.size() == 16);
    CHECK(z1.modality_of_origin == Modality::ecg);
    CHECK_THROWS_AS(encode(ckpt, std::vector<float>(100, 0.0f), Modality::ecg), ArgumentError);
    CHECK_THROWS_AS(encode(ckpt, s.ecg, Modality::fused), ArgumentError);

    const auto batch = encode_subjects(ckpt, ds, std::vector<std::uint64_t>{10}, Modality::ecg);
    for (std::size_t k = 0; k < 16; ++k) CHECK(batch(0, k) == doctest::Approx(z1.values[k]).epsilon(1e-5));

    const auto mri = decode(ckpt, z1, Modality::mri);
    CHECK(mri.size() == kMriValues);
    CHECK(std::all_of(mri.begin(), mri.end(), [](float v) { return v >= kMriMin && v <= kMriMax; }));
    CHECK(decode(ckpt, z1, Modality::mri) == mri);
    const auto ecg = decode(ckpt, z1, Modality::ecg);
    CHECK(ecg.size() == kEcgValues);
    CHECK(std::all_of(ecg.begin(), ecg.end(), [](float v) { return v >= kEcgMin && v <= kEcgMax; }));

    auto nudged = z1;
    nudged.values[0] += 1e-9f;
    CHECK(reconstruction_loss<float>(decode(ckpt, nudged, Modality::mri), mri) < 1e-5);

    auto bad = z1;
    bad.values[3] = std::nanf("");
    CHECK_THROWS_AS(decode(ckpt, bad, Modality::mri), NumericError);
    bad.values.pop_back();
    CHECK_THROWS_AS(decode(ckpt, bad, Modality::mri), ArgumentError);
    CHECK_THROWS_AS(decode(ckpt, z1, Modality::synthetic), ArgumentError);
}

TEST_CASE("decoding depends only on the latent direction") {
    const auto& ds = small_cohort();
    TrainConfig cfg;
    cfg.max_epochs = 0;
    const auto ckpt = train(ds, cfg);
    const auto z = encode(ckpt, ds.at(1).mri, Modality::mri);
    auto scaled = z;
    for (auto& v : scaled.values) v *= 3.0f;
    const auto a = decode(ckpt, z, Modality::mri);
    const auto b = decode(ckpt, scaled, Modality::mri);
    CHECK(reconstruction_loss<float>(a, b) < 1e-10);
}

TEST_CASE("fuse is the element-wise mean") {
    const LatentVector v{{1.0f, -2.0f, 0.5f}, Modality::ecg};
    LatentVector neg = v;
    for (auto& x : neg.values) x = -x;
    const LatentVector w{{3.0f, 0.0f, -0.5f}, Modality::mri};
    CHECK(fuse(v, v).values == v.values);
    CHECK(fuse(v, v).modality_of_origin == Modality::fused);
    CHECK(fuse(v, neg).values == std::vector<float>{0.0f, 0.0f, 0.0f});
    CHECK(fuse(v, w) == fuse(w, v));
    CHECK(fuse(v, w).values == std::vector<float>{2.0f, -1.0f, 0.0f});
    CHECK_THROWS_AS(fuse(v, LatentVector{{1.0f}, Modality::mri}), DimensionError);
}

TEST_CASE("random weights do not align the modalities") {
    const auto ds = generate_cohort(2000, 7);
    TrainConfig cfg;
    cfg.max_epochs = 0;
    const auto ckpt = train(ds, cfg);
    CHECK(aligned_fraction(ckpt, ds) < 0.9);
}
