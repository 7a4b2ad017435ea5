#include <random>

#include "doctest.h"
#include "lfs/checkpoint.hpp"
#include "lfs/conv_ops.hpp"
#include "lfs/netlab.hpp"
#include "oracles.hpp"

using namespace lfs;

namespace {

GeneratorConfig small_config() {
    GeneratorConfig c;
    c.z_dim = 6;
    c.w_dim = 5;
    c.mapping_layers = 2;
    c.const_channels = 4;
    c.channels = {4, 3};
    c.target_resolution = 16;
    c.modulate_affine = true;
    return c;
}

// Moves every factor away from the identity so all paths are exercised.
template <typename T>
void perturb(ModulatorSet<T>& set, std::mt19937_64& rng, double scale) {
    std::normal_distribution<double> nd(0.0, scale);
    for (Matrix<T>* m : set.factors())
        for (Eigen::Index j = 0; j < m->size(); ++j) m->data()[j] += static_cast<T>(nd(rng));
}

}  // namespace

TEST_CASE("generator output shape and determinism") {
    const GeneratorConfig cfg;
    Generator<float> gen(GeneratorWeights<double>::init(cfg, 3).cast<float>());
    std::mt19937_64 rng(9);
    const Matrix<float> z = sample_latents<float>(3, cfg.z_dim, rng);
    const auto a = generator_forward(gen, nullptr, z);
    const auto b = generator_forward(gen, nullptr, z);
    REQUIRE(a.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(a[i].image.size() == 3 * 32 * 32);
        CHECK(a[i].resolution == 32);
        CHECK(a[i].features.size() == cfg.block_count());
        CHECK(a[i].image == b[i].image);
        CHECK(a[i].w == b[i].w);
    }
    std::mt19937_64 r1(4), r2(4);
    CHECK(sample_latents<float>(5, 7, r1) == sample_latents<float>(5, 7, r2));
}

TEST_CASE("identity modulators reproduce the base generator") {
    GeneratorConfig cfg;
    cfg.modulate_affine = true;
    Generator<float> gen(GeneratorWeights<double>::init(cfg, 5).cast<float>());
    std::mt19937_64 rng(10);
    const Matrix<float> z = sample_latents<float>(4, cfg.z_dim, rng);
    const auto base = generator_forward(gen, nullptr, z);
    for (auto act : kAllActivations) {
        const auto mods = init_identity_set<float>(cfg, "t", 2, true, act, 77);
        const auto out = generator_forward(gen, &mods, z);
        double worst = 0.0;
        for (std::size_t i = 0; i < out.size(); ++i)
            for (std::size_t j = 0; j < out[i].image.size(); ++j)
                worst = std::max(worst, std::abs(out[i].image[j] - base[i].image[j]));
        CHECK_MESSAGE(worst <= 1e-5, activation_name(act));
    }
}

TEST_CASE("fused upsample convolution equals upsample followed by convolution") {
    std::mt19937_64 rng(12);
    const std::size_t n = 2, c_in = 3, c_out = 4, h = 4, w = 5;
    Matrix<double> x = oracle::random_matrix(c_in, n * h * w, rng, 1.0);
    ConvWeight<double> k(ConvShape{c_out, c_in, 3});
    std::normal_distribution<double> nd;
    for (auto& v : k.data) v = nd(rng);
    Matrix<double> cols3;
    const Matrix<double> fused = ops::upsample_conv3x3(x, n, h, w, k, cols3);
    const Matrix<double> up = ops::upsample2(x, n, h, w);
    const Matrix<double> naive = ops::weight_matrix(k) * ops::im2col(up, n, 2 * h, 2 * w, 3);
    CHECK((fused - naive).cwiseAbs().maxCoeff() <= 1e-12);

    // Direct loop reference for the naive path itself.
    for (std::size_t s = 0; s < n; ++s)
        for (std::size_t o = 0; o < c_out; ++o)
            for (std::size_t y = 0; y < 2 * h; ++y)
                for (std::size_t xx = 0; xx < 2 * w; ++xx) {
                    double acc = 0.0;
                    for (std::size_t c = 0; c < c_in; ++c)
                        for (int u = 0; u < 3; ++u)
                            for (int v = 0; v < 3; ++v) {
                                const long yy = static_cast<long>(y) + u - 1, xs = static_cast<long>(xx) + v - 1;
                                if (yy < 0 || xs < 0 || yy >= static_cast<long>(2 * h) || xs >= static_cast<long>(2 * w)) continue;
                                acc += k.at(o, c, u, v) * x(c, s * h * w + (yy / 2) * w + xs / 2);
                            }
                    CHECK(fused(o, s * 4 * h * w + y * 2 * w + xx) == doctest::Approx(acc).epsilon(1e-12));
                }

    Matrix<double> d_y = oracle::random_matrix(c_out, n * 4 * h * w, rng, 1.0);
    ConvWeight<double> d_k;
    Matrix<double> d_x;
    ops::upsample_conv3x3_backward(d_y, cols3, n, h, w, k, d_k, &d_x);
    const Matrix<double> naive_dk = d_y * ops::im2col(up, n, 2 * h, 2 * w, 3).transpose();
    const Matrix<double> naive_dx =
        ops::upsample2_backward(ops::col2im(Matrix<double>(ops::weight_matrix(k).transpose() * d_y), c_in, n, 2 * h, 2 * w, 3), n, h, w);
    CHECK((ops::weight_matrix(d_k) - naive_dk).cwiseAbs().maxCoeff() <= 1e-10);
    CHECK((d_x - naive_dx).cwiseAbs().maxCoeff() <= 1e-10);
}

TEST_CASE("generator modulator gradients match finite differences") {
    const GeneratorConfig cfg = small_config();
    Generator<double> gen(GeneratorWeights<double>::init(cfg, 21));
    std::mt19937_64 rng(22);
    auto mods = init_identity_set<double>(cfg, "t", 2, true, ActivationKind::GELU, 23);
    perturb(mods, rng, 0.05);
    const Matrix<double> z = sample_latents<double>(3, cfg.z_dim, rng);

    // Random linear functional of w, every feature map and the image.
    auto probe = [&] {
        const auto c = gen.forward(gen.effective(&mods), z);
        GeneratorUpstream<double> up;
        up.d_w = oracle::random_matrix(static_cast<std::size_t>(c.w.rows()), static_cast<std::size_t>(c.w.cols()), rng, 1.0);
        for (const auto& f : c.features)
            up.d_features.push_back(oracle::random_matrix(static_cast<std::size_t>(f.value.rows()), static_cast<std::size_t>(f.value.cols()), rng, 1.0));
        up.d_image = oracle::random_matrix(3, static_cast<std::size_t>(c.image.value.cols()), rng, 1.0);
        return up;
    }();
    auto loss = [&] {
        const auto c = gen.forward(gen.effective(&mods), z);
        double s = (c.w.array() * probe.d_w.array()).sum() + (c.image.value.array() * probe.d_image.array()).sum();
        for (std::size_t l = 0; l < c.features.size(); ++l) s += (c.features[l].value.array() * probe.d_features[l].array()).sum();
        return s;
    };
    const auto eff = gen.effective(&mods);
    const auto cache = gen.forward(eff, z);
    const auto grads = gen.modulator_grads(mods, gen.backward(eff, cache, probe));
    auto fs = mods.factors();
    auto gs = grads.factors();
    std::size_t checked = 0, failed = 0;
    for (std::size_t f = 0; f < fs.size(); ++f) {
        for (Eigen::Index j = 0; j < fs[f]->size(); j += 3) {
            const double fd = oracle::central_difference(loss, fs[f]->data()[j]);
            if (oracle::relative_error(gs[f]->data()[j], fd) > 1e-4) ++failed;
            ++checked;
        }
    }
    CHECK(checked > 100);
    CHECK(failed == 0);
}

TEST_CASE("gradient contract rejects frozen and unknown parameters") {
    const GeneratorConfig cfg = small_config();
    Generator<double> gen(GeneratorWeights<double>::init(cfg, 1));
    const auto mods = init_identity_set<double>(cfg, "t", 1, true, ActivationKind::ReLU, 2);
    std::mt19937_64 rng(3);
    const auto z = sample_latents<double>(2, cfg.z_dim, rng);
    const auto eff = gen.effective(&mods);
    const auto g = gen.backward(eff, gen.forward(eff, z), GeneratorUpstream<double>{});
    const std::string frozen[] = {"base.mapping.0"};
    CHECK_THROWS_AS(gen.modulator_grads(mods, g, frozen), ContractError);
    const std::string unknown[] = {"synthesis.7.conv"};
    CHECK_THROWS_AS(gen.modulator_grads(mods, g, unknown), ContractError);
    const std::string one[] = {"to_rgb"};
    const auto only = gen.modulator_grads(mods, g, one);
    CHECK(only.layers.size() == mods.layers.size());
}

TEST_CASE("base weights are untouched by an optimizer step") {
    const GeneratorConfig cfg = small_config();
    Generator<float> gen(GeneratorWeights<double>::init(cfg, 4).cast<float>());
    const std::string before = sha256_hex(gen.base().serialize());
    auto mods = init_identity_set<float>(cfg, "t", 1, true, ActivationKind::ReLU, 5);
    std::mt19937_64 rng(6);
    const auto z = sample_latents<float>(2, cfg.z_dim, rng);
    const auto eff = gen.effective(&mods);
    const auto cache = gen.forward(eff, z);
    GeneratorUpstream<float> up;
    up.d_image = Matrix<float>::Ones(3, cache.image.value.cols());
    const auto grads = gen.modulator_grads(mods, gen.backward(eff, cache, up));
    const auto start = mods;
    Adam<float> adam(0.002, 0.0, 0.99);
    adam.step(parameter_spans(mods), parameter_spans(grads));
    CHECK(sha256_hex(gen.base().serialize()) == before);
    CHECK_FALSE(identical(start, mods));
}

TEST_CASE("changing one modulator only changes that layer's effective weight") {
    const GeneratorConfig cfg = small_config();
    Generator<double> gen(GeneratorWeights<double>::init(cfg, 8));
    auto mods = init_identity_set<double>(cfg, "t", 1, true, ActivationKind::ReLU, 9);
    const auto a = gen.effective(&mods);
    std::get<LeftConvModulator<double>>(mods.layers.at("synthesis.1.conv")).a2_in.array() += 0.3;
    const auto b = gen.effective(&mods);
    CHECK(a.conv[0].data == b.conv[0].data);
    CHECK(a.conv[1].data != b.conv[1].data);
    CHECK(a.to_rgb.data == b.to_rgb.data);
    for (std::size_t j = 0; j < a.mapping.size(); ++j) CHECK(a.mapping[j].weight == b.mapping[j].weight);
    for (std::size_t j = 0; j < a.affine.size(); ++j) CHECK(a.affine[j].weight == b.affine[j].weight);
}

TEST_CASE("modulator shapes must match the generator") {
    const GeneratorConfig cfg = small_config();
    Generator<float> gen(GeneratorWeights<double>::init(cfg, 1).cast<float>());
    auto mods = init_identity_set<float>(cfg, "t", 1, true, ActivationKind::ReLU, 2);
    CHECK_NOTHROW(gen.check_modulators(mods));
    auto missing = mods;
    missing.layers.erase("to_rgb");
    CHECK_THROWS(gen.check_modulators(missing));
    GeneratorConfig other = cfg;
    other.channels = {5, 3};
    auto mismatched = init_identity_set<float>(other, "t", 1, true, ActivationKind::ReLU, 2);
    CHECK_THROWS(gen.check_modulators(mismatched));
}

TEST_CASE("base weight serialization round-trips") {
    const auto w = GeneratorWeights<double>::init(small_config(), 31).cast<float>();
    const auto bytes = w.serialize();
    const auto back = GeneratorWeights<float>::deserialize(bytes);
    CHECK(back.serialize() == bytes);
    CHECK(back.param_count() == w.param_count());
    auto bad = bytes;
    bad[0] ^= 0xff;
    CHECK_THROWS(GeneratorWeights<float>::deserialize(bad));
    CHECK_THROWS(GeneratorWeights<float>::deserialize(std::span<const std::uint8_t>(bytes.data(), bytes.size() / 2)));
}

TEST_CASE("discriminator forward contract") {
    const DiscriminatorConfig cfg;
    Discriminator<float> d(DiscriminatorWeights<float>::init(cfg, 3));
    Activation<float> zero{Matrix<float>::Zero(3, 32 * 32), 1, 32, 32};
    const auto l0 = d.forward(zero);
    REQUIRE(l0.size() == 1);
    CHECK(std::isfinite(l0[0]));
    std::mt19937_64 rng(4);
    Activation<float> batch{oracle::random_matrix(3, 5 * 32 * 32, rng, 1.0).cast<float>(), 5, 32, 32};
    const auto a = d.forward(batch);
    CHECK(a.size() == 5);
    Discriminator<float> d2(DiscriminatorWeights<float>::init(cfg, 3));
    CHECK(d2.forward(batch) == a);
    DiscriminatorConfig patch;
    patch.patch_output = true;
    CHECK_THROWS(patch.validate());
}

TEST_CASE("discriminator gradients match finite differences") {
    DiscriminatorConfig cfg;
    cfg.resolution = 16;
    cfg.channels = {3, 4, 4, 5};
    Discriminator<double> d(DiscriminatorWeights<double>::init(cfg, 5));
    std::mt19937_64 rng(6);
    Activation<double> x{oracle::random_matrix(3, 2 * 16 * 16, rng, 1.0), 2, 16, 16};
    const std::vector<double> c = {0.7, -1.3};
    auto loss = [&] {
        const auto l = d.forward(x);
        return c[0] * l[0] + c[1] * l[1];
    };
    DiscriminatorCache<double> cache;
    d.forward(x, &cache);
    const auto g = d.backward(cache, c);
    std::size_t failed = 0, checked = 0, kinks = 0;
    for (Eigen::Index j = 0; j < x.value.size(); j += 37) {
        const double fd = oracle::central_difference(loss, x.value.data()[j]);
        failed += oracle::relative_error(g.d_input.data()[j], fd) > 1e-4 ? 1 : 0;
        ++checked;
    }
    auto params = parameter_spans(d.weights());
    auto grads = parameter_spans(const_cast<DiscriminatorWeights<double>&>(g.weights));
    for (std::size_t p = 0; p < params.size(); ++p) {
        for (std::size_t j = 0; j < params[p].size(); j += 7) {
            const double fd = oracle::central_difference(loss, params[p][j]);
            if (oracle::relative_error(grads[p][j], fd) > 1e-4 && oracle::straddles_kink(loss, params[p][j])) {
                ++kinks;
                continue;
            }
            failed += oracle::relative_error(grads[p][j], fd) > 1e-4 ? 1 : 0;
            ++checked;
        }
    }
    CHECK(checked > 50);
    CHECK(kinks * 20 < checked);
    CHECK(failed == 0);
}

TEST_CASE("adam bias correction on a quadratic") {
    std::vector<double> x = {1.0, -2.0};
    Adam<double> adam(0.1, 0.9, 0.999);
    std::vector<double> g(2);
    for (int it = 0; it < 500; ++it) {
        g[0] = 2 * x[0];
        g[1] = 2 * x[1];
        adam.step({std::span<double>(x)}, {std::span<const double>(g)});
    }
    CHECK(std::abs(x[0]) < 1e-2);
    CHECK(std::abs(x[1]) < 1e-2);
    // First step moves every coordinate by lr in the direction of -sign(g).
    std::vector<double> y = {3.0};
    std::vector<double> gy = {0.5};
    Adam<double> fresh(0.1, 0.0, 0.99);
    fresh.step({std::span<double>(y)}, {std::span<const double>(gy)});
    CHECK(y[0] == doctest::Approx(2.9).epsilon(1e-6));
}
