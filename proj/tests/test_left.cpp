#include <random>

#include "doctest.h"
#include "lfs/left.hpp"
#include "oracles.hpp"

using namespace lfs;

namespace {

Matrix<double> mat(std::initializer_list<std::initializer_list<double>> rows) {
    Matrix<double> m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows.begin()->size()));
    Eigen::Index i = 0;
    for (const auto& r : rows) {
        Eigen::Index j = 0;
        for (double v : r) m(i, j++) = v;
        ++i;
    }
    return m;
}

LeftConvModulator<double> tiny_conv(ActivationKind act) {
    LeftConvModulator<double> m;
    m.shape = ConvShape{2, 2, 1};
    m.rank = 1;
    m.act = act;
    m.with_bias = false;
    m.m1_out = mat({{2}, {3}});
    m.m1_inst = mat({{1}});
    m.m2_in = mat({{1}, {2}});
    m.a2_in = mat({{0}, {0}});
    m.a2_inst = mat({{0}});
    return m;
}

}  // namespace

TEST_CASE("reshape_r1 follows the row-major element stream") {
    // c_out=2, r=2, K=1: the 2x2 source refills a 2x2 target in the same order.
    Matrix<double> m = mat({{1, 2}, {3, 4}});
    CHECK(reshape_r1(m, ConvShape{2, 1, 1}, 2) == m);

    std::mt19937_64 rng(1);
    const ConvShape s{3, 2, 3};
    Matrix<double> x = oracle::random_matrix(3, 2 * 9, rng);
    Matrix<double> y = reshape_r1(x, s, 2);
    REQUIRE(y.rows() == 2);
    REQUIRE(y.cols() == 27);
    for (Eigen::Index j = 0; j < x.size(); ++j) CHECK(y.data()[j] == x.data()[j]);
    CHECK(reshape_r1_inverse(y, s, 2) == x);

    Matrix<double> r1 = oracle::random_matrix(4, 9, rng);
    Matrix<double> y1 = reshape_r1(r1, ConvShape{4, 1, 3}, 1);
    CHECK(y1.rows() == 1);
    for (Eigen::Index j = 0; j < r1.size(); ++j) CHECK(y1(0, j) == r1.data()[j]);
    CHECK_THROWS_AS(reshape_r1(r1, ConvShape{4, 1, 3}, 2), ShapeError);
}

TEST_CASE("repeat_r2 replicates the flattened A1 row") {
    std::mt19937_64 rng(2);
    const ConvShape s{3, 2, 3};
    Matrix<double> a1 = oracle::random_matrix(3, 9, rng);
    Matrix<double> rep = repeat_r2(a1, s, 4);
    REQUIRE(rep.rows() == 4);
    REQUIRE(rep.cols() == 27);
    for (Eigen::Index p = 0; p < 4; ++p)
        for (Eigen::Index c = 0; c < 27; ++c) CHECK(rep(p, c) == a1.data()[c]);
}

TEST_CASE("gamma reconstruction matches hand-derived small cases") {
    auto m = tiny_conv(ActivationKind::Identity);
    ConvWeight<double> g = reconstruct_gamma_conv(m);
    CHECK(g.at(0, 0, 0, 0) == doctest::Approx(2));
    CHECK(g.at(0, 1, 0, 0) == doctest::Approx(4));
    CHECK(g.at(1, 0, 0, 0) == doctest::Approx(3));
    CHECK(g.at(1, 1, 0, 0) == doctest::Approx(6));

    auto neg = tiny_conv(ActivationKind::ReLU);
    neg.m1_inst = mat({{-1}});
    for (double v : reconstruct_gamma_conv(neg).data) CHECK(v == 0.0);
}

TEST_CASE("beta reconstruction and replication") {
    auto m = tiny_conv(ActivationKind::Identity);
    m.a2_in = mat({{1}, {2}});
    m.a2_inst = mat({{3}});
    ConvWeight<double> b = reconstruct_beta_conv(m);
    CHECK(b.at(0, 0, 0, 0) == 3);
    CHECK(b.at(0, 1, 0, 0) == 6);
    CHECK(b.at(1, 0, 0, 0) == 3);
    CHECK(b.at(1, 1, 0, 0) == 6);

    m.a2_inst.setZero();
    for (double v : reconstruct_beta_conv(m).data) CHECK(v == 0.0);

    std::mt19937_64 rng(3);
    auto r = oracle::random_conv(ConvShape{5, 3, 3}, 2, true, ActivationKind::GELU, rng);
    ConvWeight<double> rb = reconstruct_beta_conv(r);
    for (std::size_t o = 1; o < 5; ++o)
        for (std::size_t i = 0; i < 3; ++i)
            for (std::size_t u = 0; u < 3; ++u)
                for (std::size_t v = 0; v < 3; ++v) CHECK(rb.at(o, i, u, v) == rb.at(0, i, u, v));
}

TEST_CASE("modulate_conv elementwise algebra") {
    auto m = tiny_conv(ActivationKind::Identity);
    m.a2_in = mat({{1}, {2}});
    m.a2_inst = mat({{3}});
    ConvWeight<double> w(m.shape, 1.0);
    const ConvWeight<double> before = w;
    ConvWeight<double> out = modulate_conv(w, m);
    CHECK(out.at(0, 0, 0, 0) == doctest::Approx(5));
    CHECK(out.at(0, 1, 0, 0) == doctest::Approx(10));
    CHECK(out.at(1, 0, 0, 0) == doctest::Approx(6));
    CHECK(out.at(1, 1, 0, 0) == doctest::Approx(12));
    CHECK(w.data == before.data);

    ConvWeight<double> zero(m.shape, 0.0);
    ConvWeight<double> wr(m.shape);
    wr.data = {0.3, -1.2, 4.0, 2.5};
    CHECK(modulate(wr, zero, wr).data == wr.data);

    ConvWeight<double> wrong(ConvShape{2, 3, 1});
    CHECK_THROWS_AS(modulate_conv(wrong, m), ShapeError);
}

TEST_CASE("reconstruction matches the loop oracle over random configurations") {
    std::mt19937_64 rng(11);
    std::uniform_int_distribution<std::size_t> ch(1, 8);
    const std::size_t ranks[] = {1, 2, 4};
    const std::size_t ks[] = {1, 3};
    double worst = 0.0;
    for (int trial = 0; trial < 120; ++trial) {
        const ConvShape s{ch(rng), ch(rng), ks[trial % 2]};
        const auto act = kAllActivations[static_cast<std::size_t>(trial) % 7];
        auto m = oracle::random_conv(s, ranks[(trial / 2) % 3], trial % 5 != 0, act, rng);
        const auto g = reconstruct_gamma_conv(m).data;
        const auto b = reconstruct_beta_conv(m).data;
        const auto go = oracle::gamma(m);
        const auto bo = oracle::beta(m);
        for (std::size_t j = 0; j < g.size(); ++j) worst = std::max(worst, std::abs(g[j] - go[j]));
        for (std::size_t j = 0; j < b.size(); ++j) worst = std::max(worst, std::abs(b[j] - bo[j]));
    }
    CHECK(worst <= 1e-12);
}

TEST_CASE("fc reconstruction and modulation") {
    LeftFcModulator<double> m;
    m.shape = FcShape{2, 3};
    m.rank = 1;
    m.m_out = mat({{1}, {1}});
    m.m_in = mat({{1, 1, 1}});
    m.a_out = mat({{1}, {2}});
    m.a_in = mat({{3, 0, 0}});
    m.gamma_b = mat({{2}, {2}});
    m.beta_b = mat({{1}, {1}});
    auto rec = reconstruct_fc(m);
    CHECK(rec.gamma_w == Matrix<double>::Ones(2, 3));
    CHECK(rec.beta_w == mat({{3, 0, 0}, {6, 0, 0}}));
    auto p = modulate_fc(Matrix<double>(Matrix<double>::Zero(2, 3)), mat({{1}, {-1}}), m);
    CHECK(p.bias == mat({{3}, {-1}}));

    // Zero Gamma_W with B_W = W gives back W.
    m.m_out.setZero();
    m.a_out = mat({{1}, {2}});
    m.a_in = mat({{0.5, -1, 2}});
    Matrix<double> w = m.a_out * m.a_in;
    CHECK(modulate_fc(w, mat({{0}, {0}}), m).weight == w);

    std::mt19937_64 rng(4);
    for (std::size_t r : {1, 2, 3}) {
        auto f = oracle::random_fc(FcShape{9, 7}, r, rng);
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(reconstruct_fc(f).gamma_w);
        const auto sv = svd.singularValues();
        std::size_t numerical_rank = 0;
        for (Eigen::Index j = 0; j < sv.size(); ++j) numerical_rank += sv(j) > 1e-10 * sv(0) ? 1 : 0;
        CHECK(numerical_rank <= r);
    }
}

TEST_CASE("identity initialization is exact for every activation") {
    std::mt19937_64 rng(5);
    for (auto act : kAllActivations) {
        for (std::size_t r : {1, 2, 4}) {
            for (bool bias : {false, true}) {
                const ConvShape s{6, 5, 3};
                auto m = init_identity_conv<float>(s, r, bias, act, rng);
                ConvWeight<float> w(s);
                std::normal_distribution<float> nd;
                for (auto& v : w.data) v = nd(rng);
                const auto out = modulate_conv(w, m);
                float worst = 0.0f;
                for (std::size_t j = 0; j < w.data.size(); ++j) worst = std::max(worst, std::abs(out.data[j] - w.data[j]));
                CHECK_MESSAGE(worst <= 1e-6f, activation_name(act), " r=", r);
            }
        }
    }
    auto exact = init_identity_conv<double>(ConvShape{4, 3, 3}, 4, true, ActivationKind::Identity, rng);
    for (double v : reconstruct_gamma_conv(exact).data) CHECK(v == 1.0);

    auto fc = init_identity_fc<float>(FcShape{7, 5}, 2, rng);
    Matrix<float> w = Matrix<float>::Random(7, 5);
    Matrix<float> b = Matrix<float>::Random(7, 1);
    auto p = modulate_fc(w, b, fc);
    CHECK((p.weight - w).cwiseAbs().maxCoeff() <= 1e-6f);
    CHECK((p.bias - b).cwiseAbs().maxCoeff() <= 1e-6f);
}

TEST_CASE("factor gradients match central differences") {
    std::mt19937_64 rng(6);
    for (auto act : kAllActivations) {
        const ConvShape s{3, 4, 3};
        auto m = oracle::random_conv(s, 2, true, act, rng);
        ConvWeight<double> w(s), c(s);
        std::normal_distribution<double> nd;
        for (auto& v : w.data) v = nd(rng);
        for (auto& v : c.data) v = nd(rng);
        // L = sum c * W_hat^2 / 2, so dL/dW_hat = c * W_hat.
        auto loss = [&] {
            const auto out = modulate_conv(w, m);
            double s2 = 0.0;
            for (std::size_t j = 0; j < out.data.size(); ++j) s2 += 0.5 * c.data[j] * out.data[j] * out.data[j];
            return s2;
        };
        const auto out = modulate_conv(w, m);
        ConvWeight<double> d(s);
        for (std::size_t j = 0; j < d.data.size(); ++j) d.data[j] = c.data[j] * out.data[j];
        auto grad = zeros_like(m);
        modulate_conv_backward(w, m, d, grad);
        std::vector<Matrix<double>*> fs, gs;
        m.for_each_factor([&](const char*, Matrix<double>& f) { fs.push_back(&f); });
        grad.for_each_factor([&](const char*, Matrix<double>& f) { gs.push_back(&f); });
        for (std::size_t f = 0; f < fs.size(); ++f) {
            for (Eigen::Index j = 0; j < fs[f]->size(); ++j) {
                const double fd = oracle::central_difference(loss, fs[f]->data()[j]);
                CHECK(oracle::relative_error(gs[f]->data()[j], fd) <= 1e-4);
            }
        }
    }
}

TEST_CASE("a2_in receives gradient at identity initialization") {
    std::mt19937_64 rng(7);
    const ConvShape s{4, 3, 3};
    auto m = init_identity_conv<double>(s, 1, true, ActivationKind::ReLU, rng);
    ConvWeight<double> w(s, 0.5);
    ConvWeight<double> d(s, 1.0);
    auto g = zeros_like(m);
    modulate_conv_backward(w, m, d, g);
    CHECK(g.a2_in.cwiseAbs().maxCoeff() > 0.0);
    auto loss = [&] {
        double acc = 0.0;
        for (double v : modulate_conv(w, m).data) acc += v;
        return acc;
    };
    const double fd = oracle::central_difference(loss, m.a2_in(0, 0));
    CHECK(std::abs(fd) > 0.0);
    CHECK(oracle::relative_error(g.a2_in(0, 0), fd) <= 1e-6);
}

TEST_CASE("parameter accounting") {
    const NamedLayerShape one[] = {{"conv", ConvShape{8, 4, 3}}};
    CHECK(param_count(one, 1, true).total == 51);
    CHECK(param_count(one, 1, false).total == 34);
    CHECK(param_count(std::span<const NamedLayerShape>{}, 1, true).total == 0);
    const NamedLayerShape fc[] = {{"fc", FcShape{5, 7}}};
    CHECK(param_count(fc, 2, true).total == 2 * (5 * 2 + 2 * 7) + 2 * 5);

    std::mt19937_64 rng(8);
    auto m = init_identity_conv<double>(ConvShape{8, 4, 3}, 1, true, ActivationKind::ReLU, rng);
    std::size_t stored = 0;
    m.for_each_factor([&](const char*, const Matrix<double>& f) { stored += static_cast<std::size_t>(f.size()); });
    CHECK(stored == 51);

    const NamedLayerShape mixed[] = {{"a", ConvShape{8, 4, 3}}, {"b", FcShape{6, 6}}, {"c", ConvShape{3, 9, 1}}};
    std::size_t prev = 0;
    for (std::size_t r : {1, 2, 4, 8, 16}) {
        const std::size_t with = param_count(mixed, r, true).total;
        const std::size_t without = param_count(mixed, r, false).total;
        CHECK(with > without);
        CHECK(with > prev);
        prev = with;
    }
}

TEST_CASE("activation names round-trip") {
    for (auto act : kAllActivations) {
        CHECK(parse_activation(activation_name(act)) == act);
        CHECK(activation_from_id(static_cast<std::uint8_t>(act)) == act);
    }
    CHECK_THROWS(parse_activation("softsign"));
    CHECK_THROWS(activation_from_id(7));
}
