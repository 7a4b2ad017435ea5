#include <cmath>
#include <random>

#include "doctest.h"
#include "lfs/metrics.hpp"

using namespace lfs;

namespace {

Image random_image(std::mt19937_64& rng, std::size_t res = 16) {
    std::uniform_real_distribution<float> u(-1.0f, 1.0f);
    Image img(3, res, res);
    for (auto& v : img.data) v = u(rng);
    return img;
}

Image flat(float v, std::size_t res = 8) { return Image(3, res, res, v); }

ClusterAssignment sized(std::initializer_list<std::size_t> sizes) {
    ClusterAssignment a;
    a.anchor_count = sizes.size();
    std::size_t next = 0;
    for (std::size_t s : sizes) {
        std::vector<std::size_t> m;
        for (std::size_t j = 0; j < s; ++j) m.push_back(next++);
        a.members.push_back(m);
    }
    a.total = next;
    return a;
}

}  // namespace

TEST_CASE("perceptual distances are symmetric, nonnegative and zero on identical images") {
    std::mt19937_64 rng(1);
    std::vector<Image> corpus;
    for (int j = 0; j < 8; ++j) corpus.push_back(random_image(rng));
    for (const char* name : {"downsampled_l1", "random_conv"}) {
        const auto d = make_distance(name);
        for (std::size_t a = 0; a < corpus.size(); ++a) {
            CHECK(d->distance(corpus[a], corpus[a]) == 0.0);
            for (std::size_t b = a + 1; b < corpus.size(); ++b) {
                const double ab = d->distance(corpus[a], corpus[b]);
                CHECK(ab > 0.0);
                CHECK(ab == d->distance(corpus[b], corpus[a]));
            }
        }
        const auto pw = d->pairwise(corpus);
        const auto cr = d->cross(corpus, corpus);
        for (Eigen::Index i = 0; i < pw.rows(); ++i) {
            CHECK(pw(i, i) == 0.0);
            for (Eigen::Index j = 0; j < pw.cols(); ++j) {
                CHECK(pw(i, j) == pw(j, i));
                CHECK(pw(i, j) == doctest::Approx(d->distance(corpus[i], corpus[j])).epsilon(1e-9));
                CHECK(cr(i, j) == doctest::Approx(pw(i, j)).epsilon(1e-9));
            }
        }
    }
    CHECK_THROWS(make_distance("lpips"));
    CHECK(DownsampledL1().distance(flat(0.5f), flat(-0.5f)) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("cluster assignment") {
    std::mt19937_64 rng(2);
    std::vector<Image> anchors;
    for (int j = 0; j < 4; ++j) anchors.push_back(random_image(rng));
    DownsampledL1 d;
    const auto self = assign_clusters(anchors, anchors, d);
    for (std::size_t j = 0; j < 4; ++j) CHECK(self.members[j] == std::vector<std::size_t>{j});

    std::vector<Image> gen;
    for (int j = 0; j < 6; ++j) gen.push_back(random_image(rng));
    const std::vector<Image> one = {anchors[0]};
    const auto all = assign_clusters(gen, one, d);
    CHECK(all.members[0].size() == 6);
    CHECK(all.total == 6);

    const std::vector<Image> tie_anchors = {flat(-0.5f), flat(0.5f)};
    const std::vector<Image> mid = {flat(0.0f)};
    CHECK(assign_clusters(mid, tie_anchors, d).members[0] == std::vector<std::size_t>{0});

    std::size_t covered = 0;
    const auto a = assign_clusters(gen, anchors, d);
    for (const auto& m : a.members) covered += m.size();
    CHECK(covered == gen.size());
    CHECK_THROWS(assign_clusters(gen, std::span<const Image>{}, d));
}

TEST_CASE("p_lpips enumerates unordered pairs") {
    Eigen::MatrixXd m(3, 3);
    m << 0, 0.2, 0.4, 0.2, 0, 0.6, 0.4, 0.6, 0;
    const std::size_t all[] = {0, 1, 2};
    CHECK(p_lpips_from_matrix(m, all) == doctest::Approx(0.4));
    const std::size_t two[] = {0, 2};
    CHECK(p_lpips_from_matrix(m, two) == doctest::Approx(0.4));
    const std::size_t single[] = {1};
    CHECK(p_lpips_from_matrix(m, single) == 0.0);
    const std::vector<Image> pair = {flat(0.25f), flat(-0.25f)};
    CHECK(p_lpips(pair, DownsampledL1()) == doctest::Approx(0.5).epsilon(1e-6));
}

TEST_CASE("i_lpips and b_lpips reference values") {
    const double pv[] = {0.5, 0.3};
    CHECK(i_lpips(sized({3, 4}), pv) == doctest::Approx(0.4));
    const double p91[] = {0.5, 0.0};
    CHECK(i_lpips(sized({9, 1}), p91) == doctest::Approx(0.5));
    const double zeros[] = {0.0, 0.0, 0.0};
    CHECK(i_lpips(sized({1, 1, 1}), zeros) == 0.0);

    const double one[] = {0.7};
    CHECK(b_lpips(sized({20}), one) == 0.0);
    std::vector<double> tenp(10, 0.5);
    CHECK(b_lpips(sized({5, 5, 5, 5, 5, 5, 5, 5, 5, 5}), tenp) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(b_lpips(sized({9, 1}), p91) == doctest::Approx(-0.9 * std::log10(0.9) * 0.5).epsilon(1e-9));
    CHECK(cluster_weight(0, 10) == 0.0);
    CHECK(cluster_weight(10, 10) == 0.0);
}

TEST_CASE("b_lpips bounds and imbalance sensitivity") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.1, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<double> p(4);
        for (auto& v : p) v = u(rng);
        std::uniform_int_distribution<std::size_t> sz(2, 9);
        ClusterAssignment a = sized({sz(rng), sz(rng), sz(rng), sz(rng)});
        const double maxp = *std::max_element(p.begin(), p.end());
        CHECK(b_lpips(a, p) <= std::log10(4.0) * maxp + 1e-12);
    }
    const std::vector<double> p = {0.4, 0.4};
    double prev = b_lpips(sized({5, 5}), p);
    for (std::size_t big = 6; big <= 9; ++big) {
        const ClusterAssignment a = [&] {
            ClusterAssignment s = sized({5, 5});
            s = big == 6 ? sized({6, 4}) : big == 7 ? sized({7, 3}) : big == 8 ? sized({8, 2}) : sized({9, 1});
            return s;
        }();
        const double now = b_lpips(a, p);
        CHECK(now < prev);
        prev = now;
    }
    // Relabeling clusters does not change either metric.
    ClusterAssignment a = sized({3, 6, 2});
    const std::vector<double> pa = {0.3, 0.5, 0.2};
    ClusterAssignment r = a;
    std::swap(r.members[0], r.members[2]);
    const std::vector<double> pr = {0.2, 0.5, 0.3};
    CHECK(b_lpips(a, pa) == doctest::Approx(b_lpips(r, pr)).epsilon(1e-14));
    CHECK(i_lpips(a, pa) == doctest::Approx(i_lpips(r, pr)).epsilon(1e-14));
}

TEST_CASE("image-level metrics agree with the matrix forms") {
    std::mt19937_64 rng(4);
    std::vector<Image> anchors, gen;
    for (int j = 0; j < 3; ++j) anchors.push_back(random_image(rng));
    for (int j = 0; j < 12; ++j) gen.push_back(random_image(rng));
    DownsampledL1 d;
    const auto a = assign_clusters(gen, anchors, d);
    const auto p = cluster_p_values(a, gen, d);
    CHECK(b_lpips(a, gen, d) == doctest::Approx(b_lpips(a, p)));
    CHECK(i_lpips(a, gen, d) == doctest::Approx(i_lpips(a, p)));
    for (std::size_t c = 0; c < 3; ++c) {
        std::vector<Image> members;
        for (std::size_t j : a.members[c]) members.push_back(gen[j]);
        CHECK(p[c] == doctest::Approx(p_lpips(members, d)));
    }
}

TEST_CASE("frechet distance") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> nd;
    Eigen::MatrixXd x(50, 4);
    for (Eigen::Index j = 0; j < x.size(); ++j) x.data()[j] = nd(rng);
    CHECK(std::abs(frechet_distance(x, x)) <= 1e-8);

    Eigen::MatrixXd a(4, 1), b(4, 1);
    a << -1, 1, -1, 1;
    b << 0, 2, 0, 2;
    CHECK(frechet_distance(a, b) == doctest::Approx(1.0).epsilon(1e-12));

    Eigen::MatrixXd y(40, 4);
    for (Eigen::Index j = 0; j < y.size(); ++j) y.data()[j] = 2.0 * nd(rng) + 0.5;
    CHECK(frechet_distance(x, y) == doctest::Approx(frechet_distance(y, x)).epsilon(1e-9));
    CHECK(frechet_distance(x, y) > 0.0);

    // Diagonal Gaussians have the closed form |mu|^2 + sum (s1 - s2)^2.
    Eigen::MatrixXd c(2, 2), e(2, 2);
    c << 1, 0, -1, 0;
    e << 0, 3, 0, 1;
    const double closed = (0 - 0) * (0 - 0) + (0 - 2) * (0 - 2) + std::pow(std::sqrt(2.0) - 0.0, 2) + std::pow(0.0 - std::sqrt(2.0), 2);
    CHECK(frechet_distance(c, e) == doctest::Approx(closed).epsilon(1e-9));

    Eigen::MatrixXd wrong(5, 3);
    wrong.setZero();
    CHECK_THROWS(frechet_distance(x, wrong));

    std::vector<Image> real, fake;
    for (int j = 0; j < 6; ++j) {
        real.push_back(random_image(rng));
        fake.push_back(random_image(rng));
    }
    for (const char* name : {"pooled_color", "random_conv"}) {
        const auto emb = make_embedding(name);
        CHECK(std::abs(frechet_embedding_distance(real, real, *emb)) <= 1e-8);
        CHECK(frechet_embedding_distance(real, fake, *emb) ==
              doctest::Approx(frechet_embedding_distance(fake, real, *emb)).epsilon(1e-9));
    }
}

TEST_CASE("metrics report formats") {
    MetricsReport r;
    r.add("b_lpips", 0.25);
    r.add("i_lpips", 0.5);
    CHECK(r.value("i_lpips") == 0.5);
    CHECK_THROWS(r.value("fid"));
    CHECK(r.text() == "b_lpips=0.25\ni_lpips=0.5\n");
    CHECK(r.csv_rows("t1") == "t1,b_lpips,0.25\nt1,i_lpips,0.5\n");
}
