#include <filesystem>
#include <cmath>
#include <random>

#include <unistd.h>

#include "doctest.h"
#include "lfs/checkpoint.hpp"
#include "lfs/lifelong.hpp"
#include "lfs/run_config.hpp"
#include "lfs/toy.hpp"

using namespace lfs;
namespace fs = std::filesystem;

namespace {

GeneratorConfig tiny_generator() {
    GeneratorConfig c;
    c.z_dim = 8;
    c.w_dim = 8;
    c.mapping_layers = 2;
    c.const_channels = 8;
    c.channels = {8, 6};
    c.target_resolution = 16;
    return c;
}

TrainConfig tiny_train(std::size_t iterations) {
    TrainConfig t;
    t.iterations = iterations;
    t.batch_size = 2;
    t.discriminator.channels = {8, 8};
    t.seed = 11;
    return t;
}

TaskSpec toy_task(std::size_t t, std::size_t k = 4) {
    const auto style = toy_task_style(t);
    return TaskSpec{style.name, render_toy_task(style, k, 16, 100 + t), 16};
}

fs::path scratch(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("lfs_test_" + name + "_" + std::to_string(::getpid()));
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

DistanceMatrix table8() { return DistanceMatrix::read_csv(fs::path(LFS_TEST_DATA) / "table8.csv"); }

}  // namespace

TEST_CASE("greedy task ordering") {
    const auto m = table8();
    CHECK(order_tasks(m, "FFHQ") ==
          std::vector<std::string>{"Sketches", "Female", "Sunglasses", "Male", "Babies"});
    CHECK(order_tasks(m, "FFHQ", std::vector<std::string>{"Babies"}) == std::vector<std::string>{"Babies"});

    DistanceMatrix flat;
    flat.names = {"c", "a", "b", "s"};
    flat.values = Eigen::MatrixXd::Constant(4, 4, 0.3);
    flat.values.diagonal().setZero();
    CHECK(order_tasks(flat, "s") == std::vector<std::string>{"a", "b", "c"});
    CHECK(order_tasks(flat, "s", std::vector<std::string>{"c", "b"}) == std::vector<std::string>{"b", "c"});
    CHECK_THROWS(order_tasks(flat, "missing"));

    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.1, 1.0);
    for (int trial = 0; trial < 20; ++trial) {
        DistanceMatrix r;
        r.names = {"t0", "t1", "t2", "t3", "t4", "t5"};
        r.values = Eigen::MatrixXd::Zero(6, 6);
        for (int i = 0; i < 6; ++i)
            for (int j = i + 1; j < 6; ++j) r.values(i, j) = r.values(j, i) = u(rng);
        auto seq = order_tasks(r, "t2");
        CHECK(seq.size() == 5);
        seq.push_back("t2");
        std::sort(seq.begin(), seq.end());
        CHECK(seq == r.names);
    }
}

TEST_CASE("distance matrix csv round trip and validation") {
    const auto m = table8();
    const auto back = DistanceMatrix::parse_csv(m.to_csv());
    CHECK(back.names == m.names);
    CHECK((back.values - m.values).cwiseAbs().maxCoeff() <= 1e-12);
    const auto tri = DistanceMatrix::parse_csv("name,a,b\na,0,\nb,0.5,0\n");
    CHECK(tri.values(0, 1) == 0.5);
    CHECK_THROWS(DistanceMatrix::parse_csv(""));
    CHECK_THROWS(DistanceMatrix::parse_csv("name,a,b\na,0,0.2\nb,0.5,0\n"));
}

TEST_CASE("checkpoint round trip is bit exact") {
    const GeneratorConfig cfg = tiny_generator();
    for (bool bias : {true, false}) {
        auto set = init_identity_set<float>(cfg, "task_rt", 2, bias, ActivationKind::GELU, 5);
        std::mt19937_64 rng(6);
        std::normal_distribution<float> nd(0.0f, 0.3f);
        for (Matrix<float>* f : set.factors())
            for (Eigen::Index j = 0; j < f->size(); ++j) f->data()[j] = nd(rng);
        const auto bytes = encode_modulators(set);
        CHECK(bytes.size() == checkpoint_size(set));
        CHECK(checkpoint_size(set) == checkpoint_header_size(set) + 4 * set.param_count());
        const auto back = decode_modulators(bytes);
        CHECK(encode_modulators(back) == bytes);
        CHECK(back.task_id == "task_rt");
        CHECK(back.with_bias == bias);
        const auto fa = set.factors();
        const auto fb = back.factors();
        REQUIRE(fa.size() == fb.size());
        for (std::size_t j = 0; j < fa.size(); ++j) CHECK(*fa[j] == *fb[j]);

        auto bad = bytes;
        bad[0] = 'X';
        CHECK_THROWS_AS(decode_modulators(bad), FormatError);
        CHECK_THROWS_AS(decode_modulators(std::span(bytes).first(bytes.size() - 1)), FormatError);
        auto longer = bytes;
        longer.push_back(0);
        CHECK_THROWS_AS(decode_modulators(longer), FormatError);
    }
}

TEST_CASE("modulator registry") {
    const fs::path dir = scratch("registry");
    ModulatorRegistry reg(dir);
    const auto set = init_identity_set<float>(tiny_generator(), "task_a", 1, true, ActivationKind::ReLU, 1);
    CHECK_FALSE(reg.contains("task_a"));
    reg.store(set);
    CHECK(reg.contains("task_a"));
    CHECK(reg.tasks() == std::vector<std::string>{"task_a"});
    CHECK(encode_modulators(reg.load("task_a")) == encode_modulators(set));
    CHECK_THROWS(reg.load("task_b"));
    fs::remove_all(dir);
}

TEST_CASE("training keeps the base frozen and earlier tasks intact") {
    const GeneratorConfig gcfg = tiny_generator();
    Generator<float> gen(GeneratorWeights<double>::init(gcfg, 21).cast<float>());
    const std::string hash0 = base_weights_hash(gen.base());

    const auto identity = train_task(gen, toy_task(0), tiny_train(0));
    const auto base_images = generate(gen, nullptr, 4, 3);
    const auto id_images = generate(gen, &identity.modulators, 4, 3);
    for (std::size_t j = 0; j < 3; ++j)
        for (std::size_t p = 0; p < base_images[j].data.size(); ++p)
            REQUIRE(std::abs(base_images[j].data[p] - id_images[j].data[p]) <= 1e-5f);

    const fs::path dir = scratch("train");
    ModulatorRegistry reg(dir);
    const auto r1 = train_task(gen, toy_task(0), tiny_train(6));
    CHECK(r1.log.size() == 6);
    CHECK(r1.base_hash == hash0);
    reg.store(r1.modulators);
    const auto captured = generate_for_task(gen, reg, r1.modulators.task_id, 9, 5);

    const auto again = train_task(gen, toy_task(0), tiny_train(6));
    CHECK(encode_modulators(again.modulators) == encode_modulators(r1.modulators));

    const auto r2 = train_task(gen, toy_task(1), tiny_train(6));
    reg.store(r2.modulators);
    CHECK(base_weights_hash(gen.base()) == hash0);
    const auto later = generate_for_task(gen, reg, r1.modulators.task_id, 9, 5);
    for (std::size_t j = 0; j < captured.size(); ++j) CHECK(later[j].data == captured[j].data);

    const auto other = generate_for_task(gen, reg, r2.modulators.task_id, 9, 5);
    CHECK(other[0].data != captured[0].data);
    CHECK(generate(gen, nullptr, 1, 0).empty());
    fs::remove_all(dir);
}

TEST_CASE("training without the mode seeking term") {
    const GeneratorConfig gcfg = tiny_generator();
    Generator<float> gen(GeneratorWeights<double>::init(gcfg, 22).cast<float>());
    TrainConfig t = tiny_train(3);
    t.cms.lambda = 0.0;
    const auto r = train_task(gen, toy_task(2), t);
    for (const auto& e : r.log) CHECK(e.cms == 0.0);
    TrainConfig bad = tiny_train(3);
    bad.batch_size = 0;
    CHECK_THROWS(train_task(gen, toy_task(2), bad));
    CHECK_THROWS(train_task(gen, TaskSpec{"wrong", render_toy_task(toy_task_style(0), 2, 8, 1), 8}, tiny_train(1)));
}

TEST_CASE("run config parsing") {
    const auto c = RunConfig::parse("# comment\nseed = 7\nlambda = 0.5\ntasks = a, b\nmodulate_affine = true\n");
    CHECK(c.train.seed == 7);
    CHECK(c.train.cms.lambda == 0.5);
    CHECK(c.tasks == std::vector<std::string>{"a", "b"});
    CHECK(c.generator.modulate_affine);
    CHECK_THROWS(RunConfig::parse("sede = 7\n"));
    CHECK_THROWS(RunConfig::parse("rank = many\n"));
    const auto back = RunConfig::parse(c.to_text());
    CHECK(back.to_text() == c.to_text());
}

TEST_CASE("toy tasks are deterministic and separable") {
    const auto a = render_toy_task(toy_task_style(0), 5, 16, 3);
    const auto b = render_toy_task(toy_task_style(0), 5, 16, 3);
    for (std::size_t j = 0; j < 5; ++j) CHECK(a[j].data == b[j].data);
    const auto other = render_toy_task(toy_task_style(1), 5, 16, 3);
    DownsampledL1 d;
    double within = 0.0, across = 0.0;
    for (std::size_t i = 0; i < 5; ++i)
        for (std::size_t j = 0; j < 5; ++j) {
            within += d.distance(a[i], a[j]);
            across += d.distance(a[i], other[j]);
        }
    CHECK(across > within);

    const fs::path dir = scratch("toy");
    const auto names = make_toy_tasks(dir, 2, 3, 16, 8);
    REQUIRE(names.size() == 2);
    const auto loaded = load_task(dir / names[1], names[1], 16);
    CHECK(loaded.images.size() == 3);
    CHECK_THROWS(load_task(dir / "absent", "absent", 16));
    fs::remove_all(dir);
}
