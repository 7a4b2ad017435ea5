// Copyright (c) 2026, The lfs-gan authors
// SPDX-License-Identifier: Apache-2.0
//

#include "lfs/lifelong.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "lfs/checkpoint.hpp"

namespace lfs {

namespace {

constexpr std::size_t kGenerateChunk = 32;

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

// Independent seeds for the parts of one task's training run.
struct TaskSeeds {
    std::uint64_t modulators, discriminator, loop;
};

TaskSeeds task_seeds(std::uint64_t seed, const std::string& task_id) {
    const std::uint64_t h = fnv1a(task_id);
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(h), static_cast<std::uint32_t>(h >> 32)};
    std::uint64_t out[3];
    std::uint32_t words[6];
    seq.generate(words, words + 6);
    for (int j = 0; j < 3; ++j) out[j] = (std::uint64_t(words[2 * j]) << 32) | words[2 * j + 1];
    return {out[0], out[1], out[2]};
}

// Columns [first*hw, (first+count)*hw) of a batch activation.
Activation<float> slice(const Activation<float>& a, std::size_t first, std::size_t count) {
    const std::size_t hw = a.h * a.w;
    Activation<float> out;
    out.n = count;
    out.h = a.h;
    out.w = a.w;
    out.value = a.value.middleCols(static_cast<Eigen::Index>(first * hw), static_cast<Eigen::Index>(count * hw));
    return out;
}

// Writes per-sample CHW gradient values into a C x (n*HW) batch matrix.
void scatter_sample(Matrix<float>& dst, std::size_t sample, std::size_t hw, std::span<const double> chw, double scale) {
    const auto channels = static_cast<std::size_t>(dst.rows());
    for (std::size_t ch = 0; ch < channels; ++ch) {
        float* row = dst.data() + ch * static_cast<std::size_t>(dst.cols()) + sample * hw;
        const double* src = chw.data() + ch * hw;
        for (std::size_t p = 0; p < hw; ++p) row[p] += static_cast<float>(scale * src[p]);
    }
}

void add_into(DiscriminatorWeights<float>& acc, const DiscriminatorWeights<float>& g) {
    for (std::size_t b = 0; b < acc.blocks.size(); ++b) {
        for (std::size_t j = 0; j < acc.blocks[b].weight.data.size(); ++j) acc.blocks[b].weight.data[j] += g.blocks[b].weight.data[j];
        for (std::size_t j = 0; j < acc.blocks[b].bias.size(); ++j) acc.blocks[b].bias[j] += g.blocks[b].bias[j];
    }
    acc.head.weight += g.head.weight;
    acc.head.bias += g.head.bias;
}

std::vector<std::span<const float>> const_spans(DiscriminatorWeights<float>& w) {
    std::vector<std::span<const float>> out;
    for (auto s : parameter_spans(w)) out.emplace_back(s.data(), s.size());
    return out;
}

void check_task_id(const std::string& id) {
    if (id.empty()) throw std::invalid_argument("task id must not be empty");
    if (id.find_first_of("/\\") != std::string::npos || id == "." || id == "..") {
        throw std::invalid_argument("task id '" + id + "' is not a valid file name");
    }
}

}  // namespace

void TaskSpec::validate() const {
    check_task_id(task_id);
    if (images.empty()) throw std::invalid_argument("task " + task_id + " has no images");
    for (const auto& img : images) {
        if (img.channels != 3 || img.height != resolution || img.width != resolution) {
            throw ShapeError("task " + task_id + " has an image that is not 3x" + std::to_string(resolution) + "x" +
                             std::to_string(resolution));
        }
    }
}

TaskSpec load_task(const std::filesystem::path& dir, const std::string& task_id, std::size_t resolution) {
    if (!std::filesystem::is_directory(dir)) throw std::runtime_error("task directory " + dir.string() + " not found");
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir)) {
        if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    TaskSpec t;
    t.task_id = task_id;
    t.resolution = resolution;
    for (const auto& f : files) t.images.push_back(resize_bilinear(read_png(f), resolution, resolution));
    t.validate();
    return t;
}

void TrainConfig::validate() const {
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (iterations < 1) throw std::invalid_argument("iterations must be >= 1");
    if (!(lr > 0.0)) throw std::invalid_argument("lr must be > 0");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw std::invalid_argument("adam betas must lie in [0, 1)");
    if (rank < 1) throw std::invalid_argument("rank must be >= 1");
    if (d_steps < 1) throw std::invalid_argument("d_steps must be >= 1");
    cms.validate();
    discriminator.validate();
}

std::string base_weights_hash(const GeneratorWeights<float>& weights) { return sha256_hex(weights.serialize()); }

TrainResult train_task(const Generator<float>& gen, const TaskSpec& task, const TrainConfig& cfg,
                       const TrainCallback& on_step) {
    task.validate();
    const GeneratorConfig& gcfg = gen.config();
    if (task.resolution != gcfg.target_resolution) {
        throw ShapeError("task resolution " + std::to_string(task.resolution) + " differs from the generator's " +
                         std::to_string(gcfg.target_resolution));
    }
    // iterations == 0 is allowed here and yields the identity set.
    TrainConfig checked = cfg;
    checked.iterations = std::max<std::size_t>(cfg.iterations, 1);
    checked.validate();
    DiscriminatorConfig dcfg = cfg.discriminator;
    dcfg.resolution = gcfg.target_resolution;

    const TaskSeeds seeds = task_seeds(cfg.seed, task.task_id);
    TrainResult result;
    result.base_hash = base_weights_hash(gen.base());
    result.modulators =
        init_identity_set<float>(gcfg, task.task_id, cfg.rank, cfg.with_bias, cfg.act, seeds.modulators);

    const std::vector<std::string> names = [&] {
        std::vector<std::string> out;
        for (const auto& [name, mod] : result.modulators.layers) out.push_back(name);
        return out;
    }();
    Discriminator<float> disc(DiscriminatorWeights<float>::init(dcfg, seeds.discriminator));
    Adam<float> opt_g(cfg.lr, cfg.beta1, cfg.beta2);
    Adam<float> opt_d(cfg.lr, cfg.beta1, cfg.beta2);
    const auto dist = make_distance(cfg.distance);
    std::mt19937_64 rng(seeds.loop);

    const std::size_t B = cfg.batch_size;
    const bool use_cms = cfg.cms.enabled();
    const std::size_t n_fake = use_cms ? cfg.cms.oversample_factor * B : B;
    const std::size_t hw = gcfg.target_resolution * gcfg.target_resolution;
    std::vector<std::size_t> order(task.images.size());

    for (std::size_t it = 0; it < cfg.iterations; ++it) {
        TrainLogEntry entry;
        entry.iteration = it;

        // Real batch: B images, without replacement when the task is large enough.
        std::iota(order.begin(), order.end(), 0);
        std::shuffle(order.begin(), order.end(), rng);
        std::vector<Image> anchors;
        std::vector<std::vector<float>> real_chw;
        for (std::size_t j = 0; j < B; ++j) {
            const Image& img = task.images[order[j % order.size()]];
            anchors.push_back(img);
            real_chw.push_back(img.data);
        }
        const Activation<float> real = pack_images<float>(std::span<const std::vector<float>>(real_chw), gcfg.target_resolution);

        const EffectiveWeights<float> eff = gen.effective(&result.modulators);
        const Matrix<float> z = sample_latents<float>(n_fake, gcfg.z_dim, rng);
        const GeneratorCache<float> cache = gen.forward(eff, z, &rng);
        const Activation<float> fake = slice(cache.image, 0, B);

        // Discriminator update.
        for (std::size_t s = 0; s < cfg.d_steps; ++s) {
            DiscriminatorCache<float> c_real, c_fake;
            const std::vector<float> lr_real = disc.forward(real, &c_real);
            const std::vector<float> lr_fake = disc.forward(fake, &c_fake);
            const std::vector<double> dr(lr_real.begin(), lr_real.end()), df(lr_fake.begin(), lr_fake.end());
            const AdversarialLoss ld = adv_d_loss(dr, df);
            entry.d_loss = ld.value;
            const std::vector<float> gr(ld.d_real.begin(), ld.d_real.end()), gf(ld.d_fake.begin(), ld.d_fake.end());
            DiscriminatorGrads<float> g = disc.backward(c_real, gr);
            add_into(g.weights, disc.backward(c_fake, gf).weights);
            opt_d.step(parameter_spans(disc.weights()), const_spans(g.weights));
        }

        // Generator update through the freshly updated discriminator.
        GeneratorUpstream<float> up;
        up.d_image = Matrix<float>::Zero(cache.image.value.rows(), cache.image.value.cols());
        {
            DiscriminatorCache<float> c_fake;
            const std::vector<float> logits = disc.forward(fake, &c_fake);
            const std::vector<double> lf(logits.begin(), logits.end());
            const AdversarialLoss lg = adv_g_loss(lf);
            entry.g_adv = lg.value;
            const std::vector<float> gf(lg.d_fake.begin(), lg.d_fake.end());
            const DiscriminatorGrads<float> g = disc.backward(c_fake, gf, false);
            up.d_image.leftCols(static_cast<Eigen::Index>(B * hw)) = g.d_input;
        }
        if (use_cms) {
            const std::vector<ForwardRecord> records = gen.records(cache);
            const CmsResult cms = cms_loss(records, anchors, *dist, cfg.cms, true);
            entry.cms = cms.value;
            entry.cms_clusters = cms.contributing_clusters;
            if (cms.contributing_clusters > 0) {
                const double lam = cfg.cms.lambda;
                up.d_w = Matrix<float>::Zero(static_cast<Eigen::Index>(n_fake), static_cast<Eigen::Index>(gcfg.w_dim));
                up.d_features.resize(cache.features.size());
                for (std::size_t l = 0; l < cache.features.size(); ++l) {
                    up.d_features[l] = Matrix<float>::Zero(cache.features[l].value.rows(), cache.features[l].value.cols());
                }
                for (std::size_t s = 0; s < n_fake; ++s) {
                    const RecordGrad& rg = cms.grads[s];
                    for (std::size_t j = 0; j < rg.d_w.size(); ++j) {
                        up.d_w(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(j)) += static_cast<float>(lam * rg.d_w[j]);
                    }
                    for (std::size_t l = 0; l < rg.d_features.size(); ++l) {
                        const std::size_t fhw = cache.features[l].h * cache.features[l].w;
                        scatter_sample(up.d_features[l], s, fhw, rg.d_features[l], lam);
                    }
                    scatter_sample(up.d_image, s, hw, rg.d_image, lam);
                }
            }
        }
        entry.g_total = total_g_loss(entry.g_adv, entry.cms, cfg.cms);
        const EffectiveGrads<float> eg = gen.backward(eff, cache, up);
        const ModulatorSet<float> mg = gen.modulator_grads(result.modulators, eg, names);
        opt_g.step(parameter_spans(result.modulators), parameter_spans(mg));

        result.log.push_back(entry);
        if (on_step) on_step(entry);
    }

    if (base_weights_hash(gen.base()) != result.base_hash) {
        throw ContractError("base generator weights changed during training");
    }
    return result;
}

std::vector<Image> generate(const Generator<float>& gen, const ModulatorSet<float>* mods, std::uint64_t seed,
                            std::size_t n) {
    std::vector<Image> out;
    if (n == 0) return out;
    out.reserve(n);
    const GeneratorConfig& cfg = gen.config();
    const EffectiveWeights<float> eff = gen.effective(mods);
    std::mt19937_64 rng(seed);
    std::mt19937_64 noise_rng(seed ^ 0x9e3779b97f4a7c15ull);
    for (std::size_t first = 0; first < n; first += kGenerateChunk) {
        const std::size_t count = std::min(kGenerateChunk, n - first);
        const Matrix<float> z = sample_latents<float>(count, cfg.z_dim, rng);
        const GeneratorCache<float> cache = gen.forward(eff, z, &noise_rng);
        const std::size_t res = cache.image.h, hw = res * res;
        for (std::size_t s = 0; s < count; ++s) {
            Image img(3, res, res);
            for (std::size_t ch = 0; ch < 3; ++ch) {
                const float* src = cache.image.value.data() + ch * static_cast<std::size_t>(cache.image.value.cols()) + s * hw;
                std::copy(src, src + hw, img.data.begin() + static_cast<std::ptrdiff_t>(ch * hw));
            }
            out.push_back(std::move(img));
        }
    }
    return out;
}

ModulatorRegistry::ModulatorRegistry(std::filesystem::path dir) : dir_(std::move(dir)) {}

std::filesystem::path ModulatorRegistry::path_for(const std::string& task_id) const {
    check_task_id(task_id);
    return dir_ / (task_id + ".left");
}

bool ModulatorRegistry::contains(const std::string& task_id) const {
    return std::filesystem::is_regular_file(path_for(task_id));
}

void ModulatorRegistry::store(const ModulatorSet<float>& set) const {
    std::filesystem::create_directories(dir_);
    save_modulators(set, path_for(set.task_id));
}

ModulatorSet<float> ModulatorRegistry::load(const std::string& task_id) const {
    if (!contains(task_id)) throw std::invalid_argument("unknown task '" + task_id + "' in " + dir_.string());
    ModulatorSet<float> set = load_modulators(path_for(task_id));
    if (set.task_id != task_id) {
        throw FormatError("checkpoint " + path_for(task_id).string() + " holds task '" + set.task_id + "'");
    }
    return set;
}

std::vector<std::string> ModulatorRegistry::tasks() const {
    std::vector<std::string> out;
    if (!std::filesystem::is_directory(dir_)) return out;
    for (const auto& e : std::filesystem::directory_iterator(dir_)) {
        if (e.is_regular_file() && e.path().extension() == ".left") out.push_back(e.path().stem().string());
    }
    std::sort(out.begin(), out.end());
    return out;
}

std::vector<Image> generate_for_task(const Generator<float>& gen, const ModulatorRegistry& registry,
                                     const std::string& task_id, std::uint64_t seed, std::size_t n) {
    const ModulatorSet<float> set = registry.load(task_id);
    gen.check_modulators(set);
    return generate(gen, &set, seed, n);
}

// ---- task ordering ----------------------------------------------------------

std::size_t DistanceMatrix::index_of(const std::string& name) const {
    const auto it = std::find(names.begin(), names.end(), name);
    if (it == names.end()) throw std::invalid_argument("domain '" + name + "' is not in the distance matrix");
    return static_cast<std::size_t>(it - names.begin());
}

void DistanceMatrix::validate() const {
    const auto n = static_cast<Eigen::Index>(names.size());
    if (n == 0) throw std::invalid_argument("distance matrix is empty");
    if (values.rows() != n || values.cols() != n) throw std::invalid_argument("distance matrix is not square");
    std::vector<std::string> sorted = names;
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
        throw std::invalid_argument("distance matrix repeats a domain name");
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
            if (!std::isfinite(values(i, j)) || values(i, j) < 0.0) {
                throw std::invalid_argument("distance matrix entries must be finite and nonnegative");
            }
            if (std::abs(values(i, j) - values(j, i)) > 1e-9) throw std::invalid_argument("distance matrix is not symmetric");
        }
    }
}

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

}  // namespace

DistanceMatrix DistanceMatrix::parse_csv(const std::string& text) {
    std::stringstream in(text);
    std::string line;
    std::vector<std::vector<std::string>> rows;
    while (std::getline(in, line)) {
        if (trim(line).empty()) continue;
        rows.push_back(split_csv(line));
    }
    if (rows.empty()) throw std::invalid_argument("distance matrix file is empty");
    DistanceMatrix m;
    m.names.assign(rows[0].begin() + 1, rows[0].end());
    const std::size_t n = m.names.size();
    if (n == 0) throw std::invalid_argument("distance matrix header names no domains");
    if (rows.size() != n + 1) throw std::invalid_argument("distance matrix needs one row per header domain");
    constexpr double kMissing = -1.0;
    m.values = Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(n), kMissing);
    for (std::size_t i = 0; i < n; ++i) {
        const auto& row = rows[i + 1];
        if (row.empty() || row[0] != m.names[i]) throw std::invalid_argument("distance matrix row " + std::to_string(i + 1) + " does not match the header order");
        if (row.size() > n + 1) throw std::invalid_argument("distance matrix row has too many cells");
        for (std::size_t j = 0; j + 1 < row.size(); ++j) {
            const std::string& cell = row[j + 1];
            if (cell.empty() || cell == "-") continue;
            try {
                std::size_t used = 0;
                const double v = std::stod(cell, &used);
                if (used != cell.size()) throw std::invalid_argument(cell);
                m.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v;
            } catch (const std::exception&) {
                throw std::invalid_argument("distance matrix cell '" + cell + "' is not a number");
            }
        }
    }
    for (Eigen::Index i = 0; i < m.values.rows(); ++i) {
        for (Eigen::Index j = 0; j < m.values.cols(); ++j) {
            if (i == j && m.values(i, j) == kMissing) m.values(i, j) = 0.0;
            if (m.values(i, j) == kMissing) m.values(i, j) = m.values(j, i);
            if (m.values(i, j) == kMissing) throw std::invalid_argument("distance between " + m.names[static_cast<std::size_t>(i)] + " and " + m.names[static_cast<std::size_t>(j)] + " is missing");
        }
    }
    m.validate();
    return m;
}

DistanceMatrix DistanceMatrix::read_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_csv(ss.str());
}

std::string DistanceMatrix::to_csv() const {
    std::ostringstream out;
    out.precision(17);
    out << "domain";
    for (const auto& n : names) out << ',' << n;
    out << '\n';
    for (std::size_t i = 0; i < names.size(); ++i) {
        out << names[i];
        for (std::size_t j = 0; j < names.size(); ++j) out << ',' << values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        out << '\n';
    }
    return out.str();
}

DistanceMatrix domain_distances(const std::vector<TaskSpec>& domains, const PerceptualDistance& dist) {
    DistanceMatrix m;
    const auto n = static_cast<Eigen::Index>(domains.size());
    m.values = Eigen::MatrixXd::Zero(n, n);
    for (const auto& d : domains) m.names.push_back(d.task_id);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = i + 1; j < n; ++j) {
            const double v = dist.cross(domains[static_cast<std::size_t>(i)].images, domains[static_cast<std::size_t>(j)].images).mean();
            m.values(i, j) = m.values(j, i) = v;
        }
    }
    m.validate();
    return m;
}

std::vector<std::string> order_tasks(const DistanceMatrix& m, const std::string& source,
                                     std::optional<std::vector<std::string>> candidates) {
    m.validate();
    std::size_t current = m.index_of(source);
    std::vector<std::size_t> remaining;
    if (candidates) {
        for (const auto& c : *candidates) {
            const std::size_t idx = m.index_of(c);
            if (idx == current) throw std::invalid_argument("the source domain cannot be a candidate");
            if (std::find(remaining.begin(), remaining.end(), idx) != remaining.end()) {
                throw std::invalid_argument("candidate '" + c + "' is listed twice");
            }
            remaining.push_back(idx);
        }
    } else {
        for (std::size_t j = 0; j < m.names.size(); ++j) {
            if (j != current) remaining.push_back(j);
        }
    }
    std::vector<std::string> out;
    while (!remaining.empty()) {
        auto best = remaining.begin();
        for (auto it = remaining.begin() + 1; it != remaining.end(); ++it) {
            const double d = m.values(static_cast<Eigen::Index>(current), static_cast<Eigen::Index>(*it));
            const double bd = m.values(static_cast<Eigen::Index>(current), static_cast<Eigen::Index>(*best));
            if (d > bd || (d == bd && m.names[*it] < m.names[*best])) best = it;
        }
        current = *best;
        out.push_back(m.names[current]);
        remaining.erase(best);
    }
    return out;
}

}  // namespace lfs
