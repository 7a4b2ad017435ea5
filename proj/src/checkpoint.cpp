// Copyright (c) 2026, The lfs-gan authors
// SPDX-License-Identifier: Apache-2.0
//

#include "lfs/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <memory>
#include <sstream>

#include <openssl/evp.h>

namespace lfs {

static_assert(std::endian::native == std::endian::little, "checkpoints assume a little-endian host");

namespace {

constexpr char kMagic[4] = {'L', 'E', 'F', 'T'};
constexpr std::uint8_t kConvKind = 0;
constexpr std::uint8_t kFcKind = 1;

class Writer {
public:
    void bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        out_.insert(out_.end(), b, b + n);
    }
    void u8(std::uint8_t v) { out_.push_back(v); }
    void u32(std::size_t v) {
        if (v > 0xffffffffu) throw std::length_error("checkpoint field exceeds 32 bits");
        const auto x = static_cast<std::uint32_t>(v);
        bytes(&x, 4);
    }
    void str(const std::string& s) {
        u32(s.size());
        bytes(s.data(), s.size());
    }
    void matrix(const Matrix<float>& m) { bytes(m.data(), sizeof(float) * static_cast<std::size_t>(m.size())); }
    std::vector<std::uint8_t> take() { return std::move(out_); }

private:
    std::vector<std::uint8_t> out_;
};

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}
    void bytes(void* p, std::size_t n) {
        if (n > in_.size() - pos_) throw FormatError("checkpoint truncated");
        std::memcpy(p, in_.data() + pos_, n);
        pos_ += n;
    }
    std::uint8_t u8() {
        std::uint8_t v = 0;
        bytes(&v, 1);
        return v;
    }
    std::uint32_t u32() {
        std::uint32_t v = 0;
        bytes(&v, 4);
        return v;
    }
    std::string str() {
        const std::uint32_t n = u32();
        if (n > in_.size() - pos_) throw FormatError("checkpoint truncated");
        std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
        pos_ += n;
        return s;
    }
    void matrix(Matrix<float>& m) { bytes(m.data(), sizeof(float) * static_cast<std::size_t>(m.size())); }
    bool done() const { return pos_ == in_.size(); }

private:
    std::span<const std::uint8_t> in_;
    std::size_t pos_ = 0;
};

Writer write_header(const ModulatorSet<float>& set) {
    Writer w;
    w.bytes(kMagic, 4);
    w.u32(kCheckpointVersion);
    w.str(set.task_id);
    w.u32(set.rank);
    w.u8(set.with_bias ? 1 : 0);
    w.u8(static_cast<std::uint8_t>(set.act));
    w.u32(set.layers.size());
    return w;
}

void write_layer_header(Writer& w, const std::string& name, const LayerModulator<float>& mod) {
    w.str(name);
    if (const auto* c = std::get_if<LeftConvModulator<float>>(&mod)) {
        w.u8(kConvKind);
        w.u32(c->shape.c_out);
        w.u32(c->shape.c_in);
        w.u32(c->shape.k);
    } else {
        const auto& f = std::get<LeftFcModulator<float>>(mod);
        w.u8(kFcKind);
        w.u32(f.shape.d_out);
        w.u32(f.shape.d_in);
    }
}

LeftConvModulator<float> sized_conv(ConvShape shape, std::size_t r, bool with_bias, ActivationKind act) {
    const auto K = static_cast<Eigen::Index>(shape.kernel_area());
    const auto co = static_cast<Eigen::Index>(shape.c_out), ci = static_cast<Eigen::Index>(shape.c_in);
    const auto rr = static_cast<Eigen::Index>(r);
    LeftConvModulator<float> m;
    m.shape = shape;
    m.rank = r;
    m.act = act;
    m.with_bias = with_bias;
    m.m1_out.resize(co, rr);
    m.m1_inst.resize(rr, rr * K);
    m.m2_in.resize(ci, rr);
    if (with_bias) {
        m.a1_out.resize(co, rr);
        m.a1_inst.resize(rr, K);
    }
    m.a2_in.resize(ci, rr);
    m.a2_inst.resize(rr, K);
    return m;
}

LeftFcModulator<float> sized_fc(FcShape shape, std::size_t r) {
    const auto d_out = static_cast<Eigen::Index>(shape.d_out), d_in = static_cast<Eigen::Index>(shape.d_in);
    const auto rr = static_cast<Eigen::Index>(r);
    LeftFcModulator<float> m;
    m.shape = shape;
    m.rank = r;
    m.m_out.resize(d_out, rr);
    m.m_in.resize(rr, d_in);
    m.a_out.resize(d_out, rr);
    m.a_in.resize(rr, d_in);
    m.gamma_b.resize(d_out, 1);
    m.beta_b.resize(d_out, 1);
    return m;
}

// Rejects dimensions whose payload could not fit in the remaining bytes,
// so a corrupted header cannot trigger a huge allocation.
void check_dims(std::initializer_list<std::uint32_t> dims) {
    constexpr std::uint32_t kMaxDim = 1u << 16;
    for (std::uint32_t d : dims) {
        if (d == 0 || d > kMaxDim) throw FormatError("checkpoint layer dimension out of range");
    }
}

}  // namespace

std::vector<std::uint8_t> encode_modulators(const ModulatorSet<float>& set) {
    Writer w = write_header(set);
    for (const auto& [name, mod] : set.layers) {
        std::visit(
            [&](const auto& m) {
                if (m.rank != set.rank) throw ShapeError("layer " + name + " rank differs from the set rank");
                m.validate();
            },
            mod);
        if (const auto* c = std::get_if<LeftConvModulator<float>>(&mod)) {
            if (c->with_bias != set.with_bias || c->act != set.act) {
                throw ShapeError("layer " + name + " bias/activation differ from the set header");
            }
        }
        write_layer_header(w, name, mod);
        std::visit([&](const auto& m) { m.for_each_factor([&](const char*, const Matrix<float>& f) { w.matrix(f); }); },
                   mod);
    }
    return w.take();
}

ModulatorSet<float> decode_modulators(std::span<const std::uint8_t> bytes) {
    Reader r(bytes);
    char magic[4];
    r.bytes(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("not a modulator checkpoint (bad magic)");
    const std::uint32_t version = r.u32();
    if (version != kCheckpointVersion) {
        throw FormatError("unsupported checkpoint version " + std::to_string(version));
    }
    ModulatorSet<float> set;
    set.task_id = r.str();
    set.rank = r.u32();
    const std::uint8_t bias = r.u8();
    if (bias > 1) throw FormatError("checkpoint bias flag must be 0 or 1");
    set.with_bias = bias == 1;
    const std::uint8_t act = r.u8();
    try {
        set.act = activation_from_id(act);
    } catch (const std::exception&) {
        throw FormatError("checkpoint activation id " + std::to_string(act) + " is unknown");
    }
    if (set.rank == 0 || set.rank > 4096) throw FormatError("checkpoint rank out of range");
    const std::uint32_t count = r.u32();
    for (std::uint32_t l = 0; l < count; ++l) {
        std::string name = r.str();
        const std::uint8_t kind = r.u8();
        LayerModulator<float> mod;
        if (kind == kConvKind) {
            const std::uint32_t co = r.u32(), ci = r.u32(), k = r.u32();
            check_dims({co, ci, k});
            mod = sized_conv(ConvShape{co, ci, k}, set.rank, set.with_bias, set.act);
        } else if (kind == kFcKind) {
            const std::uint32_t d_out = r.u32(), d_in = r.u32();
            check_dims({d_out, d_in});
            mod = sized_fc(FcShape{d_out, d_in}, set.rank);
        } else {
            throw FormatError("checkpoint layer " + name + " has unknown kind " + std::to_string(kind));
        }
        std::visit([&](auto& m) { m.for_each_factor([&](const char*, Matrix<float>& f) { r.matrix(f); }); }, mod);
        if (!set.layers.emplace(std::move(name), std::move(mod)).second) {
            throw FormatError("checkpoint repeats a layer name");
        }
    }
    if (!r.done()) throw FormatError("checkpoint has trailing bytes after the declared layers");
    return set;
}

std::size_t checkpoint_header_size(const ModulatorSet<float>& set) {
    Writer w = write_header(set);
    for (const auto& [name, mod] : set.layers) write_layer_header(w, name, mod);
    return w.take().size();
}

std::size_t checkpoint_size(const ModulatorSet<float>& set) {
    return checkpoint_header_size(set) + sizeof(float) * set.param_count();
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw std::runtime_error("failed writing " + path.string());
}

void save_modulators(const ModulatorSet<float>& set, const std::filesystem::path& path) {
    write_file(path, encode_modulators(set));
}

ModulatorSet<float> load_modulators(const std::filesystem::path& path) { return decode_modulators(read_file(path)); }

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
        EVP_DigestUpdate(ctx.get(), bytes.data(), bytes.size()) != 1 ||
        EVP_DigestFinal_ex(ctx.get(), digest, &len) != 1) {
        throw std::runtime_error("sha256 computation failed");
    }
    std::ostringstream hex;
    for (unsigned int j = 0; j < len; ++j) hex << std::hex << std::setw(2) << std::setfill('0') << int(digest[j]);
    return hex.str();
}

}  // namespace lfs
