#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "distill.hpp"
#include "model.hpp"
#include "tensor.hpp"

namespace mlfs {

class FormatError : public std::runtime_error {
public:
    explicit FormatError(const std::string& m) : std::runtime_error(m) {}
};

constexpr std::uint16_t kCheckpointVersion = 1;

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

namespace detail {

inline std::uint32_t crc32(const std::string& data) {
    static const std::array<std::uint32_t, 256> table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c >> 1) ^ (0xEDB88320u & (~(c & 1u) + 1u));
            t[i] = c;
        }
        return t;
    }();
    std::uint32_t crc = 0xFFFFFFFFu;
    for (unsigned char b : data) crc = (crc >> 8) ^ table[(crc ^ b) & 0xFFu];
    return ~crc;
}

inline void put_u16(std::string& buf, std::uint16_t v) {
    buf.push_back(static_cast<char>(v & 0xFF));
    buf.push_back(static_cast<char>((v >> 8) & 0xFF));
}

inline void put_u32(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_f32(std::string& buf, float v) {
    std::uint32_t bits;
    std::memcpy(&bits, &v, 4);
    put_u32(buf, bits);
}

struct Reader {
    const std::string& buf;
    std::size_t pos = 0;

    void need(std::size_t n, const char* what) const {
        if (pos + n > buf.size()) throw FormatError(std::string("checkpoint: truncated ") + what);
    }
    std::uint8_t u8(const char* what) {
        need(1, what);
        return static_cast<std::uint8_t>(buf[pos++]);
    }
    std::uint16_t u16(const char* what) {
        need(2, what);
        std::uint16_t v = static_cast<std::uint8_t>(buf[pos]) |
                          (static_cast<std::uint16_t>(static_cast<std::uint8_t>(buf[pos + 1])) << 8);
        pos += 2;
        return v;
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    float f32(const char* what) {
        std::uint32_t bits = u32(what);
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    std::string bytes(std::size_t n, const char* what) {
        need(n, what);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

}  // namespace detail

// ---------------------------------------------------------------------------
// the container: "MLFS", version u16, count u32, tensor records, CRC-32.
// Each record: name (u16 length prefix), rank u8, extents u32 each, dtype
// tag u8 (0 = binary32), payload little-endian binary32.

inline std::string encode_checkpoint(const NamedTensors& tensors) {
    std::set<std::string> seen;
    for (const auto& [name, t] : tensors) {
        if (name.empty()) throw FormatError("checkpoint: empty tensor name");
        if (!seen.insert(name).second) throw FormatError("checkpoint: duplicate tensor name '" + name + "'");
    }
    std::string buf = "MLFS";
    detail::put_u16(buf, kCheckpointVersion);
    detail::put_u32(buf, static_cast<std::uint32_t>(tensors.size()));
    for (const auto& [name, t] : tensors) {
        if (name.size() > 0xFFFF) throw FormatError("checkpoint: tensor name too long");
        detail::put_u16(buf, static_cast<std::uint16_t>(name.size()));
        buf += name;
        const Shape& s = t.shape();
        if (s.size() > 0xFF) throw FormatError("checkpoint: tensor rank too large");
        buf.push_back(static_cast<char>(s.size()));
        for (std::size_t e : s) {
            if (e > 0xFFFFFFFFull) throw FormatError("checkpoint: extent too large");
            detail::put_u32(buf, static_cast<std::uint32_t>(e));
        }
        buf.push_back(0);  // dtype: binary32
        for (double v : t.values()) detail::put_f32(buf, static_cast<float>(v));
    }
    detail::put_u32(buf, detail::crc32(buf));
    return buf;
}

inline NamedTensors decode_checkpoint(const std::string& buf) {
    if (buf.size() < 14) throw FormatError("checkpoint: shorter than the fixed header");
    std::string body = buf.substr(0, buf.size() - 4);
    detail::Reader tail{buf, buf.size() - 4};
    std::uint32_t stored = tail.u32("checksum");
    if (detail::crc32(body) != stored) throw FormatError("checkpoint: checksum mismatch");

    detail::Reader r{body, 0};
    if (r.bytes(4, "magic") != "MLFS") throw FormatError("checkpoint: bad magic");
    std::uint16_t version = r.u16("version");
    if (version != kCheckpointVersion)
        throw FormatError("checkpoint: unsupported version " + std::to_string(version));
    std::uint32_t count = r.u32("tensor count");
    NamedTensors out;
    std::set<std::string> seen;
    for (std::uint32_t i = 0; i < count; ++i) {
        std::uint16_t name_len = r.u16("name length");
        std::string name = r.bytes(name_len, "name");
        if (!seen.insert(name).second) throw FormatError("checkpoint: duplicate tensor name '" + name + "'");
        std::uint8_t rank = r.u8("rank");
        Shape shape(rank);
        for (std::uint8_t k = 0; k < rank; ++k) shape[k] = r.u32("extent");
        std::uint8_t dtype = r.u8("dtype");
        if (dtype != 0) throw FormatError("checkpoint: unknown dtype tag " + std::to_string(dtype));
        std::size_t n = numel(shape);
        std::vector<double> data(n);
        for (std::size_t k = 0; k < n; ++k) data[k] = static_cast<double>(r.f32("payload"));
        out.emplace_back(std::move(name), Tensor::from_data(std::move(shape), std::move(data)));
    }
    if (r.pos != body.size()) throw FormatError("checkpoint: trailing bytes after the last tensor");
    return out;
}

inline void save_checkpoint(const NamedTensors& tensors, const std::string& path) {
    std::string buf = encode_checkpoint(tensors);
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("checkpoint: cannot open " + path + " for writing");
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!f) throw IoError("checkpoint: short write to " + path);
}

inline NamedTensors load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("checkpoint: cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    if (f.bad()) throw IoError("checkpoint: read failure on " + path);
    return decode_checkpoint(buf);
}

// ---------------------------------------------------------------------------
// model persistence

namespace detail {

inline Tensor meta_tensor(const std::vector<double>& vals) {
    return Tensor::from_data({vals.size()}, vals);
}

inline const Tensor& find_tensor(const NamedTensors& ts, const std::string& name) {
    for (const auto& [n, t] : ts)
        if (n == name) return t;
    throw FormatError("checkpoint: missing tensor '" + name + "'");
}

inline void assign_values(Tensor& dst, const Tensor& src, const std::string& name) {
    if (dst.shape() != src.shape())
        throw FormatError("checkpoint: tensor '" + name + "' has shape " + shape_str(src.shape()) +
                          ", expected " + shape_str(dst.shape()));
    dst.values_mut() = src.values();
}

}  // namespace detail

// frozen backbone only; task-agnostic, shared across adapter packs
inline void save_supernet_base(const Supernet& net, const std::string& path) {
    NamedTensors ts;
    ts.emplace_back("meta.model",
                    detail::meta_tensor({static_cast<double>(net.dims.d), static_cast<double>(net.dims.h),
                                         static_cast<double>(net.dims.f), static_cast<double>(net.dims.L),
                                         static_cast<double>(net.dims.vocab),
                                         static_cast<double>(net.dims.max_seq)}));
    for (const auto& [name, t] : net.base_named()) ts.emplace_back(name, t);
    save_checkpoint(ts, path);
}

// adapter stacks, task head and projection bank: the task-specific pack
inline void save_supernet_adapters(const Supernet& net, const ProjectionBank& bank, const std::string& path) {
    NamedTensors ts;
    ts.emplace_back("meta.task",
                    detail::meta_tensor({static_cast<double>(net.dims.n_out),
                                         net.task == TaskKind::char_lm ? 1.0 : 0.0,
                                         static_cast<double>(net.rank)}));
    std::vector<double> subset;
    for (std::size_t m : bank.subset()) subset.push_back(static_cast<double>(m));
    ts.emplace_back("meta.bank", detail::meta_tensor(subset));
    for (const auto& [name, t] : net.adapter_named()) ts.emplace_back(name, t);
    for (const auto& [name, t] : bank.named()) ts.emplace_back(name, t);
    save_checkpoint(ts, path);
}

struct LoadedSupernet {
    Supernet net;
    ProjectionBank bank;
};

inline LoadedSupernet load_supernet(const std::string& base_path, const std::string& adapters_path) {
    NamedTensors base = load_checkpoint(base_path);
    NamedTensors pack = load_checkpoint(adapters_path);
    const Tensor& mm = detail::find_tensor(base, "meta.model");
    if (mm.size() != 6) throw FormatError("checkpoint: malformed meta.model");
    const Tensor& mt = detail::find_tensor(pack, "meta.task");
    if (mt.size() != 3) throw FormatError("checkpoint: malformed meta.task");

    ModelDims dims;
    dims.d = static_cast<std::size_t>(mm.values()[0]);
    dims.h = static_cast<std::size_t>(mm.values()[1]);
    dims.f = static_cast<std::size_t>(mm.values()[2]);
    dims.L = static_cast<std::size_t>(mm.values()[3]);
    dims.vocab = static_cast<std::size_t>(mm.values()[4]);
    dims.max_seq = static_cast<std::size_t>(mm.values()[5]);
    dims.n_out = static_cast<std::size_t>(mt.values()[0]);
    TaskKind task = mt.values()[1] == 1.0 ? TaskKind::char_lm : TaskKind::classify;
    std::size_t rank = static_cast<std::size_t>(mt.values()[2]);

    LoadedSupernet out{Supernet::create(dims, task, rank, 0), ProjectionBank()};
    for (auto& [name, t] : out.net.base_named()) {
        Tensor dst = t;
        detail::assign_values(dst, detail::find_tensor(base, name), name);
    }
    for (auto& [name, t] : out.net.adapter_named()) {
        Tensor dst = t;
        detail::assign_values(dst, detail::find_tensor(pack, name), name);
    }

    const Tensor& mb = detail::find_tensor(pack, "meta.bank");
    std::vector<std::size_t> subset;
    for (double v : mb.values()) subset.push_back(static_cast<std::size_t>(v));
    const Tensor& u0 = detail::find_tensor(pack, "bank.U" + std::to_string(subset.at(0)));
    if (u0.shape().size() != 2) throw FormatError("checkpoint: malformed projection tensor");
    Rng dummy(0);
    out.bank = ProjectionBank(u0.shape()[0], u0.shape()[1], subset, dummy);
    for (std::size_t i = 0; i < subset.size(); ++i) {
        Tensor dst = out.bank.u(i);
        detail::assign_values(dst, detail::find_tensor(pack, "bank.U" + std::to_string(subset[i])),
                              "bank.U" + std::to_string(subset[i]));
    }
    return out;
}

// standalone sliced model (merged export): self-contained, no adapters
inline void save_weights(const EffectiveWeights& W, const std::string& path) {
    NamedTensors ts;
    ts.emplace_back("meta.weights",
                    detail::meta_tensor({static_cast<double>(W.c.d), static_cast<double>(W.c.h),
                                         static_cast<double>(W.c.f), static_cast<double>(W.c.L),
                                         static_cast<double>(W.vocab), static_cast<double>(W.max_seq),
                                         static_cast<double>(W.n_out),
                                         W.task == TaskKind::char_lm ? 1.0 : 0.0}));
    for (const auto& [name, t] : effective_named(W)) ts.emplace_back(name, t);
    save_checkpoint(ts, path);
}

inline EffectiveWeights load_weights(const std::string& path) {
    NamedTensors ts = load_checkpoint(path);
    const Tensor& mw = detail::find_tensor(ts, "meta.weights");
    if (mw.size() != 8) throw FormatError("checkpoint: malformed meta.weights");
    EffectiveWeights W;
    W.c.d = static_cast<std::size_t>(mw.values()[0]);
    W.c.h = static_cast<std::size_t>(mw.values()[1]);
    W.c.f = static_cast<std::size_t>(mw.values()[2]);
    W.c.L = static_cast<std::size_t>(mw.values()[3]);
    W.vocab = static_cast<std::size_t>(mw.values()[4]);
    W.max_seq = static_cast<std::size_t>(mw.values()[5]);
    W.n_out = static_cast<std::size_t>(mw.values()[6]);
    W.task = mw.values()[7] == 1.0 ? TaskKind::char_lm : TaskKind::classify;

    auto take = [&](const std::string& name) { return detail::find_tensor(ts, name).detach(); };
    W.tok_emb = take("tok_emb");
    W.pos_emb = take("pos_emb");
    for (std::size_t l = 0; l < W.c.L; ++l) {
        std::string p = "L" + std::to_string(l) + ".";
        LayerWeights w;
        w.ln1_g = take(p + "ln1.g");
        w.ln1_b = take(p + "ln1.b");
        w.wq = take(p + "wq");
        w.bq = take(p + "bq");
        w.wk = take(p + "wk");
        w.bk = take(p + "bk");
        w.wv = take(p + "wv");
        w.bv = take(p + "bv");
        w.wo = take(p + "wo");
        w.bo = take(p + "bo");
        w.ln2_g = take(p + "ln2.g");
        w.ln2_b = take(p + "ln2.b");
        w.w1 = take(p + "w1");
        w.b1 = take(p + "b1");
        w.w2 = take(p + "w2");
        w.b2 = take(p + "b2");
        W.layers.push_back(std::move(w));
    }
    W.lnf_g = take("lnf.g");
    W.lnf_b = take("lnf.b");
    W.head_w = take("head.w");
    W.head_b = take("head.b");
    return W;
}

}  // namespace mlfs
