#pragma once

// Checkpoint container: a versioned header, a key=value manifest, and named
// arrays stored as 32-bit little-endian floats. The container is generic;
// training composes model parameters, optimizer state, and progress into it.

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "sllab/errors.hpp"
#include "sllab/model.hpp"
#include "sllab/tensor.hpp"

namespace sllab {

inline constexpr const char* kCheckpointMagic = "SLLAB-CKPT-1";

struct CheckpointData {
    std::vector<std::pair<std::string, std::string>> manifest;  // ordered key=value
    std::vector<std::pair<std::string, TensorData<double>>> arrays;

    const std::string* find(const std::string& key) const {
        for (const auto& [k, v] : manifest) {
            if (k == key) return &v;
        }
        return nullptr;
    }
    const std::string& need(const std::string& key) const {
        const std::string* v = find(key);
        require(v != nullptr, "checkpoint manifest: missing key '" + key + "'");
        return *v;
    }
    const TensorData<double>* find_array(const std::string& name) const {
        for (const auto& [n, t] : arrays) {
            if (n == name) return &t;
        }
        return nullptr;
    }
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    out.push_back(char(v & 0xff));
    out.push_back(char((v >> 8) & 0xff));
    out.push_back(char((v >> 16) & 0xff));
    out.push_back(char((v >> 24) & 0xff));
}

inline void put_f32(std::string& out, float f) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put_u32(out, bits);
}

struct ByteCursor {
    const std::string& buf;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        require(pos + n <= buf.size(), "checkpoint: truncated file");
    }
    std::uint32_t u32() {
        need(4);
        const auto* p = reinterpret_cast<const unsigned char*>(buf.data() + pos);
        pos += 4;
        return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) |
               (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
    }
    float f32() {
        const std::uint32_t bits = u32();
        float f;
        std::memcpy(&f, &bits, 4);
        return f;
    }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace detail

inline void save_checkpoint_file(const std::string& path, const CheckpointData& ck) {
    std::string out = kCheckpointMagic;
    out.push_back('\n');
    std::string manifest;
    for (const auto& [k, v] : ck.manifest) {
        manifest += k;
        manifest += '=';
        manifest += v;
        manifest += '\n';
    }
    detail::put_u32(out, std::uint32_t(manifest.size()));
    out += manifest;
    detail::put_u32(out, std::uint32_t(ck.arrays.size()));
    for (const auto& [name, t] : ck.arrays) {
        detail::put_u32(out, std::uint32_t(name.size()));
        out += name;
        detail::put_u32(out, std::uint32_t(t.rows));
        detail::put_u32(out, std::uint32_t(t.cols));
        for (double v : t.v) detail::put_f32(out, float(v));
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    require(f.good(), "checkpoint: cannot open '" + path + "' for writing");
    f.write(out.data(), std::streamsize(out.size()));
    f.flush();
    require(f.good(), "checkpoint: write to '" + path + "' failed");
}

inline CheckpointData load_checkpoint_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    require(f.good(), "checkpoint: cannot open '" + path + "'");
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    const std::string magic = std::string(kCheckpointMagic) + "\n";
    require(buf.size() >= magic.size() && buf.compare(0, magic.size(), magic) == 0,
            "checkpoint: '" + path + "' does not start with the " +
                std::string(kCheckpointMagic) + " header");
    detail::ByteCursor cur{buf, magic.size()};

    CheckpointData ck;
    const std::uint32_t manifest_len = cur.u32();
    const std::string manifest = cur.bytes(manifest_len);
    std::size_t start = 0;
    while (start < manifest.size()) {
        std::size_t end = manifest.find('\n', start);
        if (end == std::string::npos) end = manifest.size();
        const std::string line = manifest.substr(start, end - start);
        start = end + 1;
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        require(eq != std::string::npos, "checkpoint manifest: malformed line '" + line + "'");
        ck.manifest.emplace_back(line.substr(0, eq), line.substr(eq + 1));
    }

    const std::uint32_t count = cur.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint32_t name_len = cur.u32();
        std::string name = cur.bytes(name_len);
        const std::uint32_t rows = cur.u32();
        const std::uint32_t cols = cur.u32();
        TensorData<double> t(rows, cols);
        for (auto& v : t.v) v = double(cur.f32());
        ck.arrays.emplace_back(std::move(name), std::move(t));
    }
    require(cur.pos == buf.size(), "checkpoint: trailing bytes after the last array");
    return ck;
}

// ---------------------------------------------------------------------------
// Model config <-> manifest

inline void append_model_config(CheckpointData& ck, const ModelConfig& cfg) {
    auto put = [&ck](const std::string& k, const std::string& v) {
        ck.manifest.emplace_back(k, v);
    };
    put("variant", variant_name(cfg.variant));
    put("vocab_size", std::to_string(cfg.vocab_size));
    put("latent_dim", std::to_string(cfg.latent_dim));
    put("hidden_dim", std::to_string(cfg.hidden_dim));
    put("embed_dim", std::to_string(cfg.embed_dim));
    put("psi", detail::format_double(cfg.psi));
    put("lambda", detail::format_double(cfg.lambda));
    put("mc_gamma", std::to_string(cfg.mc_gamma));
    put("mc_z", std::to_string(cfg.mc_z));
    put("prior_alpha", detail::format_double(cfg.prior_alpha));
    put("prior_beta", detail::format_double(cfg.prior_beta));
    put("sigma_spike", detail::format_double(cfg.sigma_spike));
    put("tau", detail::format_double(cfg.tau));
    put("penalty_weight", detail::format_double(cfg.penalty_weight));
    put("matvae_prior_weight", detail::format_double(cfg.matvae_prior_weight));
    put("matvae_kl", cfg.matvae_kl == MatKlSurrogate::mc ? "mc" : "gaussian");
    put("hsvae_kl_mc", cfg.hsvae_kl_mc ? "1" : "0");
}

inline ModelConfig model_config_from_manifest(const CheckpointData& ck) {
    ModelConfig cfg;
    auto num = [&ck](const std::string& k) { return std::stod(ck.need(k)); };
    auto idx = [&ck](const std::string& k) {
        return std::size_t(std::stoull(ck.need(k)));
    };
    cfg.variant = variant_from_name(ck.need("variant"));
    cfg.vocab_size = idx("vocab_size");
    cfg.latent_dim = idx("latent_dim");
    cfg.hidden_dim = idx("hidden_dim");
    cfg.embed_dim = idx("embed_dim");
    cfg.psi = num("psi");
    cfg.lambda = num("lambda");
    cfg.mc_gamma = idx("mc_gamma");
    cfg.mc_z = idx("mc_z");
    cfg.prior_alpha = num("prior_alpha");
    cfg.prior_beta = num("prior_beta");
    cfg.sigma_spike = num("sigma_spike");
    cfg.tau = num("tau");
    cfg.penalty_weight = num("penalty_weight");
    const std::string& mk = ck.need("matvae_kl");
    require(mk == "mc" || mk == "gaussian", "checkpoint: bad matvae_kl '" + mk + "'");
    cfg.matvae_kl = mk == "mc" ? MatKlSurrogate::mc : MatKlSurrogate::gaussian;
    cfg.matvae_prior_weight = num("matvae_prior_weight");
    cfg.hsvae_kl_mc = ck.need("hsvae_kl_mc") == "1";
    cfg.validate();
    return cfg;
}

/// Parameters from checkpoint arrays; names without a reserved prefix are
/// model parameters (optimizer state lives under "adam.").
inline ParameterStore params_from_checkpoint(const CheckpointData& ck) {
    ParameterStore store;
    for (const auto& [name, t] : ck.arrays) {
        if (name.rfind("adam.", 0) == 0) continue;
        store.add(name, t);
    }
    require(!store.params.empty(), "checkpoint: no parameter arrays");
    return store;
}

}  // namespace sllab
