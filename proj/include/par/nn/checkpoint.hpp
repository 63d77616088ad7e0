#pragma once

// Self-describing checkpoint container: versioned magic header, precision
// tag, RNG seed, config echo, named parameter tensors, and (optionally)
// optimizer state for bitwise training resume.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "par/nn/layers.hpp"

namespace par::nn {

inline constexpr char kCheckpointMagic[8] = {'P', 'A', 'R', 'C', 'K', 'P', 'T', '1'};

namespace ckpt_detail {

template <typename S>
void write_pod(std::ostream& os, const S& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(S));
}

template <typename S>
S read_pod(std::istream& is) {
    S v{};
    is.read(reinterpret_cast<char*>(&v), sizeof(S));
    if (!is) throw std::runtime_error("checkpoint: truncated file");
    return v;
}

inline void write_string(std::ostream& os, const std::string& s) {
    write_pod<uint32_t>(os, static_cast<uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& is) {
    auto n = read_pod<uint32_t>(is);
    std::string s(n, '\0');
    is.read(s.data(), n);
    if (!is) throw std::runtime_error("checkpoint: truncated string");
    return s;
}

template <typename T>
void write_values(std::ostream& os, const std::vector<T>& v) {
    os.write(reinterpret_cast<const char*>(v.data()),
             static_cast<std::streamsize>(v.size() * sizeof(T)));
}

template <typename T>
void read_values(std::istream& is, std::vector<T>& v) {
    is.read(reinterpret_cast<char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(T)));
    if (!is) throw std::runtime_error("checkpoint: truncated tensor data");
}

}  // namespace ckpt_detail

template <typename T>
struct CheckpointExtras {
    Adam<T>* optimizer = nullptr;
    std::string rng_state;
    long train_step = 0;
};

template <typename T>
void save_checkpoint(const std::string& path, const ParamStore<T>& store,
                     const std::string& config_echo, uint64_t seed,
                     const CheckpointExtras<T>* extras = nullptr) {
    namespace d = ckpt_detail;
    std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw std::runtime_error("checkpoint: cannot open " + tmp);
        os.write(kCheckpointMagic, 8);
        d::write_pod<uint32_t>(os, 1);                            // version
        d::write_pod<uint8_t>(os, static_cast<uint8_t>(sizeof(T)));  // precision tag
        d::write_pod<uint64_t>(os, seed);
        d::write_string(os, config_echo);
        d::write_pod<uint32_t>(os, static_cast<uint32_t>(store.all().size()));
        for (auto& [name, p] : store.all()) {
            d::write_string(os, name);
            d::write_pod<int32_t>(os, p->rows);
            d::write_pod<int32_t>(os, p->cols);
            d::write_values(os, p->v);
        }
        d::write_pod<uint8_t>(os, extras ? 1 : 0);
        if (extras) {
            d::write_pod<int64_t>(os, extras->optimizer->step_count());
            for (auto& m : extras->optimizer->moments1()) d::write_values(os, m);
            for (auto& v : extras->optimizer->moments2()) d::write_values(os, v);
            d::write_string(os, extras->rng_state);
            d::write_pod<int64_t>(os, extras->train_step);
        }
    }
    std::filesystem::rename(tmp, path);
}

template <typename T>
struct LoadedCheckpoint {
    std::string config_echo;
    uint64_t seed = 0;
    bool has_extras = false;
    long optimizer_step = 0;
    std::string rng_state;
    long train_step = 0;
};

/// Reads only header + config echo (to build the model before loading
/// tensors).
inline std::string peek_checkpoint_config(const std::string& path) {
    namespace d = ckpt_detail;
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::string(magic, 8) != std::string(kCheckpointMagic, 8))
        throw std::runtime_error("checkpoint: bad magic in " + path);
    d::read_pod<uint32_t>(is);
    d::read_pod<uint8_t>(is);
    d::read_pod<uint64_t>(is);
    return d::read_string(is);
}

template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::string& path, ParamStore<T>& store,
                                    Adam<T>* optimizer = nullptr) {
    namespace d = ckpt_detail;
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::string(magic, 8) != std::string(kCheckpointMagic, 8))
        throw std::runtime_error("checkpoint: bad magic in " + path);
    auto version = d::read_pod<uint32_t>(is);
    if (version != 1) throw std::runtime_error("checkpoint: unsupported version");
    auto prec = d::read_pod<uint8_t>(is);
    if (prec != sizeof(T))
        throw std::runtime_error("checkpoint: precision tag mismatch");
    LoadedCheckpoint<T> out;
    out.seed = d::read_pod<uint64_t>(is);
    out.config_echo = d::read_string(is);
    auto nparams = d::read_pod<uint32_t>(is);
    if (nparams != store.all().size())
        throw std::runtime_error("checkpoint: parameter count mismatch");
    for (auto& [name, p] : store.all()) {
        auto fname = d::read_string(is);
        if (fname != name) throw std::runtime_error("checkpoint: parameter order mismatch: " + fname);
        auto rows = d::read_pod<int32_t>(is);
        auto cols = d::read_pod<int32_t>(is);
        if (rows != p->rows || cols != p->cols)
            throw std::runtime_error("checkpoint: shape mismatch for " + name);
        d::read_values(is, p->v);
    }
    out.has_extras = d::read_pod<uint8_t>(is) != 0;
    if (out.has_extras) {
        out.optimizer_step = static_cast<long>(d::read_pod<int64_t>(is));
        if (optimizer) {
            optimizer->set_step_count(out.optimizer_step);
            for (auto& m : optimizer->moments1()) d::read_values(is, m);
            for (auto& v : optimizer->moments2()) d::read_values(is, v);
        } else {
            // Skip moment blocks.
            size_t total = 0;
            for (auto& [_, p] : store.all()) total += p->numel();
            is.seekg(static_cast<std::streamoff>(2 * total * sizeof(T)), std::ios::cur);
        }
        out.rng_state = d::read_string(is);
        out.train_step = static_cast<long>(d::read_pod<int64_t>(is));
    }
    return out;
}

/// FNV-1a over parameter bytes; used to stamp manifests.
template <typename T>
uint64_t param_hash(const ParamStore<T>& store) {
    uint64_t h = 1469598103934665603ULL;
    for (auto& [_, p] : store.all()) {
        const auto* bytes = reinterpret_cast<const unsigned char*>(p->v.data());
        for (size_t i = 0; i < p->numel() * sizeof(T); ++i) {
            h ^= bytes[i];
            h *= 1099511628211ULL;
        }
    }
    return h;
}

}  // namespace par::nn
