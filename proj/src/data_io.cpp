#include "par/data_io.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace par {

namespace {

constexpr double kHelixRise = 1.5;
constexpr double kHelixRadius = 2.3;
constexpr double kHelixTurnDeg = 100.0;
constexpr double kCoilStep = 3.8;
constexpr double kCoilMinSep = 4.0;

using Mat3 = std::array<std::array<double, 3>, 3>;

Vec3 mat_apply(const Mat3& m, const Vec3& v) {
    Vec3 out{};
    for (int i = 0; i < 3; ++i)
        out[i] = m[i][0] * v[0] + m[i][1] * v[1] + m[i][2] * v[2];
    return out;
}

// Uniform random rotation from a normalized quaternion of four normals.
Mat3 random_rotation(Rng& rng) {
    double q[4];
    double n2 = 0.0;
    for (double& qi : q) {
        qi = rng.normal();
        n2 += qi * qi;
    }
    const double inv = 1.0 / std::sqrt(n2);
    const double w = q[0] * inv, x = q[1] * inv, y = q[2] * inv, z = q[3] * inv;
    return Mat3{{{1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)},
                 {2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)},
                 {2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)}}};
}

Vec3 random_unit(Rng& rng) {
    Vec3 v{rng.normal(), rng.normal(), rng.normal()};
    double n = std::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
    if (n < 1e-12) return {1.0, 0.0, 0.0};
    return {v[0] / n, v[1] / n, v[2] / n};
}

double dist(const Vec3& a, const Vec3& b) {
    const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
    return std::sqrt(dx * dx + dy * dy + dz * dz);
}

}  // namespace

double helix_ideal_step() {
    const double delta = kHelixTurnDeg * M_PI / 180.0;
    const double chord = 2.0 * kHelixRadius * std::sin(delta / 2.0);
    return std::sqrt(chord * chord + kHelixRise * kHelixRise);
}

ChainStructure gen_helix_chain(int L, Rng& rng, double jitter) {
    if (L < 2) throw std::invalid_argument("gen_helix_chain: L must be >= 2");
    const double delta = kHelixTurnDeg * M_PI / 180.0;

    const int max_segs = std::max(1, std::min(4, L / 8));
    const int nseg = rng.uniform_int(1, max_segs);

    // Residue counts per segment; consecutive segments share the boundary
    // residue, so counts sum to L + (nseg - 1).
    std::vector<int> seg_len(nseg, 0);
    int total = L + nseg - 1;
    int base = total / nseg;
    for (int s = 0; s < nseg; ++s) seg_len[s] = base + (s < total % nseg ? 1 : 0);

    ChainStructure out;
    out.coords.reserve(L);
    Vec3 anchor{0.0, 0.0, 0.0};
    for (int s = 0; s < nseg; ++s) {
        Mat3 rot = random_rotation(rng);
        // Local helix points relative to the segment's own first residue.
        for (int k = 0; k < seg_len[s]; ++k) {
            if (s > 0 && k == 0) continue;  // boundary residue already placed
            const double th = k * delta;
            Vec3 local{kHelixRadius * (std::cos(th) - 1.0), kHelixRadius * std::sin(th),
                       kHelixRise * k};
            Vec3 p = mat_apply(rot, local);
            out.coords.push_back({anchor[0] + p[0], anchor[1] + p[1], anchor[2] + p[2]});
        }
        anchor = out.coords.back();
    }
    if (static_cast<int>(out.coords.size()) != L)
        throw std::logic_error("gen_helix_chain: segment bookkeeping error");
    if (jitter > 0.0)
        for (auto& p : out.coords)
            for (int d = 0; d < 3; ++d) p[d] += jitter * rng.normal();
    return out;
}

ChainStructure gen_coil_chain(int L, Rng& rng) {
    if (L < 2) throw std::invalid_argument("gen_coil_chain: L must be >= 2");
    const int step_retries = 100;
    const int chain_restarts = 200;
    for (int attempt = 0; attempt < chain_restarts; ++attempt) {
        ChainStructure out;
        out.coords.push_back({0.0, 0.0, 0.0});
        bool dead = false;
        while (static_cast<int>(out.coords.size()) < L && !dead) {
            const Vec3& last = out.coords.back();
            bool placed = false;
            for (int r = 0; r < step_retries && !placed; ++r) {
                Vec3 dir = random_unit(rng);
                Vec3 cand{last[0] + kCoilStep * dir[0], last[1] + kCoilStep * dir[1],
                          last[2] + kCoilStep * dir[2]};
                bool ok = true;
                for (size_t j = 0; j + 1 < out.coords.size() && ok; ++j)
                    if (dist(cand, out.coords[j]) < kCoilMinSep) ok = false;
                if (ok) {
                    out.coords.push_back(cand);
                    placed = true;
                }
            }
            dead = !placed;
        }
        if (!dead) return out;
    }
    throw std::runtime_error("gen_coil_chain: restart budget exhausted");
}

Corpus gen_corpus(const CorpusConfig& cfg) {
    if (cfg.count <= 0 || cfg.length_min < 2 || cfg.length_max < cfg.length_min)
        throw std::invalid_argument("gen_corpus: invalid config");
    Corpus corpus;
    corpus.structures.resize(cfg.count);
    corpus.entries.resize(cfg.count);

#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < cfg.count; ++i) {
        Rng rng(Rng::derive_seed(cfg.seed, 10, static_cast<uint64_t>(i)));
        const int L = rng.uniform_int(cfg.length_min, cfg.length_max);
        const bool helix = rng.bernoulli(cfg.helix_fraction);
        corpus.structures[i] =
            helix ? gen_helix_chain(L, rng, cfg.jitter) : gen_coil_chain(L, rng);

        CorpusEntry e;
        char id[32];
        std::snprintf(id, sizeof(id), "synth-%06d", i);
        e.id = id;
        e.length = L;
        const int slot = i % 100;
        e.split = slot == 0 ? "val" : slot == 1 ? "test" : "train";
        e.provenance = helix ? "synthetic-helix" : "synthetic-coil";
        corpus.entries[i] = e;
    }
    return corpus;
}

namespace {

void atomic_write(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary);
        if (!os) throw std::runtime_error("cannot open for writing: " + tmp);
        os << content;
    }
    std::filesystem::rename(tmp, path);
}

std::string format_xyz(const ChainStructure& x) {
    std::ostringstream os;
    os << x.length() << "\n";
    char line[96];
    for (const auto& p : x.coords) {
        std::snprintf(line, sizeof(line), "CA %.6f %.6f %.6f\n", p[0], p[1], p[2]);
        os << line;
    }
    return os.str();
}

std::string format_pdb(const ChainStructure& x) {
    std::ostringstream os;
    char line[96];
    for (int i = 0; i < x.length(); ++i) {
        const auto& p = x.coords[i];
        std::snprintf(line, sizeof(line),
                      "ATOM  %5d  CA  GLY A%4d    %8.3f%8.3f%8.3f  1.00  0.00           C\n",
                      i + 1, i + 1, p[0], p[1], p[2]);
        os << line;
    }
    os << "TER\nEND\n";
    return os.str();
}

[[noreturn]] void parse_fail(const std::string& path, int line, const std::string& why) {
    throw std::runtime_error(path + ":" + std::to_string(line) + ": " + why);
}

ChainStructure read_xyz(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open: " + path);
    std::string line;
    if (!std::getline(is, line)) parse_fail(path, 1, "empty file");
    int count = 0;
    try {
        count = std::stoi(line);
    } catch (...) {
        parse_fail(path, 1, "expected point count");
    }
    ChainStructure out;
    for (int i = 0; i < count; ++i) {
        if (!std::getline(is, line)) parse_fail(path, i + 2, "unexpected end of file");
        std::istringstream ls(line);
        std::string name;
        Vec3 p{};
        if (!(ls >> name >> p[0] >> p[1] >> p[2]))
            parse_fail(path, i + 2, "expected 'CA x y z'");
        out.coords.push_back(p);
    }
    return out;
}

ChainStructure read_pdb(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open: " + path);
    ChainStructure out;
    std::string line;
    int lineno = 0;
    char chain = 0;
    bool warned = false;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.rfind("ATOM", 0) != 0) continue;
        if (line.size() < 54) parse_fail(path, lineno, "ATOM record too short");
        std::string atom = line.substr(12, 4);
        if (atom.find("CA") == std::string::npos) continue;
        char c = line[21];
        if (chain == 0) chain = c;
        if (c != chain) {
            if (!warned) {
                std::cerr << path << ": multiple chains; keeping chain '" << chain << "'\n";
                warned = true;
            }
            continue;
        }
        try {
            Vec3 p{std::stod(line.substr(30, 8)), std::stod(line.substr(38, 8)),
                   std::stod(line.substr(46, 8))};
            out.coords.push_back(p);
        } catch (...) {
            parse_fail(path, lineno, "bad coordinate fields");
        }
    }
    if (out.coords.empty()) parse_fail(path, lineno ? lineno : 1, "no CA atoms found");
    return out;
}

}  // namespace

void write_structure(const ChainStructure& x, const std::string& path, FileFormat format) {
    atomic_write(path, format == FileFormat::XYZ ? format_xyz(x) : format_pdb(x));
}

ChainStructure read_structure(const std::string& path) {
    auto ext = std::filesystem::path(path).extension().string();
    if (ext == ".xyz") return read_xyz(path);
    if (ext == ".pdb") return read_pdb(path);
    throw std::runtime_error("unknown structure format: " + path);
}

void write_manifest(const std::vector<CorpusEntry>& entries, const std::string& path) {
    std::ostringstream os;
    for (const auto& e : entries) {
        nlohmann::json j{{"id", e.id},
                         {"length", e.length},
                         {"split", e.split},
                         {"provenance", e.provenance},
                         {"path", e.path}};
        os << j.dump() << "\n";
    }
    atomic_write(path, os.str());
}

std::vector<CorpusEntry> read_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open: " + path);
    std::vector<CorpusEntry> out;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const std::exception& e) {
            parse_fail(path, lineno, e.what());
        }
        CorpusEntry e;
        e.id = j.at("id").get<std::string>();
        e.length = j.at("length").get<int>();
        e.split = j.value("split", std::string{});
        e.provenance = j.value("provenance", std::string{});
        e.path = j.at("path").get<std::string>();
        out.push_back(e);
    }
    return out;
}

void save_corpus(const Corpus& corpus, const std::string& dir, FileFormat format) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    auto entries = corpus.entries;
    const char* ext = format == FileFormat::XYZ ? ".xyz" : ".pdb";
    for (size_t i = 0; i < corpus.structures.size(); ++i) {
        entries[i].path = entries[i].id + ext;
        write_structure(corpus.structures[i], dir + "/" + entries[i].path, format);
    }
    write_manifest(entries, dir + "/manifest.jsonl");
}

Corpus load_corpus(const std::string& manifest_path) {
    Corpus corpus;
    corpus.entries = read_manifest(manifest_path);
    const auto dir = std::filesystem::path(manifest_path).parent_path();
    for (const auto& e : corpus.entries)
        corpus.structures.push_back(read_structure((dir / e.path).string()));
    return corpus;
}

std::vector<ChainStructure> corpus_split(const Corpus& corpus, const std::string& split) {
    std::vector<ChainStructure> out;
    for (size_t i = 0; i < corpus.entries.size(); ++i)
        if (corpus.entries[i].split == split) out.push_back(corpus.structures[i]);
    return out;
}

}  // namespace par
