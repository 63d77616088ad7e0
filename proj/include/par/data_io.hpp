#pragma once

// Synthetic chain corpus generation, structure file I/O (XYZ and Ca-only
// PDB), and JSON-lines corpus manifests.

#include <cstdint>
#include <string>
#include <vector>

#include "par/geometry.hpp"
#include "par/rng.hpp"

namespace par {

enum class FileFormat { XYZ, PDB };

/// Ideal alpha-helical Ca trace: rise 1.5 A/residue, radius 2.3 A,
/// 100 deg/residue, built from 1-4 randomly oriented segments sharing their
/// boundary residue, then jittered with the given sigma.
ChainStructure gen_helix_chain(int L, Rng& rng, double jitter = 0.1);

/// Self-avoiding random walk with 3.8 A consecutive spacing and >= 4 A
/// minimum non-adjacent separation; restarts internally on dead ends.
ChainStructure gen_coil_chain(int L, Rng& rng);

/// Ideal consecutive Ca-Ca distance of the parametric helix above.
double helix_ideal_step();

struct CorpusEntry {
    std::string id;
    int length = 0;
    std::string split;       // train | val | test
    std::string provenance;  // synthetic-helix | synthetic-coil | external-file
    std::string path;        // structure file, relative to the manifest
};

struct Corpus {
    std::vector<ChainStructure> structures;
    std::vector<CorpusEntry> entries;
};

struct CorpusConfig {
    int count = 5000;
    int length_min = 32;
    int length_max = 256;
    double helix_fraction = 0.5;
    double jitter = 0.1;
    uint64_t seed = 0;
};

/// Reproducible corpus: per-structure RNG streams derived from (seed, id),
/// generation parallel over structures, splits 98:1:1 by id modulo 100.
Corpus gen_corpus(const CorpusConfig& cfg);

/// Write/read a single structure. PDB uses one ATOM record per residue
/// (CA / GLY / chain A, %8.3f coordinates); XYZ is a count header followed
/// by "CA x y z" lines. Writes are atomic (temp + rename).
void write_structure(const ChainStructure& x, const std::string& path, FileFormat format);
ChainStructure read_structure(const std::string& path);  // format from extension

/// Corpus on disk: one structure file per entry plus manifest.jsonl in dir.
void save_corpus(const Corpus& corpus, const std::string& dir, FileFormat format = FileFormat::PDB);
Corpus load_corpus(const std::string& manifest_path);

/// Manifest only (JSON-lines: id, length, split, provenance, path).
void write_manifest(const std::vector<CorpusEntry>& entries, const std::string& path);
std::vector<CorpusEntry> read_manifest(const std::string& path);

/// Structures in the corpus belonging to a split, in manifest order.
std::vector<ChainStructure> corpus_split(const Corpus& corpus, const std::string& split);

}  // namespace par
