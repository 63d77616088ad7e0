// Operator CLI: corpus generation, training, sampling, prompt/scaffold
// tasks, and evaluation. One binary, subcommand style; a config file
// (INI, CLI11 format) can preload any flag and explicit flags win.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <omp.h>

#include <CLI11.hpp>
#include <json.hpp>

#include "par/data_io.hpp"
#include "par/eval.hpp"
#include "par/model.hpp"
#include "par/nn/checkpoint.hpp"
#include "par/sampling.hpp"
#include "par/tasks.hpp"
#include "par/training.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using Model = par::ParModel<float>;

namespace {

std::string default_out(const std::string& cmd) {
    const char* root = std::getenv("PAR_OUT_ROOT");
    return (root ? std::string(root) : std::string(".")) + "/out-" + cmd;
}

par::ScaleConfig parse_scales(const std::string& text) {
    par::ScaleConfig cfg;
    std::string body = text;
    if (text.rfind("ratio:", 0) == 0) {
        cfg.mode = par::ScaleMode::ByRatio;
        body = text.substr(6);
    } else {
        cfg.mode = par::ScaleMode::ByLength;
    }
    std::istringstream is(body);
    std::string tok;
    while (std::getline(is, tok, ',')) cfg.sizes.push_back(std::stoi(tok));
    if (cfg.sizes.empty()) throw CLI::ValidationError("--scales", "empty scale list");
    return cfg;
}

std::vector<int> parse_indices(const std::string& text) {
    std::vector<int> out;
    std::istringstream is(text);
    std::string tok;
    while (std::getline(is, tok, ',')) {
        auto dash = tok.find('-');
        if (dash == std::string::npos) {
            out.push_back(std::stoi(tok));
        } else {
            int lo = std::stoi(tok.substr(0, dash)), hi = std::stoi(tok.substr(dash + 1));
            for (int i = lo; i <= hi; ++i) out.push_back(i);
        }
    }
    return out;
}

void write_text(const std::string& path, const std::string& content) {
    const std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary);
        os << content;
    }
    fs::rename(tmp, path);
}

Model load_model(const std::string& checkpoint) {
    auto echo = par::nn::peek_checkpoint_config(checkpoint);
    Model model;
    par::Rng init_rng(0);
    model.build(par::ModelConfig::from_echo(echo), init_rng);
    par::nn::load_checkpoint<float>(checkpoint, model.store);
    return model;
}

// One manifest line per generated structure: id, length, seed, schedule,
// and a hash of the model parameters.
void append_manifest_line(std::ostringstream& manifest, const std::string& id, int length,
                          uint64_t seed, const std::string& schedule, uint64_t model_hash,
                          const std::string& path) {
    json j{{"id", id},         {"length", length},       {"seed", seed},
           {"schedule", schedule}, {"model_hash", model_hash}, {"path", path}};
    manifest << j.dump() << "\n";
}

struct CommonGen {
    std::string checkpoint;
    std::string out;
    std::string schedule_text = "S:100:g0.3,O:8,O:8";
    double gamma = -1.0;  // override gamma on SDE entries when >= 0
    int length = 128;
    int num = 1;
    uint64_t seed = 0;
    bool self_cond = true;
    bool emit_scales = false;
    int workers = 0;
    std::string timing_csv;
};

void add_common_gen(CLI::App* cmd, CommonGen& g, const std::string& name) {
    cmd->add_option("--checkpoint", g.checkpoint, "model checkpoint")->required();
    cmd->add_option("--out", g.out, "output directory")->default_val(default_out(name));
    cmd->add_option("--schedule", g.schedule_text, "per-scale plan, e.g. S:400:g0.3,O:2,O:2");
    cmd->add_option("--gamma", g.gamma, "override gamma on all SDE entries");
    cmd->add_option("--length", g.length, "target chain length");
    cmd->add_option("--num", g.num, "number of structures");
    cmd->add_option("--seed", g.seed, "base seed");
    cmd->add_option("--self-cond", g.self_cond, "feed predictions back during integration");
    cmd->add_flag("--emit-scales", g.emit_scales, "write intermediate scales");
    cmd->add_option("--workers", g.workers, "parallel jobs (0 = logical cores)");
    cmd->add_option("--timing-csv", g.timing_csv, "write per-sample wall times (opt-in)");
}

par::SamplerSchedule resolve_schedule(const CommonGen& g) {
    auto sched = par::SamplerSchedule::parse(g.schedule_text);
    if (g.gamma >= 0.0)
        for (auto& e : sched.entries)
            if (e.sde) e.gamma = g.gamma;
    sched.self_conditioning = g.self_cond;
    return sched;
}

// Shared driver for sample/prompt/scaffold: runs `make` for each index in a
// deterministic per-sample RNG stream and writes files + manifest.
template <typename MakeFn>
void run_generation(const CommonGen& g, const Model& model, const par::SamplerSchedule& sched,
                    const std::string& prefix, MakeFn make) {
    fs::create_directories(g.out);
    const uint64_t model_hash = par::nn::param_hash(model.store);
    std::vector<par::GenerationResult<float>> results(g.num);
    std::vector<double> millis(g.num, 0.0);

    const int workers = g.workers > 0 ? g.workers : omp_get_max_threads();
#pragma omp parallel for num_threads(workers) schedule(dynamic)
    for (int j = 0; j < g.num; ++j) {
        auto t0 = std::chrono::steady_clock::now();
        results[j] = make(par::Rng::derive_seed(g.seed, 4, static_cast<uint64_t>(j)), j);
        auto t1 = std::chrono::steady_clock::now();
        millis[j] = std::chrono::duration<double, std::milli>(t1 - t0).count();
    }

    std::ostringstream manifest;
    char name[64];
    for (int j = 0; j < g.num; ++j) {
        std::snprintf(name, sizeof(name), "%s_%03d.pdb", prefix.c_str(), j);
        par::write_structure(results[j].structure, g.out + "/" + name, par::FileFormat::PDB);
        append_manifest_line(manifest, prefix + "_" + std::to_string(j),
                             results[j].structure.length(),
                             par::Rng::derive_seed(g.seed, 4, static_cast<uint64_t>(j)),
                             sched.to_string(), model_hash, name);
        if (g.emit_scales)
            for (size_t s = 0; s < results[j].scales.size(); ++s) {
                std::snprintf(name, sizeof(name), "%s_%03d_scale%zu.pdb", prefix.c_str(), j,
                              s + 1);
                par::write_structure(results[j].scales[s], g.out + "/" + name,
                                     par::FileFormat::PDB);
            }
    }
    write_text(g.out + "/manifest.jsonl", manifest.str());

    if (!g.timing_csv.empty()) {
        std::ostringstream t;
        t << "index,length,millis\n";
        for (int j = 0; j < g.num; ++j)
            t << j << "," << results[j].structure.length() << "," << millis[j] << "\n";
        write_text(g.timing_csv, t.str());
    }
}

void write_resolved_config(const CLI::App& app, const std::string& out_dir) {
    fs::create_directories(out_dir);
    write_text(out_dir + "/resolved_config.ini", app.config_to_str(true, true));
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"par: multi-scale autoregressive flow matching for 3D chains"};
    app.set_config("--config", "", "load options from an INI config file");
    app.require_subcommand(1);

    // ---- gen-corpus ----
    auto* c_corpus = app.add_subcommand("gen-corpus", "generate a synthetic chain corpus");
    par::CorpusConfig cc;
    std::string corpus_out = default_out("corpus");
    std::string corpus_format = "pdb";
    c_corpus->add_option("--out", corpus_out, "output directory");
    c_corpus->add_option("--count", cc.count, "number of structures");
    c_corpus->add_option("--lmin", cc.length_min, "min length");
    c_corpus->add_option("--lmax", cc.length_max, "max length");
    c_corpus->add_option("--helix-frac", cc.helix_fraction, "helix fraction");
    c_corpus->add_option("--jitter", cc.jitter, "helix jitter sigma (Angstrom)");
    c_corpus->add_option("--seed", cc.seed, "corpus seed");
    c_corpus->add_option("--format", corpus_format, "pdb | xyz");

    // ---- train ----
    auto* c_train = app.add_subcommand("train", "train a model on a corpus");
    std::string train_corpus, train_out = default_out("train"), train_resume;
    std::string train_scales = "64,128,256";
    int divisor = 4;
    par::TrainConfig tc;
    bool ncl = true;
    c_train->add_option("--corpus", train_corpus, "corpus manifest.jsonl")->required();
    c_train->add_option("--out", train_out, "output directory");
    c_train->add_option("--steps", tc.total_steps, "training steps");
    c_train->add_option("--batch", tc.batch_size, "batch size");
    c_train->add_option("--lr", tc.learning_rate, "learning rate");
    c_train->add_option("--seed", tc.seed, "seed");
    c_train->add_option("--scales", train_scales, "64,128,256 | ratio:4,2,1");
    c_train->add_option("--divisor", divisor, "shrink paper dims by this factor");
    c_train->add_option("--ncl", ncl, "noisy context learning on AR inputs");
    c_train->add_option("--ss-prob", tc.ss_probability, "scheduled sampling probability");
    c_train->add_option("--self-cond", tc.self_cond_probability, "self-conditioning probability");
    c_train->add_option("--val-every", tc.val_every, "validation cadence (steps)");
    c_train->add_option("--checkpoint-every", tc.checkpoint_every, "checkpoint cadence");
    c_train->add_option("--resume", train_resume, "checkpoint to resume from");

    // ---- sample / prompt / scaffold ----
    auto* c_sample = app.add_subcommand("sample", "unconditional generation");
    CommonGen gs;
    add_common_gen(c_sample, gs, "sample");

    auto* c_prompt = app.add_subcommand("prompt", "prompt-conditioned generation");
    CommonGen gp;
    std::string prompt_file;
    add_common_gen(c_prompt, gp, "prompt");
    c_prompt->add_option("--prompt", prompt_file, "structure file for the first scale")
        ->required();

    auto* c_scaffold = app.add_subcommand("scaffold", "motif scaffolding");
    CommonGen gm;
    std::string motif_file, motif_indices;
    add_common_gen(c_scaffold, gm, "scaffold");
    c_scaffold->add_option("--motif", motif_file, "motif structure file")->required();
    c_scaffold->add_option("--indices", motif_indices, "residue indices, e.g. 10-25 or 3,7,9")
        ->required();

    // ---- eval ----
    auto* c_eval = app.add_subcommand("eval", "distribution metrics between two sets");
    std::string eval_generated, eval_reference, eval_out = default_out("eval");
    int eval_diversity_cap = 32;
    c_eval->add_option("--generated", eval_generated, "manifest.jsonl of generated set")
        ->required();
    c_eval->add_option("--reference", eval_reference, "manifest.jsonl of reference set")
        ->required();
    c_eval->add_option("--out", eval_out, "output directory");
    c_eval->add_option("--diversity-cap", eval_diversity_cap, "max samples for pairwise TM");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*c_corpus) {
            auto corpus = par::gen_corpus(cc);
            par::save_corpus(corpus, corpus_out,
                             corpus_format == "xyz" ? par::FileFormat::XYZ
                                                    : par::FileFormat::PDB);
            write_resolved_config(app, corpus_out);
            std::cout << "wrote " << corpus.structures.size() << " structures to " << corpus_out
                      << "\n";
        } else if (*c_train) {
            tc.ncl_enabled = ncl;
            auto corpus = par::load_corpus(train_corpus);
            auto train_set = par::corpus_split(corpus, "train");
            auto val_set = par::corpus_split(corpus, "val");

            auto mc = par::ModelConfig::from_divisor(divisor);
            mc.scales = parse_scales(train_scales);
            Model model;
            par::Rng init_rng(par::Rng::derive_seed(tc.seed, 0));
            model.build(mc, init_rng);

            par::Trainer<float> trainer(model, tc);
            if (!train_resume.empty()) trainer.resume_from(train_resume);
            write_resolved_config(app, train_out);
            trainer.run(train_set, val_set, train_out);
            std::cout << "trained " << tc.total_steps << " steps; artifacts in " << train_out
                      << "\n";
        } else if (*c_sample) {
            auto model = load_model(gs.checkpoint);
            auto sched = resolve_schedule(gs);
            par::GenerateOptions opts;
            opts.emit_scales = gs.emit_scales;
            run_generation(gs, model, sched, "sample", [&](uint64_t seed, int) {
                return par::generate(model, gs.length, sched, seed, opts);
            });
            write_resolved_config(app, gs.out);
        } else if (*c_prompt) {
            auto model = load_model(gp.checkpoint);
            auto sched = resolve_schedule(gp);
            auto ladder = model.cfg.scales.resolve(gp.length);
            auto raw = par::read_structure(prompt_file);
            if (raw.length() < ladder[0])
                throw std::runtime_error("prompt has fewer points than the first scale");
            par::PointPrompt prompt{raw.length() == ladder[0] ? raw
                                                              : par::down_sample(raw, ladder[0])};
            par::GenerateOptions opts;
            opts.emit_scales = gp.emit_scales;
            run_generation(gp, model, sched, "prompt", [&](uint64_t seed, int) {
                return par::prompt_generate(model, prompt, gp.length, sched, seed, opts);
            });
            write_resolved_config(app, gp.out);
        } else if (*c_scaffold) {
            auto model = load_model(gm.checkpoint);
            auto sched = resolve_schedule(gm);
            par::MotifSpec spec;
            spec.motif = par::read_structure(motif_file);
            spec.indices = parse_indices(motif_indices);
            par::GenerateOptions opts;
            opts.emit_scales = gm.emit_scales;
            run_generation(gm, model, sched, "scaffold", [&](uint64_t seed, int) {
                return par::motif_scaffold(model, spec, gm.length, sched, seed, opts);
            });
            write_resolved_config(app, gm.out);
        } else if (*c_eval) {
            auto gen = par::load_corpus(eval_generated);
            auto ref = par::load_corpus(eval_reference);
            const double ffd = par::frechet_feature_distance(gen.structures, ref.structures);

            std::vector<par::ChainStructure> div_set(
                gen.structures.begin(),
                gen.structures.begin() +
                    std::min<size_t>(gen.structures.size(), eval_diversity_cap));
            const double div = div_set.size() >= 2 ? par::diversity(div_set) : 0.0;
            const double ent = par::cluster_entropy(gen.structures);
            const double consec = par::mean_consecutive_distance(gen.structures);

            fs::create_directories(eval_out);
            std::ostringstream csv;
            csv << "metric,value\n"
                << "frechet_feature_distance," << ffd << "\n"
                << "diversity_tm," << div << "\n"
                << "cluster_entropy," << ent << "\n"
                << "mean_consecutive_distance," << consec << "\n";
            write_text(eval_out + "/metrics.csv", csv.str());
            write_resolved_config(app, eval_out);
            std::cout << csv.str();
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
