#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "par/data_io.hpp"
#include "par/training.hpp"

using namespace par;
namespace fs = std::filesystem;

namespace {

ModelConfig tiny_config(std::vector<int> sizes = {6, 12}) {
    ModelConfig c;
    c.ar_dim = 16;
    c.dec_dim = 16;
    c.cond_dim = 8;
    c.t_embed_dim = 8;
    c.pos_embed_dim = 8;
    c.scale_embed_dim = 4;
    c.ar_layers = 1;
    c.dec_layers = 1;
    c.heads = 2;
    c.scales.mode = ScaleMode::ByLength;
    c.scales.sizes = std::move(sizes);
    return c;
}

std::vector<ChainStructure> tiny_corpus(int n, int L, uint64_t seed) {
    Rng rng(seed);
    std::vector<ChainStructure> out;
    for (int i = 0; i < n; ++i) out.push_back(gen_coil_chain(L, rng));
    return out;
}

fs::path temp_dir(const std::string& name) {
    auto p = fs::temp_directory_path() / ("par_train_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST_CASE("interpolate and apply_ncl formulas") {
    std::vector<double> x{2.0, -4.0}, eps{1.0, 1.0};
    auto xt = interpolate(x, 0.25, eps);
    CHECK(xt[0] == doctest::Approx(0.25 * 2.0 + 0.75));
    CHECK(xt[1] == doctest::Approx(0.25 * -4.0 + 0.75));

    auto ncl = apply_ncl(x, 1.0, eps);
    CHECK(ncl[0] == doctest::Approx(2.0));  // w=1 keeps the context clean
    auto all_noise = apply_ncl(x, 0.0, eps);
    CHECK(all_noise[0] == doctest::Approx(1.0));
}

TEST_CASE("sample_t stays inside the guard band") {
    TrainConfig cfg;
    Rng rng(1);
    for (int i = 0; i < 1000; ++i) {
        const double t = sample_t(cfg, rng);
        CHECK(t >= 1e-3);
        CHECK(t <= 1.0 - 1e-3);
    }
}

TEST_CASE("fm_loss is finite and reaches both decoder and AR params after warm-up") {
    ParModel<double> model;
    Rng rng(2);
    model.build(tiny_config(), rng);

    TrainConfig cfg;
    cfg.batch_size = 2;
    cfg.ncl_enabled = true;
    cfg.ss_probability = 0.5;
    cfg.self_cond_probability = 0.5;
    auto batch = tiny_corpus(2, 12, 3);

    nn::Adam<double> adam(nn::Adam<double>::Hyper{1e-3, 0.9, 0.999, 1e-8});
    adam.attach(model.store);

    Rng train_rng(4);
    for (int step = 0; step < 6; ++step) {
        model.store.zero_grads();
        auto loss = fm_loss(model, batch, cfg, train_rng);
        CHECK(std::isfinite(loss->v[0]));
        CHECK(loss->v[0] > 0.0);
        nn::backward(loss);
        adam.step(model.store);
    }

    // After warm-up the zero-initialized modulation has moved, so gradients
    // flow into the AR transformer too.
    model.store.zero_grads();
    auto loss = fm_loss(model, batch, cfg, train_rng);
    nn::backward(loss);
    double ar_grad = 0.0, dec_grad = 0.0;
    for (auto& [name, p] : model.store.all()) {
        double acc = 0.0;
        if (!p->g.empty())
            for (double g : p->g) acc += std::abs(g);
        if (name.rfind("ar.", 0) == 0 || name == "bos") ar_grad += acc;
        if (name.rfind("dec.", 0) == 0) dec_grad += acc;
    }
    CHECK(ar_grad > 0.0);
    CHECK(dec_grad > 0.0);
}

TEST_CASE("per-scale loss terms are reported per ladder scale") {
    ParModel<double> model;
    Rng rng(5);
    model.build(tiny_config(), rng);
    TrainConfig cfg;
    cfg.ss_probability = 0.0;
    Rng train_rng(6);
    std::vector<double> per_scale;
    auto loss = fm_loss(model, tiny_corpus(2, 12, 7), cfg, train_rng, &per_scale);
    REQUIRE(per_scale.size() == 2);
    for (double v : per_scale) CHECK(v > 0.0);
    CHECK(std::isfinite(loss->v[0]));
}

TEST_CASE("single-scale fm_loss is bit-identical to the plain FM trainer") {
    auto run = [&](bool plain) {
        ParModel<double> model;
        Rng init(8);
        model.build(tiny_config({12}), init);
        TrainConfig cfg;
        cfg.batch_size = 2;
        cfg.ncl_enabled = true;  // no contexts at n=1, so draws nothing
        cfg.ss_probability = 0.5;
        cfg.self_cond_probability = 0.5;
        nn::Adam<double> adam{nn::Adam<double>::Hyper{}};
        adam.attach(model.store);
        auto batch = tiny_corpus(2, 12, 9);
        Rng train_rng(10);
        std::vector<double> losses;
        for (int step = 0; step < 10; ++step) {
            model.store.zero_grads();
            auto loss = plain ? plain_fm_loss(model, batch, cfg, train_rng)
                              : fm_loss(model, batch, cfg, train_rng);
            losses.push_back(loss->v[0]);
            nn::backward(loss);
            adam.step(model.store);
        }
        return std::make_pair(losses, nn::param_hash(model.store));
    };
    auto [loss_ms, hash_ms] = run(false);
    auto [loss_plain, hash_plain] = run(true);
    for (int i = 0; i < 10; ++i) CHECK(loss_ms[i] == loss_plain[i]);  // bitwise
    CHECK(hash_ms == hash_plain);
}

TEST_CASE("training is deterministic: same seed, same parameters") {
    auto run = [&] {
        ParModel<float> model;
        Rng init(11);
        model.build(tiny_config(), init);
        TrainConfig cfg;
        cfg.total_steps = 8;
        cfg.batch_size = 2;
        cfg.seed = 12;
        cfg.val_every = 4;
        Trainer<float> trainer(model, cfg);
        auto dir = temp_dir("det_" + std::to_string(init.next_u64() % 1000));
        trainer.run(tiny_corpus(6, 12, 13), tiny_corpus(2, 12, 14), dir.string());
        return nn::param_hash(model.store);
    };
    CHECK(run() == run());
}

TEST_CASE("train_loop: zero steps yields initial checkpoint and bare metrics") {
    ParModel<float> model;
    Rng init(15);
    model.build(tiny_config(), init);
    TrainConfig cfg;
    cfg.total_steps = 0;
    cfg.seed = 16;
    Trainer<float> trainer(model, cfg);
    auto dir = temp_dir("zero");
    trainer.run(tiny_corpus(4, 12, 17), {}, dir.string());

    CHECK(fs::exists(dir / "checkpoint_init.bin"));
    CHECK(fs::exists(dir / "checkpoint_final.bin"));
    std::ifstream metrics(dir / "metrics.csv");
    std::string line;
    int lines = 0;
    while (std::getline(metrics, line)) ++lines;
    CHECK(lines == 1);  // header only
}

TEST_CASE("resume from checkpoint reproduces the uninterrupted run bitwise") {
    auto corpus = tiny_corpus(6, 12, 18);
    TrainConfig cfg;
    cfg.total_steps = 10;
    cfg.batch_size = 2;
    cfg.seed = 19;
    cfg.checkpoint_every = 5;
    cfg.val_every = 0;

    ParModel<float> straight;
    Rng init_a(20);
    straight.build(tiny_config(), init_a);
    Trainer<float> trainer_a(straight, cfg);
    trainer_a.run(corpus, {}, temp_dir("resume_a").string());

    ParModel<float> part;
    Rng init_b(20);
    part.build(tiny_config(), init_b);
    TrainConfig half = cfg;
    half.total_steps = 5;
    auto dir_b = temp_dir("resume_b");
    {
        Trainer<float> trainer_b(part, half);
        trainer_b.run(corpus, {}, dir_b.string());
    }

    ParModel<float> resumed;
    Rng init_c(20);
    resumed.build(tiny_config(), init_c);
    Trainer<float> trainer_c(resumed, cfg);
    trainer_c.resume_from((dir_b / "checkpoint_final.bin").string());
    trainer_c.run(corpus, {}, temp_dir("resume_c").string());

    CHECK(nn::param_hash(resumed.store) == nn::param_hash(straight.store));
}

TEST_CASE("non-finite loss aborts with diagnostics") {
    ParModel<float> model;
    Rng init(21);
    model.build(tiny_config(), init);
    // Poison one parameter.
    model.store.all()[0].second->v[0] = std::numeric_limits<float>::infinity();

    TrainConfig cfg;
    cfg.total_steps = 2;
    cfg.seed = 22;
    Trainer<float> trainer(model, cfg);
    auto dir = temp_dir("nan");
    CHECK_THROWS_AS(trainer.run(tiny_corpus(4, 12, 23), {}, dir.string()),
                    std::runtime_error);
    bool dump_found = false;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().filename().string().rfind("nan_batch", 0) == 0) dump_found = true;
    CHECK(dump_found);
}
