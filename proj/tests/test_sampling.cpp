#include <doctest.h>

#include <cmath>
#include <vector>

#include "par/data_io.hpp"
#include "par/sampling.hpp"
#include "par/tasks.hpp"

using namespace par;

namespace {

ModelConfig small_config(std::vector<int> sizes = {6, 12, 24}) {
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
    c.scales.sizes = std::move(sizes);
    return c;
}

// Closed-form optimal velocity for target N(mu, sigma^2 I) under the linear
// interpolant x_t = t x + (1 - t) eps.
double gaussian_velocity(double x, double t, double mu, double sigma2) {
    const double var_t = t * t * sigma2 + (1.0 - t) * (1.0 - t);
    return mu + ((t * sigma2 - (1.0 - t)) / var_t) * (x - t * mu);
}

double gaussian_score(double x, double t, double mu, double sigma2) {
    const double var_t = t * t * sigma2 + (1.0 - t) * (1.0 - t);
    return -(x - t * mu) / var_t;
}

}  // namespace

TEST_CASE("schedule parsing and resolution") {
    auto s = SamplerSchedule::parse("S:400:g0.3,O:2,O:2");
    REQUIRE(s.entries.size() == 3);
    CHECK(s.entries[0].sde);
    CHECK(s.entries[0].steps == 400);
    CHECK(s.entries[0].gamma == doctest::Approx(0.3));
    CHECK_FALSE(s.entries[1].sde);
    CHECK(s.entries[1].steps == 2);
    CHECK(s.to_string() == "S:400:g0.3,O:2,O:2");

    auto r2 = s.resolve(2);
    REQUIRE(r2.size() == 2);
    CHECK(r2[0].sde);
    CHECK(r2[1].steps == 2);
    auto r5 = s.resolve(5);
    REQUIRE(r5.size() == 5);
    CHECK(r5[4].steps == 2);

    CHECK_THROWS(SamplerSchedule::parse(""));
    CHECK_THROWS(SamplerSchedule::parse("X:4"));
    CHECK_THROWS(SamplerSchedule::parse("S"));
    CHECK_THROWS(SamplerSchedule::parse("S:0"));
    CHECK_THROWS(SamplerSchedule::parse("S:10:g-1"));
}

TEST_CASE("ode_step trivial cases") {
    std::vector<double> x{1.0, 2.0, 3.0}, zero(3, 0.0), v{0.5, -0.5, 1.0};
    auto same = ode_step(x, 0.25, zero);
    for (int i = 0; i < 3; ++i) CHECK(same[i] == x[i]);
    auto moved = ode_step(x, 1.0, v);
    for (int i = 0; i < 3; ++i) CHECK(moved[i] == doctest::Approx(x[i] + v[i]));
}

TEST_CASE("sde_step: g = 0 reduces to ode_step bitwise; seeded reproducibility") {
    std::vector<double> x{0.3, -1.2}, v{1.0, 0.5};
    Rng rng(1);
    auto sde0 = sde_step(x, 0.4, 0.1, v, 0.3, /*g=*/0.0, rng);
    auto ode = ode_step(x, 0.1, v);
    for (int i = 0; i < 2; ++i) CHECK(sde0[i] == ode[i]);

    Rng ra(2), rb(2);
    auto a = sde_step(x, 0.4, 0.1, v, 0.3, default_g(0.4), ra);
    auto b = sde_step(x, 0.4, 0.1, v, 0.3, default_g(0.4), rb);
    for (int i = 0; i < 2; ++i) CHECK(a[i] == b[i]);

    // Inside the guard band the score term is dropped and g clamps to zero.
    CHECK(default_g(0.9995) == 0.0);
    CHECK(default_g(0.5) == doctest::Approx(0.5));
    CHECK_THROWS(sde_step(x, 0.4, -0.1, v, 0.3, 0.5, ra));
}

TEST_CASE("score_from_velocity matches the closed-form Gaussian score") {
    const double mu = 1.7, sigma2 = 2.3;
    Rng rng(3);
    for (int i = 0; i < 200; ++i) {
        const double t = rng.uniform(1e-3, 1.0 - 1e-3);
        const double x = rng.normal() * 2.0;
        std::vector<double> xv{x}, vv{gaussian_velocity(x, t, mu, sigma2)};
        auto s = score_from_velocity(xv, t, vv);
        CHECK(std::abs(s[0] - gaussian_score(x, t, mu, sigma2)) < 1e-6);
    }
}

TEST_CASE("Gaussian transport: ODE moments converge to the target") {
    const double mu = 1.5, sigma2 = 0.49;
    const int runs = 3000, steps = 400;
    Rng rng(4);
    double sum = 0.0, sum2 = 0.0;
    for (int r = 0; r < runs; ++r) {
        double x = rng.normal();
        const double dt = 1.0 / steps;
        for (int k = 0; k < steps; ++k) {
            const double t = k * dt;
            std::vector<double> xv{x}, vv{gaussian_velocity(x, t, mu, sigma2)};
            x = ode_step(xv, dt, vv)[0];
        }
        sum += x;
        sum2 += x * x;
    }
    const double mean = sum / runs;
    const double var = sum2 / runs - mean * mean;
    CHECK(std::abs(mean - mu) < 0.08);
    CHECK(std::abs(var - sigma2) < 0.15);
}

TEST_CASE("Richardson: coarse ODE grids show bounded, shrinking error") {
    const double mu = -0.8, sigma2 = 1.21;
    auto integrate = [&](double x0, int steps) {
        double x = x0;
        const double dt = 1.0 / steps;
        for (int k = 0; k < steps; ++k) {
            const double t = k * dt;
            std::vector<double> xv{x}, vv{gaussian_velocity(x, t, mu, sigma2)};
            x = ode_step(xv, dt, vv)[0];
        }
        return x;
    };
    Rng rng(5);
    double err2 = 0.0, err8 = 0.0, err32 = 0.0;
    for (int r = 0; r < 200; ++r) {
        const double x0 = rng.normal();
        const double fine = integrate(x0, 400);
        err2 += std::abs(integrate(x0, 2) - fine);
        err8 += std::abs(integrate(x0, 8) - fine);
        err32 += std::abs(integrate(x0, 32) - fine);
    }
    CHECK(err8 < err2);
    CHECK(err32 < err8);
    CHECK(err2 / 200 < 2.0);  // bounded O(dt) discrepancy
}

TEST_CASE("SDE gamma=1 matches ODE terminal marginals on the Gaussian model") {
    const double mu = 0.9, sigma2 = 1.0;
    const int runs = 4000, steps = 200;
    Rng rng(6);
    double sum = 0.0, sum2 = 0.0;
    for (int r = 0; r < runs; ++r) {
        double x = rng.normal();
        const double dt = 1.0 / steps;
        for (int k = 0; k < steps; ++k) {
            const double t = k * dt;
            std::vector<double> xv{x}, vv{gaussian_velocity(x, t, mu, sigma2)};
            x = sde_step(xv, t, dt, vv, 1.0, default_g(t), rng)[0];
        }
        sum += x;
        sum2 += x * x;
    }
    const double mean = sum / runs;
    const double var = sum2 / runs - mean * mean;
    CHECK(std::abs(mean - mu) < 0.1);
    CHECK(std::abs(var - sigma2) < 0.2);
}

TEST_CASE("sample_scale: single ODE step equals x0 + v(x0, 0)") {
    ParModel<float> model;
    Rng rng(7);
    model.build(small_config(), rng);
    auto ladder = model.cfg.scales.resolve(24);
    auto cond = model.ar_forward({}, ladder, 24)[0];

    ScheduleEntry entry;  // ODE, 1 step
    Rng sa(8), sb(8);
    auto got = sample_scale(model, cond, entry, false, 1e-3, sa);

    std::vector<float> x0(static_cast<size_t>(ladder[0]) * 3);
    for (auto& v : x0) v = static_cast<float>(sb.normal());
    auto v0 = model.decoder_forward(x0, 0.0, cond);
    auto expect = ode_step(x0, 1.0, v0->v);
    REQUIRE(got.size() == expect.size());
    for (size_t i = 0; i < got.size(); ++i) CHECK(got[i] == expect[i]);
}

TEST_CASE("oracle decoder: velocity x* - x0 lands on x* in one step") {
    std::vector<double> x0{0.1, -0.4, 2.0}, target{1.0, 1.0, 1.0};
    std::vector<double> v(3);
    for (int i = 0; i < 3; ++i) v[i] = target[i] - x0[i];
    auto got = ode_step(x0, 1.0, v);
    for (int i = 0; i < 3; ++i) CHECK(got[i] == doctest::Approx(target[i]));
}

TEST_CASE("generate: cached equals uncached; emit-scales; determinism") {
    ParModel<float> model;
    Rng rng(9);
    model.build(small_config(), rng);
    auto sched = SamplerSchedule::parse("S:6:g0.3,O:3,O:3");

    GenerateOptions cached;
    cached.emit_scales = true;
    GenerateOptions uncached;
    uncached.emit_scales = true;
    uncached.use_cache = false;

    auto a = generate(model, 24, sched, 42, cached);
    auto b = generate(model, 24, sched, 42, uncached);
    REQUIRE(a.structure.length() == 24);
    REQUIRE(a.scales.size() == 3);
    CHECK(a.scales[0].length() == 6);
    CHECK(a.scales[1].length() == 12);
    for (int i = 0; i < 24; ++i)
        for (int d = 0; d < 3; ++d)
            CHECK(std::abs(a.structure.coords[i][d] - b.structure.coords[i][d]) < 1e-4);

    auto c = generate(model, 24, sched, 42, cached);
    for (int i = 0; i < 24; ++i)
        for (int d = 0; d < 3; ++d) CHECK(a.structure.coords[i][d] == c.structure.coords[i][d]);

    auto other = generate(model, 24, sched, 43, cached);
    double diff = 0.0;
    for (int i = 0; i < 24; ++i) diff += std::abs(a.structure.coords[i][0] -
                                                  other.structure.coords[i][0]);
    CHECK(diff > 0.0);
}

TEST_CASE("prompt with a fresh scale-1 sample reproduces unconditional output") {
    ParModel<float> model;
    Rng rng(10);
    model.build(small_config(), rng);
    auto sched = SamplerSchedule::parse("O:4,O:4,O:4");
    GenerateOptions opts;
    opts.emit_scales = true;

    auto uncond = generate(model, 24, sched, 77, opts);
    PointPrompt prompt{uncond.scales[0]};
    auto prompted = prompt_generate(model, prompt, 24, sched, 77, opts);

    for (int i = 0; i < 24; ++i)
        for (int d = 0; d < 3; ++d)
            CHECK(std::abs(prompted.structure.coords[i][d] -
                           uncond.structure.coords[i][d]) < 1e-4);
}

TEST_CASE("degenerate straight-line prompt completes without error") {
    ParModel<float> model;
    Rng rng(11);
    model.build(small_config(), rng);
    ChainStructure line;
    for (int i = 0; i < 6; ++i) line.coords.push_back({static_cast<double>(i), 0.0, 0.0});
    auto sched = SamplerSchedule::parse("O:2,O:2,O:2");
    auto out = prompt_generate(model, PointPrompt{line}, 24, sched, 1);
    CHECK(out.structure.length() == 24);

    ChainStructure wrong;
    for (int i = 0; i < 5; ++i) wrong.coords.push_back({static_cast<double>(i), 0.0, 0.0});
    CHECK_THROWS(prompt_generate(model, PointPrompt{wrong}, 24, sched, 1));
}

TEST_CASE("motif scaffolding: exact replacement at the final scale") {
    ParModel<float> model;
    Rng rng(12);
    model.build(small_config(), rng);
    auto sched = SamplerSchedule::parse("O:3,O:3,O:3");

    Rng data_rng(13);
    auto donor = gen_coil_chain(24, data_rng);
    MotifSpec spec;
    for (int i = 8; i <= 14; ++i) {
        spec.indices.push_back(i + 1);
        spec.motif.coords.push_back(donor.coords[i]);
    }
    auto out = motif_scaffold(model, spec, 24, sched, 5);
    REQUIRE(out.structure.length() == 24);

    // Final-scale mapping at m = L is the identity on the motif indices.
    ChainStructure gen_motif;
    for (int idx : spec.indices) gen_motif.coords.push_back(out.structure.coords[idx - 1]);
    auto tf = kabsch_superpose(spec.motif, gen_motif);
    CHECK(tf.rmsd < 1e-5);

    // Validation errors.
    MotifSpec bad = spec;
    bad.indices.back() = 100;
    CHECK_THROWS(motif_scaffold(model, bad, 24, sched, 5));
}

TEST_CASE("non-finite sampler state aborts with diagnostics") {
    ParModel<float> model;
    Rng rng(14);
    model.build(small_config(), rng);
    model.store.all()[0].second->v[0] = std::numeric_limits<float>::infinity();
    auto sched = SamplerSchedule::parse("O:2,O:2,O:2");
    CHECK_THROWS_AS(generate(model, 24, sched, 1), std::runtime_error);
}
