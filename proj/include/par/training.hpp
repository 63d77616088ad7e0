#pragma once

// Joint FM training of the AR transformer and flow decoder: t/noise draws,
// noisy context learning, scheduled sampling, self-conditioning, and the
// deterministic training loop with checkpoint/metrics artifacts.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "par/model.hpp"
#include "par/nn/checkpoint.hpp"
#include "par/rng.hpp"

namespace par {

struct TrainConfig {
    double t_min = 1e-3;             // Uniform(t_min, 1 - t_min)
    bool ncl_enabled = true;
    double ncl_w_lo = 0.0;
    double ncl_w_hi = 1.0;
    double ss_probability = 0.5;     // scheduled-sampling replacement prob
    double self_cond_probability = 0.5;
    double learning_rate = 1e-4;
    int batch_size = 8;
    long total_steps = 1000;
    uint64_t seed = 0;
    long val_every = 1000;
    long checkpoint_every = 0;       // 0: initial + final only

    std::string echo() const {
        std::ostringstream os;
        os << "t_min=" << t_min << "\nncl_enabled=" << (ncl_enabled ? 1 : 0)
           << "\nncl_w_lo=" << ncl_w_lo << "\nncl_w_hi=" << ncl_w_hi
           << "\nss_probability=" << ss_probability
           << "\nself_cond_probability=" << self_cond_probability
           << "\nlearning_rate=" << learning_rate << "\nbatch_size=" << batch_size
           << "\ntotal_steps=" << total_steps << "\nseed=" << seed
           << "\nval_every=" << val_every << "\ncheckpoint_every=" << checkpoint_every << "\n";
        return os.str();
    }
};

inline double sample_t(const TrainConfig& cfg, Rng& rng) {
    return rng.uniform(cfg.t_min, 1.0 - cfg.t_min);
}

/// x_t = t * x + (1 - t) * eps, elementwise.
template <typename T>
std::vector<T> interpolate(const std::vector<T>& x, double t, const std::vector<T>& eps) {
    std::vector<T> out(x.size());
    const T a = static_cast<T>(t), b = static_cast<T>(1.0 - t);
    for (size_t i = 0; i < x.size(); ++i) out[i] = a * x[i] + b * eps[i];
    return out;
}

/// Context corruption x_ncl = w * x + (1 - w) * eps; applied to AR inputs
/// only, never to decoder targets.
template <typename T>
std::vector<T> apply_ncl(const std::vector<T>& context, double w, const std::vector<T>& eps) {
    return interpolate(context, w, eps);
}

namespace training_detail {

template <typename T>
std::vector<T> to_model_space(const ChainStructure& x, double coord_scale) {
    std::vector<T> out;
    out.reserve(static_cast<size_t>(x.length()) * 3);
    for (const auto& p : x.coords)
        for (int d = 0; d < 3; ++d) out.push_back(static_cast<T>(p[d] * coord_scale));
    return out;
}

template <typename T>
std::vector<T> draw_normal(Rng& rng, size_t n) {
    std::vector<T> out(n);
    for (auto& x : out) x = static_cast<T>(rng.normal());
    return out;
}

// Per-scale squared-error term: ||v - (x - eps)||^2 / size(i).
template <typename T>
nn::Ref<T> scale_term(const nn::Ref<T>& v, const std::vector<T>& x, const std::vector<T>& eps,
                      int size_i) {
    std::vector<T> target(x.size());
    for (size_t k = 0; k < x.size(); ++k) target[k] = x[k] - eps[k];
    auto diff = nn::sub(v, nn::from_data<T>(size_i, 3, target));
    return nn::scale(nn::sum_all(nn::mul(diff, diff)), static_cast<T>(1.0 / size_i));
}

// Velocity prediction with optional self-conditioning: when active, a first
// no-grad pass supplies the clean estimate fed to the graded pass.
template <typename T>
nn::Ref<T> decoder_with_self_cond(const ParModel<T>& model, const std::vector<T>& x_t, double t,
                                  const Conditioning<T>& cond, bool use_self_cond,
                                  std::vector<T>* x_pred_out) {
    nn::Ref<T> v;
    if (use_self_cond) {
        Conditioning<T> frozen = cond;
        frozen.z = nn::detach(cond.z);
        auto v0 = model.decoder_forward(x_t, t, frozen);
        auto sc = predict_clean(x_t, t, v0->v);
        v = model.decoder_forward(x_t, t, cond, &sc);
    } else {
        v = model.decoder_forward(x_t, t, cond);
    }
    if (x_pred_out) *x_pred_out = predict_clean(x_t, t, v->v);
    return v;
}

}  // namespace training_detail

/// Multi-scale FM loss (Eq.-style: mean over scales of per-scale mean
/// squared velocity error) for one batch. Draw order per sample and scale is
/// fixed: t, eps, [ncl w + eps], [ss coin], [self-cond coin].
template <typename T>
nn::Ref<T> fm_loss(const ParModel<T>& model, const std::vector<ChainStructure>& batch,
                   const TrainConfig& cfg, Rng& rng,
                   std::vector<double>* per_scale_out = nullptr) {
    namespace td = training_detail;
    if (batch.empty()) throw std::invalid_argument("fm_loss: empty batch");
    nn::Ref<T> total;
    std::map<int, std::pair<double, int>> per_scale_acc;

    for (const auto& raw : batch) {
        auto x_cent = center(raw);
        const int L = x_cent.length();
        auto ladder = model.cfg.scales.resolve(L);
        const int n = static_cast<int>(ladder.size());
        auto decomp = decompose(x_cent, model.cfg.scales);

        std::vector<std::vector<T>> xs(n);
        for (int i = 0; i < n; ++i)
            xs[i] = td::to_model_space<T>(decomp.scales[i], model.cfg.coord_scale);

        // Per-scale draws, fixed order.
        std::vector<double> ts(n), ncl_w(std::max(0, n - 1));
        std::vector<std::vector<T>> eps(n), ncl_eps(std::max(0, n - 1));
        std::vector<bool> ss_replace(std::max(0, n - 1), false), use_sc(n, false);
        for (int i = 0; i < n; ++i) {
            ts[i] = sample_t(cfg, rng);
            eps[i] = td::draw_normal<T>(rng, xs[i].size());
            if (i < n - 1 && cfg.ncl_enabled) {
                ncl_w[i] = rng.uniform(cfg.ncl_w_lo, cfg.ncl_w_hi);
                ncl_eps[i] = td::draw_normal<T>(rng, xs[i].size());
            }
            if (i < n - 1 && cfg.ss_probability > 0.0)
                ss_replace[i] = rng.bernoulli(cfg.ss_probability);
            if (cfg.self_cond_probability > 0.0)
                use_sc[i] = rng.bernoulli(cfg.self_cond_probability);
        }

        auto corrupt = [&](const std::vector<T>& ctx, int i) {
            return cfg.ncl_enabled ? apply_ncl(ctx, ncl_w[i], ncl_eps[i]) : ctx;
        };

        nn::Ref<T> sample_loss;
        const bool ss_active = cfg.ss_probability > 0.0;
        if (!ss_active) {
            // Parallel teacher-forced pass over all scales.
            std::vector<std::vector<T>> contexts;
            for (int i = 0; i < n - 1; ++i) contexts.push_back(corrupt(xs[i], i));
            auto conds = model.ar_forward(contexts, ladder, L);
            for (int i = 0; i < n; ++i) {
                auto x_t = interpolate(xs[i], ts[i], eps[i]);
                auto v = td::decoder_with_self_cond<T>(model, x_t, ts[i], conds[i], use_sc[i],
                                                       nullptr);
                auto term = td::scale_term(v, xs[i], eps[i], ladder[i]);
                sample_loss = sample_loss ? nn::add(sample_loss, term) : term;
                auto& acc = per_scale_acc[i];
                acc.first += term->v[0];
                acc.second += 1;
            }
        } else {
            // Iterative coarse-to-fine pass; later-scale context may be the
            // model's own (detached) prediction, corrupted like ground truth.
            std::vector<std::vector<T>> contexts;
            for (int i = 0; i < n; ++i) {
                auto conds = model.ar_forward(contexts, ladder, L);
                auto x_t = interpolate(xs[i], ts[i], eps[i]);
                std::vector<T> x_pred;
                auto v = td::decoder_with_self_cond(model, x_t, ts[i], conds.back(), use_sc[i],
                                                    &x_pred);
                auto term = td::scale_term(v, xs[i], eps[i], ladder[i]);
                sample_loss = sample_loss ? nn::add(sample_loss, term) : term;
                auto& acc = per_scale_acc[i];
                acc.first += term->v[0];
                acc.second += 1;
                if (i < n - 1)
                    contexts.push_back(corrupt(ss_replace[i] ? x_pred : xs[i], i));
            }
        }
        sample_loss = nn::scale(sample_loss, static_cast<T>(1.0 / n));
        total = total ? nn::add(total, sample_loss) : sample_loss;
    }
    total = nn::scale(total, static_cast<T>(1.0 / batch.size()));

    if (per_scale_out) {
        per_scale_out->clear();
        for (auto& [i, acc] : per_scale_acc)
            per_scale_out->push_back(acc.first / acc.second);
    }
    return total;
}

/// Single-scale conditional FM loss: the plain flow-matching trainer the
/// multi-scale objective reduces to at n = 1, written without the
/// multi-scale machinery. Draw order matches fm_loss for a 1-scale ladder.
template <typename T>
nn::Ref<T> plain_fm_loss(const ParModel<T>& model, const std::vector<ChainStructure>& batch,
                         const TrainConfig& cfg, Rng& rng) {
    namespace td = training_detail;
    if (batch.empty()) throw std::invalid_argument("plain_fm_loss: empty batch");
    nn::Ref<T> total;
    for (const auto& raw : batch) {
        auto x_cent = center(raw);
        const int L = x_cent.length();
        auto x = td::to_model_space<T>(x_cent, model.cfg.coord_scale);

        double t = sample_t(cfg, rng);
        auto eps = td::draw_normal<T>(rng, x.size());
        bool use_sc = cfg.self_cond_probability > 0.0 && rng.bernoulli(cfg.self_cond_probability);

        // Constant learned conditioning from bos alone.
        auto conds = model.ar_forward({}, {L}, L);
        auto x_t = interpolate(x, t, eps);
        auto v = td::decoder_with_self_cond<T>(model, x_t, t, conds[0], use_sc, nullptr);
        auto term = td::scale_term(v, x, eps, L);
        auto sample_loss = nn::scale(term, static_cast<T>(1.0));
        total = total ? nn::add(total, sample_loss) : sample_loss;
    }
    return nn::scale(total, static_cast<T>(1.0 / batch.size()));
}

struct TrainLogEntry {
    long step = 0;
    double train_loss = 0.0;
    double val_loss = -1.0;  // negative: not evaluated this step
    std::vector<double> per_scale;
};

/// Deterministic single-worker training loop. Writes metrics.csv and
/// checkpoints (initial, periodic, final) under out_dir; supports bitwise
/// resume from a checkpoint containing optimizer extras.
template <typename T>
class Trainer {
public:
    Trainer(ParModel<T>& model, TrainConfig cfg) : model_(model), cfg_(std::move(cfg)) {
        typename nn::Adam<T>::Hyper h;
        h.lr = cfg_.learning_rate;
        opt_ = nn::Adam<T>(h);
        opt_.attach(model_.store);
        rng_ = Rng(cfg_.seed);
    }

    nn::Adam<T>& optimizer() { return opt_; }

    void resume_from(const std::string& path) {
        auto loaded = nn::load_checkpoint<T>(path, model_.store, &opt_);
        if (!loaded.has_extras)
            throw std::runtime_error("resume: checkpoint has no optimizer state");
        rng_.load_state(loaded.rng_state);
        start_step_ = loaded.train_step;
    }

    std::vector<TrainLogEntry> run(const std::vector<ChainStructure>& train,
                                   const std::vector<ChainStructure>& val,
                                   const std::string& out_dir) {
        namespace fs = std::filesystem;
        fs::create_directories(out_dir);
        std::string config_echo = model_.cfg.echo() + cfg_.echo();

        std::ofstream metrics(out_dir + "/metrics.csv",
                              start_step_ > 0 ? std::ios::app : std::ios::out);
        if (start_step_ == 0) {
            metrics << "step,train_loss,val_loss";
            for (int i = 0; i < 8; ++i) metrics << ",scale" << (i + 1) << "_loss";
            metrics << "\n";
            save(out_dir + "/checkpoint_init.bin", 0);
        }

        auto batches = make_batch_schedule(train);
        const long bpe = static_cast<long>(batches.size());
        std::vector<TrainLogEntry> log;
        long cur_epoch = -1;
        std::vector<std::vector<int>> epoch_batches;

        for (long step = start_step_ + 1; step <= cfg_.total_steps; ++step) {
            long epoch = (step - 1) / bpe;
            if (epoch != cur_epoch) {
                epoch_batches = shuffled_epoch(batches, epoch);
                cur_epoch = epoch;
            }
            const auto& idxs = epoch_batches[(step - 1) % bpe];
            std::vector<ChainStructure> batch;
            for (int i : idxs) batch.push_back(train[i]);

            model_.store.zero_grads();
            std::vector<double> per_scale;
            auto loss = fm_loss(model_, batch, cfg_, rng_, &per_scale);
            if (!std::isfinite(static_cast<double>(loss->v[0]))) {
                dump_batch(out_dir, step, idxs, train);
                throw std::runtime_error("train_loop: non-finite loss at step " +
                                         std::to_string(step));
            }
            nn::backward(loss);
            opt_.step(model_.store);

            TrainLogEntry e;
            e.step = step;
            e.train_loss = static_cast<double>(loss->v[0]);
            e.per_scale = per_scale;
            if (cfg_.val_every > 0 && step % cfg_.val_every == 0 && !val.empty())
                e.val_loss = evaluate(val, step);
            log.push_back(e);

            metrics << step << "," << e.train_loss << ",";
            if (e.val_loss >= 0) metrics << e.val_loss;
            for (int i = 0; i < 8; ++i) {
                metrics << ",";
                if (i < static_cast<int>(per_scale.size())) metrics << per_scale[i];
            }
            metrics << "\n";

            if (cfg_.checkpoint_every > 0 && step % cfg_.checkpoint_every == 0)
                save(out_dir + "/checkpoint_" + std::to_string(step) + ".bin", step);
        }
        save(out_dir + "/checkpoint_final.bin", cfg_.total_steps);

        std::ofstream cfgfile(out_dir + "/run_config.txt");
        cfgfile << config_echo;
        return log;
    }

    double evaluate(const std::vector<ChainStructure>& val, long step) {
        Rng vrng(Rng::derive_seed(cfg_.seed, 2, static_cast<uint64_t>(step)));
        TrainConfig eval_cfg = cfg_;
        eval_cfg.ss_probability = 0.0;  // teacher-forced validation loss
        eval_cfg.ncl_enabled = false;
        eval_cfg.self_cond_probability = 0.0;
        double acc = 0.0;
        int count = 0;
        const int max_batches = 4;
        for (size_t b = 0; b < val.size() && count < max_batches;
             b += cfg_.batch_size, ++count) {
            std::vector<ChainStructure> batch;
            for (size_t i = b; i < std::min(val.size(), b + cfg_.batch_size); ++i) {
                if (!batch.empty() && batch.front().length() != val[i].length()) break;
                batch.push_back(val[i]);
            }
            auto loss = fm_loss(model_, batch, eval_cfg, vrng);
            acc += static_cast<double>(loss->v[0]);
        }
        return count ? acc / count : 0.0;
    }

private:
    // Equal-length batches; groups are deterministic functions of the data.
    std::vector<std::vector<int>> make_batch_schedule(const std::vector<ChainStructure>& train) {
        std::map<int, std::vector<int>> by_len;
        for (size_t i = 0; i < train.size(); ++i)
            by_len[train[i].length()].push_back(static_cast<int>(i));
        std::vector<std::vector<int>> batches;
        for (auto& [len, idxs] : by_len) {
            for (size_t b = 0; b < idxs.size(); b += cfg_.batch_size) {
                std::vector<int> batch(idxs.begin() + b,
                                       idxs.begin() + std::min(idxs.size(), b + cfg_.batch_size));
                batches.push_back(std::move(batch));
            }
        }
        if (batches.empty()) throw std::invalid_argument("train_loop: empty dataset");
        return batches;
    }

    std::vector<std::vector<int>> shuffled_epoch(std::vector<std::vector<int>> batches,
                                                 long epoch) {
        Rng erng(Rng::derive_seed(cfg_.seed, 1, static_cast<uint64_t>(epoch)));
        for (size_t i = batches.size(); i > 1; --i)
            std::swap(batches[i - 1], batches[erng.next_u64() % i]);
        return batches;
    }

    void save(const std::string& path, long step) {
        nn::CheckpointExtras<T> extras;
        extras.optimizer = &opt_;
        extras.rng_state = rng_.save_state();
        extras.train_step = step;
        nn::save_checkpoint(path, model_.store, model_.cfg.echo() + cfg_.echo(), cfg_.seed,
                            &extras);
    }

    void dump_batch(const std::string& out_dir, long step, const std::vector<int>& idxs,
                    const std::vector<ChainStructure>& train) {
        std::ofstream dump(out_dir + "/nan_batch_step" + std::to_string(step) + ".txt");
        dump << "step=" << step << "\nindices=";
        for (int i : idxs) dump << i << " ";
        dump << "\nlengths=";
        for (int i : idxs) dump << train[i].length() << " ";
        dump << "\n";
    }

    ParModel<T>& model_;
    TrainConfig cfg_;
    nn::Adam<T> opt_;
    Rng rng_;
    long start_step_ = 0;
};

}  // namespace par
