#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

namespace par {

/// Seeded RNG with self-contained uniform/normal transforms so draws are
/// bit-reproducible regardless of the standard library implementation.
class Rng {
public:
    explicit Rng(uint64_t seed = 0) : eng_(seed) {}

    uint64_t next_u64() { return eng_(); }

    /// Uniform in [0, 1).
    double uniform() {
        return (eng_() >> 11) * (1.0 / 9007199254740992.0);  // 53-bit mantissa
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Standard normal via Box-Muller (one value per call, cached pair).
    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1, u2;
        do {
            u1 = uniform();
        } while (u1 <= 0.0);
        u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(a);
        have_spare_ = true;
        return r * std::cos(a);
    }

    int uniform_int(int lo, int hi) {  // inclusive bounds
        return lo + static_cast<int>(eng_() % static_cast<uint64_t>(hi - lo + 1));
    }

    bool bernoulli(double p) { return uniform() < p; }

    /// Derived stream for (stream id, item id) pairs; used for per-structure
    /// and per-worker seeding.
    static uint64_t derive_seed(uint64_t base, uint64_t stream, uint64_t item = 0) {
        uint64_t h = base ^ (0x9e3779b97f4a7c15ULL + stream);
        h ^= h >> 30;
        h *= 0xbf58476d1ce4e5b9ULL;
        h ^= h >> 27;
        h *= 0x94d049bb133111ebULL;
        h ^= h >> 31;
        h ^= item * 0xda942042e4dd58b5ULL;
        h ^= h >> 29;
        return h;
    }

    /// Opaque textual state for checkpoint resume.
    std::string save_state() const {
        std::ostringstream os;
        os << eng_ << " " << (have_spare_ ? 1 : 0) << " ";
        os.precision(17);
        os << spare_;
        return os.str();
    }

    void load_state(const std::string& s) {
        std::istringstream is(s);
        int spare_flag = 0;
        is >> eng_ >> spare_flag >> spare_;
        have_spare_ = spare_flag != 0;
    }

private:
    std::mt19937_64 eng_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace par
