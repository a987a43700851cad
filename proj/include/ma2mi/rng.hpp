#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

namespace ma2mi {

// Deterministic RNG with explicit, implementation-independent draw logic.
// Child streams are derived by splitmix64 so parallel clip generation stays
// reproducible regardless of generation order.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ULL) {}

    uint64_t u64() {
        // splitmix64
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // uniform in [lo, hi] inclusive
    int uniform_int(int lo, int hi) {
        uint64_t span = (uint64_t)(hi - lo) + 1;
        return lo + (int)(u64() % span);
    }

    double uniform(double lo = 0.0, double hi = 1.0) {
        double u = (double)(u64() >> 11) * (1.0 / 9007199254740992.0);  // [0,1)
        return lo + u * (hi - lo);
    }

    double normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = uniform(), u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double th = 2.0 * M_PI * u2;
        spare_ = r * std::sin(th);
        have_spare_ = true;
        return r * std::cos(th);
    }

    Rng child(uint64_t key) {
        Rng c(state_ ^ (key * 0xd1342543de82ef95ULL + 0x2545f4914f6cdd1dULL));
        c.u64();
        return c;
    }

    // serialization for resumable training state
    uint64_t raw_state() const { return state_; }
    void set_raw_state(uint64_t s) {
        state_ = s;
        have_spare_ = false;
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = u64() % i;
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

}  // namespace ma2mi
