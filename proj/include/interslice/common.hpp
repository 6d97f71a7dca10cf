#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace isr {

// All in-memory image math runs in double; file formats are float32.
using scalar = double;

// Error hierarchy. Everything user-facing derives from isr::error so the
// CLI can map library failures to exit codes in one place.
class error : public std::runtime_error {
public:
    explicit error(const std::string& msg) : std::runtime_error(msg) {}
};

class io_error : public error {
public:
    explicit io_error(const std::string& msg) : error(msg) {}
};

// Malformed file contents (bad magic, truncated payload, broken header).
class format_error : public io_error {
public:
    explicit format_error(const std::string& msg) : io_error(msg) {}
};

class shape_error : public error {
public:
    explicit shape_error(const std::string& msg) : error(msg) {}
};

class bounds_error : public error {
public:
    explicit bounds_error(const std::string& msg) : error(msg) {}
};

class value_error : public error {
public:
    explicit value_error(const std::string& msg) : error(msg) {}
};

class config_error : public error {
public:
    explicit config_error(const std::string& msg) : error(msg) {}
};

// Archive loaded against an incompatible model configuration.
class compat_error : public error {
public:
    explicit compat_error(const std::string& msg) : error(msg) {}
};

class train_error : public error {
public:
    explicit train_error(const std::string& msg) : error(msg) {}
};

inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Derives a child seed from (seed, salt...) so parallel streams and per-epoch
// generators never overlap.
inline uint64_t mix_seed(uint64_t seed, uint64_t a, uint64_t b = 0) {
    return splitmix64(splitmix64(seed ^ splitmix64(a)) ^ splitmix64(b + 0x51ed2701));
}

// Seeded generator with portable derivations. The standard distributions are
// implementation-defined, so uniform/gaussian draws are produced here from
// raw mt19937_64 output and behave the same on every standard library.
class Rng {
public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    uint64_t next_u64() { return eng_(); }

    // Uniform integer in [lo, hi], inclusive.
    int64_t uniform_int(int64_t lo, int64_t hi) {
        if (lo > hi) throw value_error("Rng::uniform_int: empty range");
        const uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
        if (span == 0) return static_cast<int64_t>(eng_());  // full 64-bit range
        // rejection sampling, unbiased
        const uint64_t limit = UINT64_MAX - UINT64_MAX % span;
        uint64_t x;
        do {
            x = eng_();
        } while (x >= limit);
        return lo + static_cast<int64_t>(x % span);
    }

    // Uniform in [0, 1).
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller; one value per call, cached pair dropped for determinism.
    double gaussian(double mean = 0.0, double stddev = 1.0) {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        const double r = std::sqrt(-2.0 * std::log(u1));
        return mean + stddev * r * std::cos(2.0 * M_PI * u2);
    }

private:
    std::mt19937_64 eng_;
};

// FNV-1a, used for config fingerprints and reproducibility hashes.
inline uint64_t fnv1a(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t fnv1a(const std::string& s, uint64_t h = 0xcbf29ce484222325ull) {
    return fnv1a(s.data(), s.size(), h);
}

// Snaps a value to the nearest float32. Volumes travel through float32 files,
// so generators snap their outputs to keep save/load round-trips bit-exact.
inline scalar snap_f32(scalar v) { return static_cast<scalar>(static_cast<float>(v)); }

}  // namespace isr
