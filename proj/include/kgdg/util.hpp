#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>
#include <vector>

namespace kgdg {

/// 64-bit FNV-1a. Used for fingerprints and artifact checksums; not a
/// cryptographic hash.
class Fnv1a {
public:
    Fnv1a& update(std::string_view bytes) noexcept;
    Fnv1a& update(double value);
    Fnv1a& update(std::int64_t value);
    std::uint64_t digest() const noexcept { return state_; }
    std::string hex() const;

private:
    std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::string to_hex(std::uint64_t value);

/// Shortest round-trip decimal form of a double.
std::string format_double(double value);

/// Fixed-point with `decimals` places ("%.Nf").
std::string format_fixed(double value, int decimals);

/// Mixes a base seed with a stream tag into an independent sub-seed.
std::uint64_t derive_seed(std::uint64_t base, std::string_view tag) noexcept;

/// Seeded generator with portable draws: every distribution below is
/// implemented here on top of mt19937_64 so outputs do not depend on the
/// standard library's distribution implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }
    /// Uniform on [0, 1).
    double uniform();
    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
    /// Uniform integer on [0, n). n must be > 0.
    std::uint64_t below(std::uint64_t n);
    bool bernoulli(double p) { return uniform() < p; }
    double normal();
    std::int64_t poisson(double lambda);

    template <typename T>
    void shuffle(std::vector<T>& items) {
        for (std::size_t i = items.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(below(i));
            std::swap(items[i - 1], items[j]);
        }
    }

private:
    std::mt19937_64 engine_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

std::string to_lower(std::string_view s);
std::string trim(std::string_view s);

}  // namespace kgdg
