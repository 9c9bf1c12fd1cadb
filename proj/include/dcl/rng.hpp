#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace dcl {

/// Seeded random stream with platform-independent draws.
///
/// std::uniform_int_distribution and std::normal_distribution are
/// implementation-defined, so bounded integers and normals are derived
/// directly from the mt19937_64 output, which the standard pins down.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    /// Child stream for a named purpose ("init", "sampler", ...), optionally
    /// indexed (e.g. by training step). Independent of how much the parent
    /// has been consumed.
    static Rng substream(std::uint64_t master_seed, std::string_view label,
                         std::uint64_t index = 0);

    std::uint64_t next_u64() { return engine_(); }

    /// Uniform integer in [0, n). n must be > 0.
    std::uint64_t uniform_index(std::uint64_t n);

    /// Uniform real in [0, 1).
    double uniform01();

    double normal(double mean = 0.0, double stddev = 1.0);

    bool bernoulli(double p) { return uniform01() < p; }

    /// k distinct indices from [0, n), in draw order (partial Fisher-Yates).
    std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

private:
    std::mt19937_64 engine_;
};

std::uint64_t mix_seed(std::uint64_t seed, std::string_view label, std::uint64_t index);

}  // namespace dcl
