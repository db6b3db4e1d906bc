#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace ibet {

/// Counter-based generator: draw k of stream `key` is splitmix64_mix(key + k * 0x9E3779B97F4A7C15).
///
/// The output is a pure function of (key, counter), so any port that
/// implements the same mix reproduces a stream bit for bit. Independent
/// substreams come from `split(id)`, which hashes the parent key with the id;
/// simulation repetitions use `master.split(rep)` so results do not depend on
/// scheduling order.
class CounterRng {
public:
    using result_type = std::uint64_t;

    explicit CounterRng(std::uint64_t key = 0) noexcept : key_(key) {}

    static constexpr result_type min() noexcept { return 0; }
    static constexpr result_type max() noexcept { return ~result_type{0}; }

    result_type operator()() noexcept { return next_u64(); }

    std::uint64_t next_u64() noexcept;

    /// Uniform on [0, 1) with 53 random bits.
    double uniform() noexcept;
    /// Uniform on (0, 1).
    double uniform_open() noexcept;
    /// Uniform integer in [0, bound), unbiased (rejection on the top range).
    std::uint64_t below(std::uint64_t bound) noexcept;

    double normal() noexcept;
    /// Standard Cauchy via the inverse CDF tan(pi (u - 1/2)).
    double cauchy() noexcept;
    bool bernoulli(double p) noexcept { return uniform() < p; }

    CounterRng split(std::uint64_t stream_id) const noexcept;

    std::uint64_t key() const noexcept { return key_; }
    std::uint64_t counter() const noexcept { return counter_; }

    template <class T>
    void shuffle(std::span<T> values) noexcept {
        for (std::size_t i = values.size(); i > 1; --i) {
            const auto j = static_cast<std::size_t>(below(i));
            std::swap(values[i - 1], values[j]);
        }
    }

    template <class T>
    void shuffle(std::vector<T>& values) noexcept {
        shuffle(std::span<T>(values));
    }

private:
    std::uint64_t key_;
    std::uint64_t counter_ = 0;
    bool has_spare_normal_ = false;
    double spare_normal_ = 0.0;
};

std::uint64_t splitmix64_mix(std::uint64_t z) noexcept;

}  // namespace ibet
