#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "ibet/dataset.hpp"
#include "ibet/rng.hpp"

namespace testutil {

inline std::filesystem::path temp_dir(const std::string& tag) {
    static std::uint64_t counter = 0;
    auto p = std::filesystem::temp_directory_path() /
             ("ibet_test_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

inline std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

inline void write_file(const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    out << text;
}

/// Treated outcomes at +gap, controls at -gap, alternating assignments.
inline ibet::Dataset separated(std::size_t n, double gap = 10.0, std::uint64_t seed = 1) {
    ibet::CounterRng rng(seed);
    ibet::Dataset d;
    for (std::size_t i = 0; i < n; ++i) {
        ibet::Subject s;
        s.id = i;
        s.a = static_cast<int>(i % 2);
        s.y = s.a ? gap : -gap;
        s.x = {rng.normal()};
        s.mu = 0.5;
        d.subjects.push_back(s);
    }
    return d;
}

/// Outcomes independent of assignment.
inline ibet::Dataset null_data(std::size_t n, std::size_t d, std::uint64_t seed, double mu = 0.5) {
    ibet::CounterRng rng(seed);
    ibet::Dataset data;
    for (std::size_t i = 0; i < n; ++i) {
        ibet::Subject s;
        s.id = i;
        s.mu = mu;
        for (std::size_t j = 0; j < d; ++j) s.x.push_back(rng.normal());
        s.y = rng.normal();
        s.a = rng.bernoulli(mu) ? 1 : 0;
        data.subjects.push_back(s);
    }
    return data;
}

inline std::string to_csv(const ibet::Dataset& d) {
    std::ostringstream out;
    ibet::write_dataset_csv(out, d);
    return out.str();
}

}  // namespace testutil

namespace testutil {

/// Solves A x = b by Gauss-Jordan elimination with partial pivoting.
inline std::vector<double> solve_dense(std::vector<std::vector<double>> a, std::vector<double> b) {
    const std::size_t p = b.size();
    for (std::size_t col = 0; col < p; ++col) {
        std::size_t piv = col;
        for (std::size_t r = col + 1; r < p; ++r)
            if (std::abs(a[r][col]) > std::abs(a[piv][col])) piv = r;
        std::swap(a[col], a[piv]);
        std::swap(b[col], b[piv]);
        for (std::size_t r = 0; r < p; ++r) {
            if (r == col) continue;
            const double f = a[r][col] / a[col][col];
            for (std::size_t c = col; c < p; ++c) a[r][c] -= f * a[col][c];
            b[r] -= f * b[col];
        }
    }
    for (std::size_t r = 0; r < p; ++r) b[r] /= a[r][r];
    return b;
}

}  // namespace testutil
