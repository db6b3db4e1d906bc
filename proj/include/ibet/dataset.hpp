#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace ibet {

/// The finite set of values an assignment can take: {0,1} for two-sample
/// designs, {1..k} for k-sample designs.
struct AssignmentSupport {
    std::vector<int> values{0, 1};

    static AssignmentSupport binary() { return {}; }
    static AssignmentSupport levels(int k);

    bool is_binary() const noexcept { return values.size() == 2 && values[0] == 0 && values[1] == 1; }
    bool contains(int a) const noexcept;
    int min_value() const noexcept { return values.front(); }
    int max_value() const noexcept { return values.back(); }

    friend bool operator==(const AssignmentSupport&, const AssignmentSupport&) = default;
};

struct Subject {
    std::size_t id = 0;
    double y = 0.0;
    int a = 0;
    std::vector<double> x;
    /// P(A = 1) for binary designs, E[A] for multi-level designs.
    double mu = 0.5;
};

/// What the analyst may see before a subject is revealed.
struct MaskedSubject {
    std::size_t id = 0;
    double y = 0.0;
    std::vector<double> x;
    double mu = 0.5;
};

struct Dataset {
    std::vector<Subject> subjects;
    AssignmentSupport support;
    /// Completely randomized design: exactly this many treated subjects.
    std::optional<std::size_t> fixed_treated;

    std::size_t size() const noexcept { return subjects.size(); }
    std::size_t covariate_dim() const noexcept { return subjects.empty() ? 0 : subjects.front().x.size(); }

    /// Throws Error(schema / invalid_randomization) on violated invariants.
    void validate() const;

    std::vector<double> outcomes() const;
    std::vector<int> assignments() const;
    std::vector<MaskedSubject> masked() const;

    /// FNV-1a over the masked view (y, x, mu); never covers assignments.
    std::uint64_t digest() const;
};

std::uint64_t masked_digest(const std::vector<MaskedSubject>& subjects);

/// CSV with header `y,a,x1..xd[,mu]`. Missing mu defaults to 1/2.
Dataset read_dataset_csv(std::istream& in);
Dataset read_dataset_csv_file(const std::string& path);
void write_dataset_csv(std::ostream& out, const Dataset& data);

/// Splits a CSV line on commas and trims surrounding whitespace.
std::vector<std::string> split_csv_line(const std::string& line);
double parse_double(const std::string& field, const std::string& context);

}  // namespace ibet
