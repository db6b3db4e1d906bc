#include "ibet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

#include "ibet/error.hpp"

namespace ibet {

AssignmentSupport AssignmentSupport::levels(int k) {
    if (k < 2) fail(ErrorCode::config, "assignment support needs at least two levels");
    AssignmentSupport s;
    s.values.clear();
    for (int a = 1; a <= k; ++a) s.values.push_back(a);
    return s;
}

bool AssignmentSupport::contains(int a) const noexcept {
    return std::find(values.begin(), values.end(), a) != values.end();
}

void Dataset::validate() const {
    if (support.values.size() < 2 || !std::is_sorted(support.values.begin(), support.values.end()))
        fail(ErrorCode::schema, "assignment support must list at least two sorted values");
    const std::size_t dim = covariate_dim();
    std::size_t treated = 0;
    for (std::size_t i = 0; i < subjects.size(); ++i) {
        const Subject& s = subjects[i];
        if (s.id != i) fail(ErrorCode::schema, "subject ids must be 0..n-1 in order");
        if (s.x.size() != dim) fail(ErrorCode::schema, "covariate dimension differs at subject " + std::to_string(i));
        if (!std::isfinite(s.y)) fail(ErrorCode::schema, "non-finite outcome at subject " + std::to_string(i));
        if (!support.contains(s.a)) fail(ErrorCode::schema, "assignment outside support at subject " + std::to_string(i));
        if (support.is_binary()) {
            if (!(s.mu > 0.0 && s.mu < 1.0))
                fail(ErrorCode::invalid_randomization, "mu must lie in (0,1) at subject " + std::to_string(i));
        } else if (!(s.mu > support.min_value() && s.mu < support.max_value())) {
            fail(ErrorCode::invalid_randomization, "mu must lie strictly inside the support at subject " + std::to_string(i));
        }
        treated += static_cast<std::size_t>(s.a == 1);
    }
    if (fixed_treated) {
        if (!support.is_binary()) fail(ErrorCode::unsupported, "fixed-sum randomization requires binary assignments");
        if (*fixed_treated > subjects.size()) fail(ErrorCode::schema, "fixed treated count exceeds n");
        if (treated != *fixed_treated) fail(ErrorCode::schema, "assignments do not sum to the fixed treated count");
    }
}

std::vector<double> Dataset::outcomes() const {
    std::vector<double> y(subjects.size());
    std::transform(subjects.begin(), subjects.end(), y.begin(), [](const Subject& s) { return s.y; });
    return y;
}

std::vector<int> Dataset::assignments() const {
    std::vector<int> a(subjects.size());
    std::transform(subjects.begin(), subjects.end(), a.begin(), [](const Subject& s) { return s.a; });
    return a;
}

std::vector<MaskedSubject> Dataset::masked() const {
    std::vector<MaskedSubject> out;
    out.reserve(subjects.size());
    for (const Subject& s : subjects) out.push_back({s.id, s.y, s.x, s.mu});
    return out;
}

namespace {

struct Fnv1a {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    void add(const std::string& s) {
        for (unsigned char c : s) {
            h ^= c;
            h *= 0x100000001b3ULL;
        }
    }
    void add(double v) {
        char buf[40];
        std::snprintf(buf, sizeof buf, "%.17g;", v);
        add(std::string(buf));
    }
};

}  // namespace

std::uint64_t masked_digest(const std::vector<MaskedSubject>& subjects) {
    Fnv1a f;
    for (const MaskedSubject& s : subjects) {
        f.add(s.y);
        for (double v : s.x) f.add(v);
        f.add(s.mu);
        f.add(std::string("|"));
    }
    return f.h;
}

std::uint64_t Dataset::digest() const { return masked_digest(masked()); }

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    std::istringstream ss(line);
    while (std::getline(ss, cur, ',')) {
        const auto b = cur.find_first_not_of(" \t\r\"");
        const auto e = cur.find_last_not_of(" \t\r\"");
        fields.push_back(b == std::string::npos ? std::string() : cur.substr(b, e - b + 1));
    }
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    return fields;
}

double parse_double(const std::string& field, const std::string& context) {
    try {
        std::size_t used = 0;
        const double v = std::stod(field, &used);
        if (used != field.size()) throw std::invalid_argument(field);
        return v;
    } catch (const std::exception&) {
        fail(ErrorCode::schema, context + ": not a number: '" + field + "'");
    }
}

Dataset read_dataset_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) fail(ErrorCode::schema, "empty dataset file");
    const auto header = split_csv_line(line);
    int col_y = -1, col_a = -1, col_mu = -1;
    std::vector<int> col_x;
    for (int c = 0; c < static_cast<int>(header.size()); ++c) {
        const std::string& h = header[c];
        if (h == "y") col_y = c;
        else if (h == "a") col_a = c;
        else if (h == "mu") col_mu = c;
        else if (h.size() > 1 && h[0] == 'x') col_x.push_back(c);
        else if (h == "id") continue;
        else fail(ErrorCode::schema, "unknown column '" + h + "'");
    }
    if (col_y < 0) fail(ErrorCode::schema, "missing column 'y'");
    if (col_a < 0) fail(ErrorCode::schema, "missing column 'a'");
    std::sort(col_x.begin(), col_x.end(), [&](int l, int r) {
        return std::stoi(header[l].substr(1)) < std::stoi(header[r].substr(1));
    });

    Dataset data;
    int max_a = 0;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto f = split_csv_line(line);
        if (f.size() != header.size())
            fail(ErrorCode::schema, "row " + std::to_string(row) + ": expected " + std::to_string(header.size()) + " fields");
        const std::string ctx = "row " + std::to_string(row);
        Subject s;
        s.id = data.subjects.size();
        s.y = parse_double(f[col_y], ctx + " column y");
        const double a = parse_double(f[col_a], ctx + " column a");
        if (a != std::floor(a)) fail(ErrorCode::schema, ctx + ": assignment must be an integer");
        s.a = static_cast<int>(a);
        max_a = std::max(max_a, s.a);
        for (int c : col_x) s.x.push_back(parse_double(f[c], ctx + " column " + header[c]));
        s.mu = col_mu >= 0 ? parse_double(f[col_mu], ctx + " column mu") : -1.0;
        data.subjects.push_back(std::move(s));
    }
    if (data.subjects.empty()) fail(ErrorCode::schema, "dataset has no rows");

    const bool binary = std::all_of(data.subjects.begin(), data.subjects.end(),
                                    [](const Subject& s) { return s.a == 0 || s.a == 1; });
    data.support = binary ? AssignmentSupport::binary() : AssignmentSupport::levels(max_a);
    for (Subject& s : data.subjects) {
        if (s.mu < 0.0) s.mu = binary ? 0.5 : (1.0 + max_a) / 2.0;
    }
    data.validate();
    return data;
}

Dataset read_dataset_csv_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorCode::io, "cannot open " + path);
    return read_dataset_csv(in);
}

void write_dataset_csv(std::ostream& out, const Dataset& data) {
    out << "y,a";
    for (std::size_t j = 0; j < data.covariate_dim(); ++j) out << ",x" << (j + 1);
    out << ",mu\n";
    char buf[40];
    for (const Subject& s : data.subjects) {
        std::snprintf(buf, sizeof buf, "%.17g", s.y);
        out << buf << ',' << s.a;
        for (double v : s.x) {
            std::snprintf(buf, sizeof buf, "%.17g", v);
            out << ',' << buf;
        }
        std::snprintf(buf, sizeof buf, "%.17g", s.mu);
        out << ',' << buf << '\n';
    }
}

}  // namespace ibet
