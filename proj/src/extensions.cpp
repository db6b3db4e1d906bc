#include "ibet/extensions.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <istream>
#include <map>
#include <numeric>
#include <ostream>

#include "ibet/error.hpp"

namespace ibet {

Dataset pair_to_pseudo(const std::vector<PairedRecord>& pairs) {
    Dataset d;
    for (const PairedRecord& p : pairs) {
        if (!((p.a1 == 1 && p.a2 == 0) || (p.a1 == 0 && p.a2 == 1)))
            fail(ErrorCode::invalid_pair, "pair " + std::to_string(p.pair_id) + " must have exactly one treated subject");
        if (p.x1.size() != p.x2.size()) fail(ErrorCode::schema, "pair covariate dimensions differ");
        Subject s;
        s.id = d.subjects.size();
        s.y = p.y1 - p.y2;
        s.a = (p.a1 - p.a2 + 1) / 2;
        s.x = p.x1;
        s.x.insert(s.x.end(), p.x2.begin(), p.x2.end());
        s.mu = 0.5;
        d.subjects.push_back(std::move(s));
    }
    if (!d.subjects.empty()) d.validate();
    return d;
}

SignedDiffData pair_to_signed_diff(const std::vector<PairedRecord>& pairs) {
    SignedDiffData out;
    for (const PairedRecord& p : pairs) {
        if (!((p.a1 == 1 && p.a2 == 0) || (p.a1 == 0 && p.a2 == 1)))
            fail(ErrorCode::invalid_pair, "pair " + std::to_string(p.pair_id) + " must have exactly one treated subject");
        const double d = (p.a1 - p.a2) * (p.y1 - p.y2);
        if (d == 0.0) {
            ++out.dropped_ties;
            continue;
        }
        Subject s;
        s.id = out.data.subjects.size();
        s.y = std::abs(d);
        s.a = d > 0.0 ? 1 : 0;
        s.x = p.x1;
        s.x.insert(s.x.end(), p.x2.begin(), p.x2.end());
        s.mu = 0.5;
        out.data.subjects.push_back(std::move(s));
    }
    if (out.data.subjects.empty()) fail(ErrorCode::schema, "every pair is tied; nothing to test");
    out.data.validate();
    return out;
}

int friedman_pseudo_assignment(std::span<const int> ordered) {
    if (ordered.size() != 3) fail(ErrorCode::unsupported, "pseudo assignment is defined for blocks of three");
    std::array<int, 3> s{ordered[0], ordered[1], ordered[2]};
    std::array<int, 3> sorted = s;
    std::sort(sorted.begin(), sorted.end());
    if (sorted != std::array<int, 3>{1, 2, 3}) fail(ErrorCode::schema, "block assignments must be a permutation of 1,2,3");
    static const std::array<std::array<int, 3>, 3> kOne{{{1, 2, 3}, {2, 1, 3}, {1, 3, 2}}};
    return std::find(kOne.begin(), kOne.end(), s) != kOne.end() ? 1 : 0;
}

namespace {

std::vector<std::size_t> descending_order(const std::vector<double>& y) {
    std::vector<std::size_t> idx(y.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t l, std::size_t r) { return y[l] > y[r]; });
    return idx;
}

bool has_ties(const std::vector<double>& y) {
    for (std::size_t i = 0; i < y.size(); ++i)
        for (std::size_t j = i + 1; j < y.size(); ++j)
            if (y[i] == y[j]) return true;
    return false;
}

int pseudo_of(const std::vector<double>& y, const std::vector<int>& a) {
    const auto order = descending_order(y);
    const std::array<int, 3> ordered{a[order[0]], a[order[1]], a[order[2]]};
    return friedman_pseudo_assignment(ordered);
}

void check_block(const BlockRecord& b) {
    if (b.y.size() != 3 || b.a.size() != 3 || b.x.size() != 3)
        fail(ErrorCode::unsupported, "block " + std::to_string(b.block_id) + ": only blocks of three treatments are supported");
    std::vector<int> s = b.a;
    std::sort(s.begin(), s.end());
    if (s != std::vector<int>{1, 2, 3}) fail(ErrorCode::schema, "block " + std::to_string(b.block_id) + " is not a permutation of 1,2,3");
}

}  // namespace

int block_pseudo_assignment(const BlockRecord& block) {
    check_block(block);
    if (has_ties(block.y)) fail(ErrorCode::schema, "block " + std::to_string(block.block_id) + " has tied outcomes");
    return pseudo_of(block.y, block.a);
}

FriedmanPseudoData blocks_to_pseudo(const std::vector<BlockRecord>& blocks) {
    FriedmanPseudoData out;
    for (const BlockRecord& b : blocks) {
        check_block(b);
        if (has_ties(b.y)) {
            ++out.dropped_ties;
            continue;
        }
        out.pseudo_a.push_back(pseudo_of(b.y, b.a));
        out.blocks.push_back(b);
    }
    return out;
}

RunRecord run_i_friedman(const std::vector<BlockRecord>& blocks, const AutoPolicyConfig& config) {
    const FriedmanPseudoData pseudo = blocks_to_pseudo(blocks);
    const std::size_t nb = pseudo.blocks.size();
    if (nb == 0) fail(ErrorCode::schema, "no usable blocks");
    config.validate(nb);
    const std::size_t d = pseudo.blocks.front().x.front().size();
    config.design.validate(d);

    // Subjects flattened block by block.
    const std::size_t n = 3 * nb;
    Eigen::MatrixXd x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    Eigen::VectorXd y(static_cast<Eigen::Index>(n));
    InteractiveRun run;
    for (std::size_t b = 0; b < nb; ++b) {
        const BlockRecord& blk = pseudo.blocks[b];
        MaskedSubject ms;
        ms.id = b;
        ms.y = blk.y[0];
        for (std::size_t j = 0; j < 3; ++j) {
            if (blk.x[j].size() != d) fail(ErrorCode::schema, "covariate dimension differs across blocks");
            y(static_cast<Eigen::Index>(3 * b + j)) = blk.y[j];
            for (std::size_t c = 0; c < d; ++c) x(static_cast<Eigen::Index>(3 * b + j), static_cast<Eigen::Index>(c)) = blk.x[j][c];
            ms.x.push_back(blk.y[j]);
            ms.x.insert(ms.x.end(), blk.x[j].begin(), blk.x[j].end());
        }
        ms.mu = 0.5;
        run.masked.push_back(std::move(ms));
    }
    run.sealed = pseudo.pseudo_a;
    run.support = AssignmentSupport::binary();
    run.alpha = config.alpha;
    run.holdout = config.holdout_size(nb);
    run.cadence = config.cadence(nb);
    run.seed = config.seed;
    run.test = "i-friedman";

    std::vector<std::vector<int>> perms;
    std::vector<int> perm{1, 2, 3};
    do perms.push_back(perm);
    while (std::next_permutation(perm.begin(), perm.end()));

    // Which configs of each block map to pseudo assignment 1.
    std::vector<std::vector<char>> maps_to_one(nb, std::vector<char>(perms.size()));
    for (std::size_t b = 0; b < nb; ++b)
        for (std::size_t c = 0; c < perms.size(); ++c) maps_to_one[b][c] = static_cast<char>(pseudo_of(pseudo.blocks[b].y, perms[c]));

    std::vector<std::string> warnings;
    const RefitFn refit = [&](const BettingSession& s) {
        std::vector<MixtureUnit> units(nb);
        for (std::size_t b = 0; b < nb; ++b) {
            units[b].members = {3 * b, 3 * b + 1, 3 * b + 2};
            units[b].configs = perms;
            units[b].prior.assign(perms.size(), 1.0 / static_cast<double>(perms.size()));
            // A revealed block exposes its full within-block assignment.
            if (s.is_revealed(b)) {
                const auto it = std::find(perms.begin(), perms.end(), pseudo.blocks[b].a);
                units[b].known = static_cast<std::size_t>(it - perms.begin());
            }
        }
        WorkingModelFit fit = fit_mixture_em(x, y, units, {1, 2, 3}, config.design, config.em);
        for (auto& w : fit.warnings)
            if (std::find(warnings.begin(), warnings.end(), w) == warnings.end()) warnings.push_back(std::move(w));
        std::vector<double> q(nb, 0.5);
        for (std::size_t b = 0; b < nb; ++b) {
            double v = 0.0;
            for (std::size_t c = 0; c < perms.size(); ++c)
                if (maps_to_one[b][c]) v += fit.unit_posterior[b][c];
            q[b] = v;
        }
        return q;
    };
    const ChooseFn choose = [&](const BettingSession& s, const std::vector<double>& q) {
        const std::size_t id = select_most_confident(s, q);
        return BetChoice{id, sign_bet(q[id], config.bet_magnitude, s.bounds_for(id)), q[id]};
    };
    RunRecord rec = run_interactive(run, refit, choose);
    rec.warnings = std::move(warnings);
    if (pseudo.dropped_ties > 0)
        rec.warnings.push_back("dropped " + std::to_string(pseudo.dropped_ties) + " blocks with tied outcomes");
    return rec;
}

RunRecord run_i_kruskal_wallis(const Dataset& data, const AutoPolicyConfig& config) {
    data.validate();
    if (data.support != AssignmentSupport::levels(3)) fail(ErrorCode::unsupported, "i-Kruskal-Wallis needs assignments in {1,2,3}");
    for (const Subject& s : data.subjects)
        if (s.mu != 2.0) fail(ErrorCode::unsupported, "i-Kruskal-Wallis needs uniform randomization over {1,2,3}");
    const std::size_t n = data.size();
    config.validate(n);
    config.design.validate(data.covariate_dim());

    InteractiveRun run;
    run.masked = data.masked();
    run.sealed = data.assignments();
    run.support = data.support;
    run.alpha = config.alpha;
    run.holdout = config.holdout_size(n);
    run.cadence = config.cadence(n);
    run.seed = config.seed;
    run.test = "i-kw";

    const double w_mag = 2.0 * config.bet_magnitude;
    std::vector<std::string> warnings;
    const RefitFn refit = [&](const BettingSession& s) {
        std::vector<std::optional<int>> revealed(s.size());
        for (std::size_t i = 0; i < s.size(); ++i) revealed[i] = s.revealed_assignment(i);
        WorkingModelFit fit = fit_em_multiarm(s.subjects(), revealed, 3, config.design, config.em);
        for (auto& w : fit.warnings)
            if (std::find(warnings.begin(), warnings.end(), w) == warnings.end()) warnings.push_back(std::move(w));
        return fit.q;
    };
    const ChooseFn choose = [&](const BettingSession& s, const std::vector<double>& ea) {
        const std::size_t id = select_most_confident(s, ea, 2.0);
        return BetChoice{id, sign_bet(ea[id], w_mag, s.bounds_for(id), 2.0), ea[id]};
    };
    RunRecord rec = run_interactive(run, refit, choose);
    rec.warnings = std::move(warnings);
    return rec;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

int column_suffix(const std::string& header, std::size_t prefix) {
    const std::string digits = header.substr(prefix);
    if (digits.empty() || digits.find_first_not_of("0123456789") != std::string::npos || digits.size() > 6)
        fail(ErrorCode::schema, "bad covariate column '" + header + "'");
    return std::stoi(digits);
}

}  // namespace

std::vector<PairedRecord> read_paired_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) fail(ErrorCode::schema, "empty paired file");
    const auto header = split_csv_line(line);
    int cy1 = -1, cy2 = -1, ca1 = -1, ca2 = -1;
    std::vector<std::pair<int, int>> cx1, cx2;  // (index, column)
    for (int c = 0; c < static_cast<int>(header.size()); ++c) {
        const std::string& h = header[static_cast<std::size_t>(c)];
        if (h == "y1") cy1 = c;
        else if (h == "y2") cy2 = c;
        else if (h == "a1") ca1 = c;
        else if (h == "a2") ca2 = c;
        else if (h.rfind("x1_", 0) == 0) cx1.push_back({column_suffix(h, 3), c});
        else if (h.rfind("x2_", 0) == 0) cx2.push_back({column_suffix(h, 3), c});
        else if (h == "pair_id") continue;
        else fail(ErrorCode::schema, "unknown paired column '" + h + "'");
    }
    if (cy1 < 0 || cy2 < 0 || ca1 < 0 || ca2 < 0) fail(ErrorCode::schema, "paired file needs y1,y2,a1,a2");
    if (cx1.size() != cx2.size()) fail(ErrorCode::schema, "x1_* and x2_* column counts differ");
    std::sort(cx1.begin(), cx1.end());
    std::sort(cx2.begin(), cx2.end());
    std::vector<PairedRecord> out;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto f = split_csv_line(line);
        if (f.size() != header.size()) fail(ErrorCode::schema, "row " + std::to_string(row) + ": wrong field count");
        const std::string ctx = "row " + std::to_string(row);
        PairedRecord p;
        p.pair_id = out.size();
        p.y1 = parse_double(f[static_cast<std::size_t>(cy1)], ctx);
        p.y2 = parse_double(f[static_cast<std::size_t>(cy2)], ctx);
        p.a1 = static_cast<int>(parse_double(f[static_cast<std::size_t>(ca1)], ctx));
        p.a2 = static_cast<int>(parse_double(f[static_cast<std::size_t>(ca2)], ctx));
        for (const auto& [k, c] : cx1) p.x1.push_back(parse_double(f[static_cast<std::size_t>(c)], ctx));
        for (const auto& [k, c] : cx2) p.x2.push_back(parse_double(f[static_cast<std::size_t>(c)], ctx));
        out.push_back(std::move(p));
    }
    return out;
}

std::vector<BlockRecord> read_block_csv(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) fail(ErrorCode::schema, "empty block file");
    const auto header = split_csv_line(line);
    int cb = -1, cy = -1, ca = -1;
    std::vector<std::pair<int, int>> cx;
    for (int c = 0; c < static_cast<int>(header.size()); ++c) {
        const std::string& h = header[static_cast<std::size_t>(c)];
        if (h == "block_id") cb = c;
        else if (h == "y") cy = c;
        else if (h == "a") ca = c;
        else if (h.rfind("x_", 0) == 0) cx.push_back({column_suffix(h, 2), c});
        else fail(ErrorCode::schema, "unknown block column '" + h + "'");
    }
    if (cb < 0 || cy < 0 || ca < 0) fail(ErrorCode::schema, "block file needs block_id,y,a");
    std::sort(cx.begin(), cx.end());
    std::map<std::string, std::size_t> index;
    std::vector<BlockRecord> out;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto f = split_csv_line(line);
        if (f.size() != header.size()) fail(ErrorCode::schema, "row " + std::to_string(row) + ": wrong field count");
        const std::string ctx = "row " + std::to_string(row);
        const std::string& id = f[static_cast<std::size_t>(cb)];
        auto it = index.find(id);
        if (it == index.end()) {
            it = index.emplace(id, out.size()).first;
            BlockRecord b;
            b.block_id = out.size();
            out.push_back(std::move(b));
        }
        BlockRecord& b = out[it->second];
        b.y.push_back(parse_double(f[static_cast<std::size_t>(cy)], ctx));
        b.a.push_back(static_cast<int>(parse_double(f[static_cast<std::size_t>(ca)], ctx)));
        std::vector<double> xv;
        for (const auto& [k, c] : cx) xv.push_back(parse_double(f[static_cast<std::size_t>(c)], ctx));
        b.x.push_back(std::move(xv));
    }
    return out;
}

void write_block_csv(std::ostream& out, const std::vector<BlockRecord>& blocks) {
    const std::size_t d = blocks.empty() || blocks.front().x.empty() ? 0 : blocks.front().x.front().size();
    out << "block_id,y,a";
    for (std::size_t j = 0; j < d; ++j) out << ",x_" << (j + 1);
    out << '\n';
    char buf[40];
    for (const BlockRecord& b : blocks) {
        for (std::size_t j = 0; j < b.y.size(); ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", b.y[j]);
            out << b.block_id << ',' << buf << ',' << b.a[j];
            for (double v : b.x[j]) {
                std::snprintf(buf, sizeof buf, "%.17g", v);
                out << ',' << buf;
            }
            out << '\n';
        }
    }
}

}  // namespace ibet
