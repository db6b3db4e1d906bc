#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "ibet/dataset.hpp"
#include "ibet/policies.hpp"

namespace ibet {

struct PairedRecord {
    std::size_t pair_id = 0;
    double y1 = 0.0;
    double y2 = 0.0;
    int a1 = 1;
    int a2 = 0;
    std::vector<double> x1;
    std::vector<double> x2;
};

struct BlockRecord {
    std::size_t block_id = 0;
    std::vector<double> y;
    std::vector<int> a;
    std::vector<std::vector<double>> x;
};

/// One pseudo subject per pair: A = (A1 - A2 + 1) / 2, Y = Y1 - Y2, X = (X1, X2), mu = 1/2.
Dataset pair_to_pseudo(const std::vector<PairedRecord>& pairs);

struct SignedDiffData {
    Dataset data;
    std::size_t dropped_ties = 0;
};

/// D = (A1 - A2)(Y1 - Y2); pseudo subject (|D|, 1{D > 0}, (X1, X2)). Pairs with D = 0 are dropped.
SignedDiffData pair_to_signed_diff(const std::vector<PairedRecord>& pairs);

/// Binary encoding of a three-treatment block ordered by descending outcome:
/// orderings within one exchange of (1,2,3) map to 1, the rest to 0.
int friedman_pseudo_assignment(std::span<const int> ordered);

/// Pseudo assignment of a block from its outcomes and assignments.
int block_pseudo_assignment(const BlockRecord& block);

struct FriedmanPseudoData {
    std::vector<BlockRecord> blocks;  // blocks kept after dropping ties
    std::vector<int> pseudo_a;
    std::size_t dropped_ties = 0;
};

FriedmanPseudoData blocks_to_pseudo(const std::vector<BlockRecord>& blocks);

/// Blocks are the betting units; the working model is a per-treatment
/// Gaussian mixture over the 6 within-block permutations.
RunRecord run_i_friedman(const std::vector<BlockRecord>& blocks, const AutoPolicyConfig& config);

/// Three-arm i-bet with factor 1 + w (A/2 - 1). `config.bet_magnitude` is in
/// factor units, so the default 0.4 gives w = 0.8 and factors 1.4 / 1 / 0.6.
RunRecord run_i_kruskal_wallis(const Dataset& data, const AutoPolicyConfig& config);

/// CSV `y1,y2,a1,a2,x1_1..x1_d,x2_1..x2_d`.
std::vector<PairedRecord> read_paired_csv(std::istream& in);
/// CSV `block_id,y,a,x_1..x_d`, rows of one block contiguous or not.
std::vector<BlockRecord> read_block_csv(std::istream& in);
void write_block_csv(std::ostream& out, const std::vector<BlockRecord>& blocks);

}  // namespace ibet
