#include <algorithm>
#include <sstream>

#include "doctest.h"
#include "helpers.hpp"
#include "ibet/error.hpp"
#include "ibet/extensions.hpp"

using namespace ibet;

namespace {

// Adjacent transpositions needed to sort an ordering.
int inversions(const std::vector<int>& v) {
    int c = 0;
    for (std::size_t i = 0; i < v.size(); ++i)
        for (std::size_t j = i + 1; j < v.size(); ++j)
            if (v[i] > v[j]) ++c;
    return c;
}

std::vector<BlockRecord> three_arm_blocks(std::size_t nb, double effect, std::uint64_t seed) {
    CounterRng rng(seed);
    std::vector<BlockRecord> out;
    for (std::size_t b = 0; b < nb; ++b) {
        BlockRecord r;
        r.block_id = b;
        r.a = {1, 2, 3};
        rng.shuffle(r.a);
        for (int a : r.a) {
            const double x = rng.normal();
            r.x.push_back({x});
            r.y.push_back(-effect * a + rng.normal());
        }
        out.push_back(r);
    }
    return out;
}

}  // namespace

TEST_CASE("Friedman pseudo assignment maps orderings within one exchange of 1,2,3 to one") {
    std::vector<int> perm{1, 2, 3};
    int ones = 0;
    do {
        const int expected = inversions(perm) <= 1 ? 1 : 0;
        CHECK(friedman_pseudo_assignment(perm) == expected);
        ones += expected;
    } while (std::next_permutation(perm.begin(), perm.end()));
    CHECK(ones == 3);
    CHECK(friedman_pseudo_assignment(std::vector<int>{1, 2, 3}) == 1);
    CHECK(friedman_pseudo_assignment(std::vector<int>{2, 1, 3}) == 1);
    CHECK(friedman_pseudo_assignment(std::vector<int>{1, 3, 2}) == 1);
    CHECK(friedman_pseudo_assignment(std::vector<int>{2, 3, 1}) == 0);
    CHECK(friedman_pseudo_assignment(std::vector<int>{3, 1, 2}) == 0);
    CHECK(friedman_pseudo_assignment(std::vector<int>{3, 2, 1}) == 0);
}

TEST_CASE("block pseudo assignment orders treatments by descending outcome") {
    BlockRecord b;
    b.y = {5.0, 1.0, 3.0};
    b.a = {1, 3, 2};
    b.x = {{0.0}, {0.0}, {0.0}};
    CHECK(block_pseudo_assignment(b) == 1);
    b.a = {3, 1, 2};
    CHECK(block_pseudo_assignment(b) == 0);
    BlockRecord tie = b;
    tie.y = {1.0, 1.0, 2.0};
    auto res = blocks_to_pseudo({b, tie});
    CHECK(res.dropped_ties == 1);
    CHECK(res.pseudo_a == std::vector<int>{0});
    BlockRecord bad = b;
    bad.a = {1, 1, 2};
    CHECK_THROWS_AS(block_pseudo_assignment(bad), Error);
}

TEST_CASE("paired data become one pseudo subject per pair") {
    std::vector<PairedRecord> pairs{{0, 3.0, 1.0, 1, 0, {0.1}, {0.2}}, {1, 2.0, 5.0, 0, 1, {0.3}, {0.4}}};
    const Dataset d = pair_to_pseudo(pairs);
    REQUIRE(d.size() == 2);
    CHECK(d.subjects[0].a == 1);
    CHECK(d.subjects[0].y == 2.0);
    CHECK(d.subjects[0].x == std::vector<double>{0.1, 0.2});
    CHECK(d.subjects[0].mu == 0.5);
    CHECK(d.subjects[1].a == 0);
    CHECK(d.subjects[1].y == -3.0);
    pairs.push_back({2, 1.0, 1.0, 1, 1, {0.0}, {0.0}});
    try {
        pair_to_pseudo(pairs);
        FAIL("equal assignments accepted");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::invalid_pair);
    }
}

TEST_CASE("signed differences drop ties and keep the sign as the assignment") {
    std::vector<PairedRecord> pairs{{0, 3.0, 1.0, 1, 0, {0.1}, {0.2}},
                                    {1, 3.0, 1.0, 0, 1, {0.3}, {0.4}},
                                    {2, 2.0, 2.0, 1, 0, {0.5}, {0.6}}};
    const auto s = pair_to_signed_diff(pairs);
    CHECK(s.dropped_ties == 1);
    REQUIRE(s.data.size() == 2);
    CHECK(s.data.subjects[0].y == 2.0);
    CHECK(s.data.subjects[0].a == 1);
    CHECK(s.data.subjects[1].y == 2.0);
    CHECK(s.data.subjects[1].a == 0);
}

TEST_CASE("i-Friedman rejects a strong ordered effect and stays calm under the null") {
    AutoPolicyConfig c;
    c.seed = 2;
    const auto strong = run_i_friedman(three_arm_blocks(60, 3.0, 4), c);
    CHECK(strong.rejected);
    CHECK(strong.test == "i-friedman");
    const auto null = run_i_friedman(three_arm_blocks(60, 0.0, 5), c);
    CHECK(null.stop_time() <= 60);
    BlockRecord four;
    four.y = {1, 2, 3, 4};
    four.a = {1, 2, 3, 4};
    four.x = {{0}, {0}, {0}, {0}};
    try {
        run_i_friedman({four}, c);
        FAIL("k = 4 accepted");
    } catch (const Error& e) {
        CHECK(e.code() == ErrorCode::unsupported);
    }
}

TEST_CASE("i-Kruskal-Wallis bets in factor units and rejects separated arms") {
    Dataset d;
    d.support = AssignmentSupport::levels(3);
    CounterRng rng(3);
    for (std::size_t i = 0; i < 60; ++i) {
        const int a = static_cast<int>(i % 3) + 1;
        d.subjects.push_back({i, 10.0 * (a - 2) + 0.1 * rng.normal(), a, {rng.normal()}, 2.0});
    }
    AutoPolicyConfig c;
    const auto rec = run_i_kruskal_wallis(d, c);
    CHECK(rec.rejected);
    CHECK(rec.test == "i-kw");
    CHECK(rec.stop_step == 9);
    for (const auto& s : rec.steps) {
        CHECK(std::abs(s.w) == doctest::Approx(0.8));
        CHECK(s.factor == doctest::Approx(1.4));
    }
    CHECK_THROWS_AS(run_i_kruskal_wallis(testutil::separated(30), c), Error);
}

TEST_CASE("paired and block csv readers") {
    std::istringstream paired("pair_id,y1,y2,a1,a2,x1_1,x2_1\n7,1.5,0.5,1,0,0.1,0.2\n8,0.5,1.5,0,1,0.3,0.4\n");
    const auto pairs = read_paired_csv(paired);
    REQUIRE(pairs.size() == 2);
    CHECK(pairs[1].y2 == 1.5);
    CHECK(pairs[1].x2 == std::vector<double>{0.4});
    std::istringstream bad("y1,y2,a1,a2,x1_q\n1,2,1,0,3\n");
    CHECK_THROWS_AS(read_paired_csv(bad), Error);

    const auto blocks = three_arm_blocks(4, 1.0, 9);
    std::ostringstream out;
    write_block_csv(out, blocks);
    std::istringstream in(out.str());
    const auto back = read_block_csv(in);
    REQUIRE(back.size() == 4);
    for (std::size_t b = 0; b < 4; ++b) {
        CHECK(back[b].y == blocks[b].y);
        CHECK(back[b].a == blocks[b].a);
        CHECK(back[b].x == blocks[b].x);
    }
    std::istringstream shuffled("block_id,y,a\nb,1,1\na,2,2\nb,3,2\na,4,1\nb,5,3\na,6,3\n");
    const auto grouped = read_block_csv(shuffled);
    REQUIRE(grouped.size() == 2);
    CHECK(grouped[0].y.size() == 3);
}
