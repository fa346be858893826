#include <doctest.h>

#include "cfseg/fusion.hpp"
#include "oracles.hpp"
#include "support.hpp"

using namespace cfseg;
using test::accumulate_all;
using test::vote;
using test::vote_oracle;

TEST_CASE("counters follow the patch footprint and stay inside the volume") {
  FusionAccumulator acc({10, 8, 6});
  acc.accumulate(OrganId(1), {2, 2, 2}, {3, 3, 3}, std::vector<std::uint8_t>(27, 1));
  CHECK(acc.positive(OrganId(1), 3, 3, 3) == 1);
  CHECK(acc.coverage(OrganId(1), 4, 4, 4) == 1);
  CHECK(acc.coverage(OrganId(1), 5, 4, 4) == 0);
  CHECK(acc.coverage(OrganId(2), 3, 3, 3) == 0);
  acc.accumulate(OrganId(1), {3, 3, 3}, {3, 3, 3}, std::vector<std::uint8_t>(27, 0));
  CHECK(acc.positive(OrganId(1), 3, 3, 3) == 1);
  CHECK(acc.coverage(OrganId(1), 3, 3, 3) == 2);
  // Hanging off the low x edge: only in-bounds voxels are touched.
  FusionAccumulator edge({10, 8, 6});
  edge.accumulate(OrganId(5), {-2, 6, 4}, {4, 4, 4}, std::vector<std::uint8_t>(64, 1));
  Index touched = 0;
  for (Index z = 0; z < 6; ++z)
    for (Index y = 0; y < 8; ++y)
      for (Index x = 0; x < 10; ++x) {
        touched += edge.coverage(OrganId(5), x, y, z);
        CHECK(edge.positive(OrganId(5), x, y, z) <= edge.coverage(OrganId(5), x, y, z));
      }
  CHECK(touched == 2 * 2 * 2);
}

TEST_CASE("accumulate rejects bad input") {
  FusionAccumulator acc({4, 4, 4});
  CHECK_ERROR_CODE(acc.accumulate(OrganId(1), {4, 0, 0}, {2, 2, 2}, std::vector<std::uint8_t>(8, 1)),
                   ErrorCode::kInvalidArgument);
  CHECK_ERROR_CODE(acc.accumulate(OrganId(1), {-2, 0, 0}, {2, 2, 2}, std::vector<std::uint8_t>(8, 1)),
                   ErrorCode::kInvalidArgument);
  CHECK_ERROR_CODE(acc.accumulate(OrganId(1), {0, 0, 0}, {2, 2, 2}, std::vector<std::uint8_t>(7, 1)),
                   ErrorCode::kShapeMismatch);
  CHECK_ERROR_CODE(acc.accumulate(OrganId(1), {0, 0, 0}, {2, 2, 2}, std::vector<std::uint8_t>(8, 2)),
                   ErrorCode::kInvalidArgument);
}

TEST_CASE("hand-counted votes") {
  const Dims d{3, 3, 3};
  const Dims one{1, 1, 1};
  // Organ 6: 3 of 4 positive.
  std::vector<PatchVote> v{vote(6, {1, 1, 1}, one, 1), vote(6, {1, 1, 1}, one, 1), vote(6, {1, 1, 1}, one, 1),
                           vote(6, {1, 1, 1}, one, 0)};
  CHECK(accumulate_all(v, d).at(1, 1, 1) == 6);
  // Organ 2 at 1/3 against organ 3 at 2/3.
  std::vector<PatchVote> w{vote(2, {0, 0, 0}, one, 1), vote(2, {0, 0, 0}, one, 0), vote(2, {0, 0, 0}, one, 0),
                           vote(3, {0, 0, 0}, one, 1), vote(3, {0, 0, 0}, one, 1), vote(3, {0, 0, 0}, one, 0)};
  CHECK(accumulate_all(w, d).at(0, 0, 0) == 3);
  // Covered but never positive, and exactly one half: background.
  std::vector<PatchVote> z{vote(4, {2, 2, 2}, one, 0), vote(4, {2, 2, 2}, one, 0), vote(5, {0, 2, 0}, one, 1),
                           vote(5, {0, 2, 0}, one, 0)};
  CHECK(accumulate_all(z, d).at(2, 2, 2) == 0);
  CHECK(accumulate_all(z, d).at(0, 2, 0) == 0);
  // Equal fractions: more positives win, then the lower id.
  std::vector<PatchVote> t;
  for (int i = 0; i < 2; ++i) t.push_back(vote(9, {0, 0, 0}, one, 1));
  t.push_back(vote(9, {0, 0, 0}, one, 0));
  for (int i = 0; i < 4; ++i) t.push_back(vote(2, {0, 0, 0}, one, 1));
  for (int i = 0; i < 2; ++i) t.push_back(vote(2, {0, 0, 0}, one, 0));
  for (int i = 0; i < 2; ++i) t.push_back(vote(8, {1, 0, 0}, one, 1));
  t.push_back(vote(8, {1, 0, 0}, one, 0));
  for (int i = 0; i < 2; ++i) t.push_back(vote(11, {1, 0, 0}, one, 1));
  t.push_back(vote(11, {1, 0, 0}, one, 0));
  const LabelVolume tl = accumulate_all(t, d);
  CHECK(tl.at(0, 0, 0) == 2);
  CHECK(tl.at(1, 0, 0) == 8);
  CHECK(accumulate_all({}, d).voxels.isZero());
}

TEST_CASE("accumulator, library brute force and test oracle agree on 100 random instances") {
  std::mt19937_64 gen(21);
  for (int trial = 0; trial < 100; ++trial) {
    std::uniform_int_distribution<Index> side(4, 32), pside(1, 12), npatch(0, 30);
    std::uniform_int_distribution<int> organ(1, 4), bit(0, 1);
    const Dims d{side(gen), side(gen), std::min<Index>(side(gen), 16)};
    std::vector<PatchVote> votes;
    const Index n = npatch(gen);
    for (Index i = 0; i < n; ++i) {
      const Dims pd{pside(gen), pside(gen), pside(gen)};
      std::uniform_int_distribution<Index> ox(-pd.x + 1, d.x - 1), oy(-pd.y + 1, d.y - 1), oz(-pd.z + 1, d.z - 1);
      PatchVote v = vote(organ(gen), {ox(gen), oy(gen), oz(gen)}, pd, 0);
      for (auto& p : v.pred) p = static_cast<std::uint8_t>(bit(gen));
      votes.push_back(std::move(v));
    }
    const LabelVolume acc = accumulate_all(votes, d);
    const LabelVolume brute = fuse_brute_force(votes, d);
    const LabelVolume oracle = vote_oracle(votes, d);
    CHECK(acc == brute);
    CHECK(acc == oracle);
  }
}

TEST_CASE("merge equals accumulating everything in one place") {
  std::mt19937_64 gen(22);
  const Dims d{12, 10, 8};
  FusionAccumulator all(d), a(d), b(d);
  for (int i = 0; i < 20; ++i) {
    std::uniform_int_distribution<Index> o(-3, 7);
    std::uniform_int_distribution<int> bit(0, 1), organ(1, 13);
    PatchVote v = vote(organ(gen), {o(gen), o(gen), o(gen)}, {4, 4, 4}, 0);
    for (auto& p : v.pred) p = static_cast<std::uint8_t>(bit(gen));
    all.accumulate(v.organ, v.origin, v.dims, v.pred);
    (i % 2 ? a : b).accumulate(v.organ, v.origin, v.dims, v.pred);
  }
  a.merge(b);
  CHECK(a == all);
  CHECK(a.majority_vote({2, 2, 4}).spacing == Spacing{2, 2, 4});
  FusionAccumulator other({1, 2, 3});
  CHECK_ERROR_CODE(a.merge(other), ErrorCode::kShapeMismatch);
}
