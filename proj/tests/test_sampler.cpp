#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <map>
#include <set>

#include "reid/errors.hpp"
#include "reid/rng.hpp"
#include "reid/sampler.hpp"

using namespace reid;

namespace {

// Identity i owns a contiguous run of dataset indices.
IdentityIndex make_index(const std::vector<std::size_t>& counts) {
  IdentityIndex index;
  std::size_t next = 0;
  for (std::size_t c : counts) {
    std::vector<std::size_t> ids;
    for (std::size_t j = 0; j < c; ++j) ids.push_back(next++);
    index.push_back(ids);
  }
  return index;
}

std::map<std::size_t, std::size_t> owner_of(const IdentityIndex& index) {
  std::map<std::size_t, std::size_t> owner;
  for (std::size_t id = 0; id < index.size(); ++id)
    for (std::size_t s : index[id]) owner[s] = id;
  return owner;
}

// Identity -> indices it contributed to one batch.
std::map<std::size_t, std::vector<std::size_t>> group(const std::vector<std::size_t>& batch,
                                                     const std::map<std::size_t, std::size_t>& owner) {
  std::map<std::size_t, std::vector<std::size_t>> g;
  for (std::size_t s : batch) g[owner.at(s)].push_back(s);
  return g;
}

}  // namespace

TEST_CASE("batch_size is P*K") {
  CHECK(batch_size(SamplerConfig{4, 8}) == 32);
  CHECK(batch_size(SamplerConfig{2, 2}) == 4);
  CHECK(batch_size(SamplerConfig{6, 8}) == 48);
}

TEST_CASE("config validation") {
  CHECK_THROWS_AS(SamplerConfig({1, 8}).validate(), Error);
  CHECK_THROWS_AS(SamplerConfig({4, 1}).validate(), Error);
  CHECK_NOTHROW(SamplerConfig({2, 2}).validate());
}

TEST_CASE("eight identities and P=4 give two batches covering everyone") {
  const auto index = make_index(std::vector<std::size_t>(8, 10));
  const SamplerConfig cfg{4, 8, 3};
  const auto plan = plan_epoch(index, cfg);
  REQUIRE(plan.batches.size() == 2);
  const auto owner = owner_of(index);
  std::set<std::size_t> seen;
  for (const auto& b : plan.batches) {
    CHECK(b.size() == 32);
    for (const auto& [id, members] : group(b, owner)) {
      seen.insert(id);
      CHECK(members.size() == 8);
      // Enough samples: no repeats within an identity.
      CHECK(std::set<std::size_t>(members.begin(), members.end()).size() == 8);
    }
  }
  CHECK(seen.size() == 8);
}

TEST_CASE("short identity is resampled with replacement") {
  auto counts = std::vector<std::size_t>(4, 10);
  counts[2] = 3;
  const auto index = make_index(counts);
  const auto plan = plan_epoch(index, SamplerConfig{4, 8, 1});
  const auto owner = owner_of(index);
  const auto g = group(plan.batches.at(0), owner);
  REQUIRE(g.count(2) == 1);
  CHECK(g.at(2).size() == 8);
  const std::set<std::size_t> distinct(g.at(2).begin(), g.at(2).end());
  CHECK(distinct.size() <= 3);
  for (std::size_t s : distinct) CHECK(owner.at(s) == 2);
}

TEST_CASE("skip policy drops short identities") {
  auto counts = std::vector<std::size_t>(5, 10);
  counts[0] = 3;
  const auto index = make_index(counts);
  SamplerConfig cfg{2, 4, 5, ReplacementPolicy::SkipIdentity};
  const auto owner = owner_of(index);
  for (std::uint64_t e = 0; e < 10; ++e) {
    const auto plan = plan_epoch(index, cfg, e);
    CHECK(plan.batches.size() == 2);
    for (const auto& b : plan.batches)
      for (std::size_t s : b) CHECK(owner.at(s) != 0);
  }
  counts = {3, 3, 10};
  CHECK_THROWS_AS(plan_epoch(make_index(counts), cfg), Error);
}

TEST_CASE("too few identities") {
  try {
    plan_epoch(make_index({5, 5, 5}), SamplerConfig{4, 2});
    FAIL("expected TooFewIdentities");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::TooFewIdentities);
  }
}

TEST_CASE("every batch has P distinct identities with K samples each") {
  Rng rng(7);
  for (int t = 0; t < 200; ++t) {
    const std::size_t n_ids = 2 + rng.below(30);
    std::vector<std::size_t> counts(n_ids);
    for (auto& c : counts) c = 1 + rng.below(12);
    const std::size_t p = 2 + rng.below(std::min<std::size_t>(n_ids - 1, 6));
    const std::size_t k = 2 + rng.below(7);
    const auto index = make_index(counts);
    const auto owner = owner_of(index);
    const auto plan = plan_epoch(index, SamplerConfig{p, k, rng.next()}, rng.below(100));
    CHECK(plan.batches.size() == (n_ids + p - 1) / p);
    for (const auto& b : plan.batches) {
      CHECK(b.size() == p * k);
      const auto g = group(b, owner);
      CHECK(g.size() == p);
      for (const auto& [id, members] : g) {
        CHECK(members.size() == k);
        if (counts[id] >= k) CHECK(std::set<std::size_t>(members.begin(), members.end()).size() == k);
      }
    }
  }
}

TEST_CASE("each identity appears once per epoch when P divides the count") {
  Rng rng(8);
  for (int t = 0; t < 100; ++t) {
    const std::size_t p = 2 + rng.below(5);
    const std::size_t n_ids = p * (1 + rng.below(6));
    const auto index = make_index(std::vector<std::size_t>(n_ids, 4));
    const auto owner = owner_of(index);
    const auto plan = plan_epoch(index, SamplerConfig{p, 2, rng.next()}, rng.below(50));
    std::map<std::size_t, std::size_t> appearances;
    for (const auto& b : plan.batches)
      for (const auto& [id, members] : group(b, owner)) ++appearances[id];
    CHECK(appearances.size() == n_ids);
    for (const auto& [id, n] : appearances) CHECK(n == 1);
  }
}

TEST_CASE("plans are reproducible and vary by epoch") {
  const auto index = make_index(std::vector<std::size_t>(12, 9));
  const SamplerConfig cfg{4, 4, 42};
  CHECK(plan_epoch(index, cfg, 3).batches == plan_epoch(index, cfg, 3).batches);
  CHECK(plan_epoch(index, cfg, 3).batches != plan_epoch(index, cfg, 4).batches);
  CHECK(plan_epoch(index, cfg, 3).batches != plan_epoch(index, SamplerConfig{4, 4, 43}, 3).batches);
}
