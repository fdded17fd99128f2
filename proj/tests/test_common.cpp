#include "doctest.h"

#include "fdnml/common.hpp"

#include <atomic>
#include <set>
#include <stdexcept>
#include <vector>

using namespace fdnml;

TEST_CASE("derived seeds are deterministic and distinct") {
  CHECK(derive_seed(42, 0) == derive_seed(42, 0));
  CHECK(derive_seed(42, "synth") == derive_seed(42, "synth"));
  std::set<std::uint64_t> seen;
  for (std::uint64_t i = 0; i < 1000; ++i) seen.insert(derive_seed(42, i));
  CHECK(seen.size() == 1000);
  CHECK(derive_seed(42, "synth") != derive_seed(42, "learn"));
  CHECK(derive_seed(1, 0) != derive_seed(2, 0));
}

TEST_CASE("parallel_for visits every index once") {
  for (std::size_t threads : {1u, 2u, 5u}) {
    set_thread_count(threads);
    std::vector<int> hits(1001, 0);
    parallel_for(hits.size(), [&](std::size_t i) { hits[i] += 1; });
    for (int h : hits) CHECK(h == 1);
  }
  set_thread_count(0);
}

TEST_CASE("parallel_for results do not depend on the thread count") {
  auto run = [](std::size_t threads) {
    set_thread_count(threads);
    std::vector<std::uint64_t> out(257);
    parallel_for(out.size(), [&](std::size_t i) { out[i] = derive_seed(7, i); });
    return out;
  };
  CHECK(run(1) == run(4));
  set_thread_count(0);
}

TEST_CASE("parallel_for rethrows worker exceptions") {
  set_thread_count(3);
  CHECK_THROWS_AS(parallel_for(10, [](std::size_t i) {
                    if (i == 7) throw DataError("boom");
                  }),
                  DataError);
  set_thread_count(0);
}

TEST_CASE("parallel_for with zero items is a no-op") {
  std::atomic<int> calls{0};
  parallel_for(0, [&](std::size_t) { ++calls; });
  CHECK(calls == 0);
}

TEST_CASE("stage errors carry the stage name") {
  const StageError e("fracnet", "window 3 failed");
  CHECK(e.stage() == "fracnet");
  CHECK(std::string(e.what()).find("window 3 failed") != std::string::npos);
}
