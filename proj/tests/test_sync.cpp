#include "doctest.h"

#include "checks.hpp"

#include <csim/cluster_sync.hpp>

#include <algorithm>
#include <random>
#include <set>

using namespace csim;

namespace {

WarpMask mask_of(std::initializer_list<uint32_t> warps) {
    WarpMask m;
    for (uint32_t w : warps) m.set(w);
    return m;
}

}  // namespace

TEST_SUITE("sync") {

TEST_CASE("barrier releases every participant on the last arrival") {
    BarrierUnit b;
    const WarpMask m = mask_of({1, 3, 4});
    std::vector<uint32_t> rel;
    CHECK(b.arrive(2, 3, m, 10, rel) == BarrierUnit::Result::Pending);
    CHECK(b.arrive(2, 1, m, 12, rel) == BarrierUnit::Result::Pending);
    CHECK(rel.empty());
    CHECK(b.arrive(2, 4, m, 15, rel) == BarrierUnit::Result::Released);
    CHECK(std::multiset<uint32_t>(rel.begin(), rel.end()) == std::multiset<uint32_t>{1, 3, 4});
    CHECK(b.wait_cycles() == (15 - 10) + (15 - 12));
    CHECK(b.state(2).rounds == 1);
    CHECK(b.state(2).arrived.none());

    // Reusable after release.
    rel.clear();
    CHECK(b.arrive(2, 1, m, 20, rel) == BarrierUnit::Result::Pending);
}

TEST_CASE("barrier misuse is rejected") {
    BarrierUnit b;
    std::vector<uint32_t> rel;
    const WarpMask m = mask_of({0, 1});
    CHECK_THROWS_AS(b.arrive(kMaxBarrierIds, 0, m, 0, rel), SyncError);
    CHECK_THROWS_AS(b.arrive(0, 5, m, 0, rel), SyncError);
    b.arrive(0, 0, m, 0, rel);
    CHECK_THROWS_AS(b.arrive(0, 0, m, 1, rel), SyncError);
    CHECK_THROWS_AS(b.arrive(0, 1, mask_of({0, 1, 2}), 1, rel), SyncError);
    CHECK(b.arrive(1, 0, mask_of({0}), 0, rel) == BarrierUnit::Result::Released);
}

TEST_CASE("async tracker matches an issue-order model") {
    // [DERIVED] model: outstanding = issued - length of the completed prefix.
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 500; ++trial) {
        AsyncTracker t;
        std::vector<bool> done;
        std::vector<uint64_t> open;
        for (int step = 0; step < 60; ++step) {
            if (open.empty() || rng() % 2) {
                const uint64_t ticket = t.issue();
                REQUIRE(ticket == done.size());
                done.push_back(false);
                open.push_back(ticket);
            } else {
                const size_t i = rng() % open.size();
                t.complete(open[i]);
                done[open[i]] = true;
                open.erase(open.begin() + static_cast<std::ptrdiff_t>(i));
            }
            size_t prefix = 0;
            while (prefix < done.size() && done[prefix]) ++prefix;
            const uint32_t model = static_cast<uint32_t>(done.size() - prefix);
            REQUIRE(t.outstanding() == model);
            for (uint32_t d = 0; d < 4; ++d) REQUIRE(t.fence_passes(d) == (model <= d));
            REQUIRE(t.completed() == static_cast<uint64_t>(std::count(done.begin(), done.end(), true)));
            REQUIRE(t.issued() == done.size());
        }
    }
    AsyncTracker t;
    const uint64_t a = t.issue();
    t.complete(a);
    CHECK_THROWS_AS(t.complete(a), SyncError);
    CHECK_THROWS_AS(t.complete(a + 5), SyncError);
}

TEST_CASE("model check: barriers and fences on small kernels") {
    const check::Summary s = check::model_check_sync();
    MESSAGE("kernels: " << s.cases << ", checked events: " << s.events);
    CHECK(s.cases >= 1000);
    for (const auto& p : check::sync_properties()) {
        CAPTURE(p);
        REQUIRE(s.violations.count(p) == 1);
        CHECK(s.violations.at(p) == 0);
    }
    for (const auto& e : s.examples) MESSAGE(e);
}

TEST_CASE("model check detects kernels that skip the fence or the barrier") {
    check::SyncCheckOptions no_fence;
    no_fence.fence = false;
    no_fence.seeds_per_shape = 1;
    const check::Summary f = check::model_check_sync(no_fence);
    CHECK(f.violations.at("fence_data") + f.violations.at("fence_outstanding") > 0);

    check::SyncCheckOptions no_barrier;
    no_barrier.barrier = false;
    no_barrier.seeds_per_shape = 1;
    const check::Summary b = check::model_check_sync(no_barrier);
    CHECK(b.violations.at("barrier_data") > 0);
}

}  // TEST_SUITE
