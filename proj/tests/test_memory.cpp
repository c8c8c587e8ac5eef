#include "doctest.h"

#include <csim/memory.hpp>

#include <random>
#include <set>

using namespace csim;

TEST_SUITE("memory") {

TEST_CASE("coalescing merges word-aligned lanes per line") {
    std::vector<LaneRequest> lanes;
    for (uint32_t l = 0; l < 8; ++l) lanes.push_back({l, 128 + 4 * l});
    auto r = coalesce(lanes, false, 64);
    REQUIRE(r.merged.size() == 1);
    CHECK(r.merged[0].line_address == 128);
    CHECK(r.merged[0].lane_mask == 0xFF);
    CHECK(r.residue.empty());

    lanes.clear();
    for (uint32_t l = 0; l < 8; ++l) lanes.push_back({l, 64u * (7 - l)});
    r = coalesce(lanes, true, 64);
    REQUIRE(r.merged.size() == 8);
    CHECK(r.merged[0].line_address == 448);   // first appearance order
    CHECK(r.merged[0].write);

    lanes = {{0, 0}, {1, 2}, {2, 4}};
    r = coalesce(lanes, false, 64);
    CHECK(r.merged.size() == 1);
    REQUIRE(r.residue.size() == 1);
    CHECK(r.residue[0].lane == 1);
}

TEST_CASE("coalescing property: every aligned lane lands in exactly one request of its line") {
    std::mt19937_64 rng(11);
    for (int it = 0; it < 2000; ++it) {
        std::vector<LaneRequest> lanes;
        for (uint32_t l = 0; l < 8; ++l) lanes.push_back({l, (rng() % 64) * 4 + (rng() % 5 == 0 ? 1 : 0)});
        const auto r = coalesce(lanes, false, 64);
        uint32_t seen = 0;
        std::set<uint64_t> lines;
        for (const auto& m : r.merged) {
            REQUIRE(lines.insert(m.line_address).second);
            REQUIRE((seen & m.lane_mask) == 0);
            seen |= m.lane_mask;
            for (uint32_t l = 0; l < 8; ++l)
                if (m.lane_mask >> l & 1) REQUIRE(lanes[l].addr / 64 * 64 == m.line_address);
        }
        for (const auto& q : r.residue) {
            REQUIRE(q.addr % 4 != 0);
            seen |= 1u << q.lane;
        }
        REQUIRE(seen == 0xFF);
    }
}

TEST_CASE("set-associative cache evicts the least recently used way") {
    SetAssocCache c(2 * 64, 64, 2);   // one set, two ways
    CHECK_FALSE(c.access(0));
    CHECK_FALSE(c.access(64));
    CHECK(c.access(0));
    CHECK_FALSE(c.access(128));   // evicts 64
    CHECK(c.probe(0));
    CHECK_FALSE(c.probe(64));
    CHECK(c.probe(128));
    CHECK_FALSE(c.access(192, false));   // no allocation
    CHECK_FALSE(c.probe(192));
}

TEST_CASE("hierarchy latencies follow the hit level") {
    SoCConfig cfg;
    MemoryHierarchy h(cfg);
    const LatencyConfig& l = cfg.latency_cfg;
    CHECK(h.load_line(0, 0) == l.l1_hit + l.l2_hit + l.dram);
    CHECK(h.load_line(0, 0) == l.l1_hit);
    CHECK(h.load_line(1, 0) == l.l1_hit + l.l2_hit);   // other core's L1 is cold
    CHECK(h.dma_line(0, false) == l.l2_hit);
    CHECK(h.counters().dram_accesses == 1);
}

TEST_CASE("global memory bounds") {
    GlobalMemory g(std::vector<uint8_t>(16, 0));
    g.write_word(12, 0xDEADBEEF);
    CHECK(g.read_word(12) == 0xDEADBEEF);
    CHECK_THROWS(g.read_word(16));
    uint8_t buf[8];
    CHECK_THROWS(g.read(12, buf, 8));
}

}  // TEST_SUITE
