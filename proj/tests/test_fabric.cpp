#include "doctest.h"

#include "checks.hpp"

#include <csim/smem_fabric.hpp>

#include <map>

using namespace csim;

namespace {

struct Log : FabricClient {
    std::map<uint64_t, uint64_t> cycle_of;
    std::map<uint64_t, uint32_t> first_word;
    void on_served(uint64_t tag, uint64_t cycle, const uint32_t* words, uint32_t) override {
        cycle_of[tag] = cycle;
        first_word[tag] = words[0];
    }
};

MemRequest req(ReqClass cls, uint32_t addr, uint32_t width, bool write, Log& log, uint64_t tag) {
    MemRequest r;
    r.cls = cls;
    r.addr = addr;
    r.width = width;
    r.write = write;
    r.client = &log;
    r.tag = tag;
    return r;
}

}  // namespace

TEST_SUITE("fabric") {

TEST_CASE("two-dimensional routing") {
    // [TRIVIAL] 4 banks x 8 subbanks of 4-byte words.
    SmemFabric f(1024, 4, 8, 4);
    CHECK(f.route(0) == Route{0, 0, 0});
    CHECK(f.route(32) == Route{1, 0, 0});
    CHECK(f.route(36) == Route{1, 1, 0});
    CHECK(f.route(128) == Route{0, 0, 1});
    CHECK(f.route(1020) == Route{3, 7, 7});
    CHECK_THROWS_AS(f.route(2), FabricError);
    CHECK_THROWS_AS(f.route(1024), FabricError);
}

TEST_CASE("wide requests split into one sub-request per word of a single bank row") {
    SmemFabric f(1024, 4, 8, 4);
    Log log;
    const auto subs = f.split_wide(req(ReqClass::Matrix, 64, 32, false, log, 0), 9);
    REQUIRE(subs.size() == 8);
    for (uint32_t i = 0; i < 8; ++i) {
        CHECK(subs[i].parent == 9);
        CHECK(subs[i].bank == 2);
        CHECK(subs[i].subbank == i);
        CHECK(subs[i].word == 16 + i);
    }
    CHECK(f.split_wide(req(ReqClass::Dma, 8, 8, false, log, 0)).size() == 2);
    CHECK(f.split_wide(req(ReqClass::Dma, 0, 12, false, log, 0)).size() == 3);
    CHECK_THROWS_AS(f.split_wide(req(ReqClass::Dma, 4, 8, false, log, 0)), FabricError);
    CHECK_THROWS_AS(f.split_wide(req(ReqClass::Dma, 4, 12, false, log, 0)), FabricError);
    CHECK_THROWS_AS(f.split_wide(req(ReqClass::Dma, 0, 64, false, log, 0)), FabricError);
    CHECK_THROWS_AS(f.split_wide(req(ReqClass::Dma, 0, 6, false, log, 0)), FabricError);
}

TEST_CASE("core queues are bounded") {
    SmemFabric f(1024, 4, 8, 4);
    Log log;
    for (uint32_t i = 0; i < 4; ++i) f.submit(req(ReqClass::Core, 4 * i, 4, false, log, i), 0);
    CHECK(f.core_queue_free(0) == 0);
    CHECK(f.core_queue_free(1) == 4);
    CHECK_THROWS_AS(f.submit(req(ReqClass::Core, 16, 4, false, log, 9), 0), FabricError);
    CHECK_THROWS_AS(f.submit(req(ReqClass::Core, 0, 8, false, log, 9), 0), FabricError);
}

TEST_CASE("matrix requests win a contested subbank, read and write paths are separate") {
    SmemFabric f(1024, 4, 8, 4);
    f.write_word(0, 11);
    Log log;
    f.submit(req(ReqClass::Core, 0, 4, false, log, 1), 0);
    f.submit(req(ReqClass::Dma, 0, 16, false, log, 2), 0);
    f.submit(req(ReqClass::Matrix, 0, 32, false, log, 3), 0);
    MemRequest w = req(ReqClass::Core, 4, 4, true, log, 4);
    w.data[0] = 22;
    f.submit(w, 0);
    uint64_t cycle = 0;
    while (!f.idle()) f.tick(cycle++);
    CHECK(log.cycle_of[3] == 0);
    CHECK(log.cycle_of[4] == 0);   // write port is free
    CHECK(log.cycle_of[2] == 1);
    CHECK(log.cycle_of[1] == 2);   // DMA holds subbank 0 in cycle 1
    CHECK(f.read_word(4) == 22);
    CHECK(f.stats().footprint() == 32);
}

TEST_CASE("core requests to one word keep submission order") {
    SmemFabric f(1024, 4, 8, 4);
    Log log;
    MemRequest w = req(ReqClass::Core, 40, 4, true, log, 1);
    w.data[0] = 7;
    f.submit(w, 0);
    f.submit(req(ReqClass::Core, 40, 4, false, log, 2), 0);
    uint64_t cycle = 0;
    while (!f.idle()) f.tick(cycle++);
    CHECK(log.first_word[2] == 7);
}

TEST_CASE("randomized fabric properties") {
    // Criterion: 1e5 random streams, zero violations of every property.
    const check::Summary s = check::fuzz_fabric(100000, 20240601);
    CHECK(s.cases == 100000);
    CHECK(s.events > 100000);
    for (const auto& p : check::fabric_properties()) {
        CAPTURE(p);
        REQUIRE(s.violations.count(p) == 1);
        CHECK(s.violations.at(p) == 0);
    }
    for (const auto& e : s.examples) MESSAGE(e);
}

}  // TEST_SUITE
