#include "doctest.h"

#include <csim/metrics.hpp>

#include <random>
#include <tuple>

using namespace csim;

namespace {

EventLedger random_ledger(std::mt19937_64& rng) {
    auto r = [&] { return rng() % 100000; };
    EventLedger l;
    l.cycles = 1 + r();
    for (auto& x : l.retired) x = r();
    for (auto& x : l.retired_by_tag) x = r();
    l.issued = r();
    l.alu_lane_ops = r();
    l.fpu_lane_ops = r();
    l.macs = r();
    for (auto& x : l.rf_read_bytes) x = r();
    for (auto& x : l.rf_write_bytes) x = r();
    for (auto& x : l.smem_read_bytes) x = r();
    for (auto& x : l.smem_write_bytes) x = r();
    for (auto& x : l.dma_bytes) x = r();
    l.smem_operand_load_bytes = r();
    l.fence_poll_cycles = r();
    l.fence_instances = r();
    l.fencing_warps = 1 + r() % 4;
    l.accumulator_access_count = r();
    l.mmio_accesses = r();
    l.l1_accesses = r();
    l.l2_accesses = r();
    l.dram_accesses = r();
    return l;
}

EventLedger merged(EventLedger a, const EventLedger& b) {
    a.merge(b);
    return a;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("utilization and derived ratios") {
    // [TRIVIAL] 100 * macs / (capacity * cycles).
    CHECK(utilization(512, 256, 4) == doctest::Approx(50.0));
    CHECK_THROWS_AS(utilization(1, 256, 0), MetricsError);
    CHECK_THROWS_AS(utilization(1, 0, 5), MetricsError);

    EventLedger a, b;
    a.retired[0] = 5;
    b.retired[1] = 100;
    CHECK(instruction_ratio(a, b) == doctest::Approx(0.05));
    CHECK_THROWS_AS(instruction_ratio(b, a = EventLedger{}), MetricsError);

    EventLedger f;
    f.smem_read_bytes[static_cast<size_t>(ReqClass::Matrix)] = 100;
    f.smem_read_bytes[static_cast<size_t>(ReqClass::Core)] = 7;
    f.smem_operand_load_bytes = 20;
    CHECK(footprint(f) == 120);

    f.cycles = 1000;
    f.fencing_warps = 2;
    f.fence_poll_cycles = 100;
    f.fence_instances = 4;
    CHECK(fence_overhead_pct(f) == doctest::Approx(5.0));
    CHECK(fence_mean_cycles(f) == doctest::Approx(25.0));
}

TEST_CASE("ledger merge is commutative and associative") {
    std::mt19937_64 rng(17);
    for (int i = 0; i < 200; ++i) {
        const EventLedger a = random_ledger(rng), b = random_ledger(rng), c = random_ledger(rng);
        REQUIRE(merged(a, b) == merged(b, a));
        REQUIRE(merged(merged(a, b), c) == merged(a, merged(b, c)));
        REQUIRE(merged(a, EventLedger{}) == a);
    }
}

TEST_CASE("energy is linear in the weights and additive over merged ledgers") {
    const auto w = default_energy_weights();
    std::mt19937_64 rng(23);
    for (int i = 0; i < 100; ++i) {
        const EventLedger a = random_ledger(rng), b = random_ledger(rng);
        const EnergyReport ea = energy(a, w), eb = energy(b, w), eab = energy(merged(a, b), w);
        REQUIRE(eab.total == doctest::Approx(ea.total + eb.total));
        for (const auto& cat : EnergyReport::categories())
            REQUIRE(eab.by_category.at(cat) == doctest::Approx(ea.by_category.at(cat) + eb.by_category.at(cat)));

        auto w2 = w;
        for (auto& [k, v] : w2) v *= 3.0;
        REQUIRE(energy(a, w2).total == doctest::Approx(3.0 * ea.total));

        // [DERIVED] total = sum over event classes of count * weight.
        double direct = 0.0;
        for (const auto& [ev, n] : event_counts(a)) direct += double(n) * w.at(ev);
        REQUIRE(ea.total == doctest::Approx(direct));
    }
}

TEST_CASE("energy requires a weight for every observed event class") {
    auto w = default_energy_weights();
    w.erase("mac");
    EventLedger l;
    CHECK_NOTHROW(energy(l, w));
    l.macs = 1;
    CHECK_THROWS_AS(energy(l, w), MetricsError);
}

TEST_CASE("CSV report round-trips") {
    std::mt19937_64 rng(29);
    std::vector<ReportRow> rows;
    const char* variants[] = {"Volta", "Ampere", "Hopper", "Disaggregated"};
    for (const char* v : variants)
        rows.push_back(make_row(v, "gemm", "256x256x256", 1, random_ledger(rng), 256, default_energy_weights(),
                                1.5e-5, true));
    const std::string csv = emit_report(rows, ReportFormat::Csv);
    const auto back = parse_report_csv(csv);
    REQUIRE(back.size() == rows.size());
    CHECK(emit_report(back, ReportFormat::Csv) == csv);
    for (size_t i = 0; i < rows.size(); ++i) {
        CHECK(back[i].variant == rows[i].variant);
        CHECK(back[i].cycles == rows[i].cycles);
        CHECK(back[i].retired_instructions == rows[i].retired_instructions);
        CHECK(back[i].utilization_pct == doctest::Approx(rows[i].utilization_pct).epsilon(1e-4));
        CHECK(back[i].oracle_pass);
    }
    CHECK_THROWS_AS(parse_report_csv("a,b\n1,2\n"), MetricsError);
    CHECK_THROWS_AS(parse_report_csv(""), MetricsError);
    CHECK_THROWS_AS(emit_report({}, ReportFormat::Csv), MetricsError);
}

TEST_CASE("normalized comparison") {
    ReportRow v, d;
    v.workload = d.workload = "gemm";
    v.size = d.size = "256x256x256";
    v.retired_instructions = 1000;
    d.retired_instructions = 5;
    v.smem_footprint_bytes = 300;
    d.smem_footprint_bytes = 100;
    // Long and short variant names are interchangeable.
    for (auto [vn, dn, base] : {std::tuple{"Volta", "Disaggregated", "volta"}, std::tuple{"volta", "disagg", "Volta"}}) {
        v.variant = vn;
        d.variant = dn;
        const std::string out = compare_reports({v, d}, base, ReportFormat::Csv);
        CHECK(out.find(std::string("gemm,256x256x256,") + dn + ",0.00,0.0050,1.00") != std::string::npos);
        CHECK(out.find(std::string("gemm,256x256x256,") + vn + ",0.00,1.0000,3.00") != std::string::npos);
    }
    CHECK_THROWS_AS(compare_reports({v}, "volta", ReportFormat::Csv), MetricsError);
}

}  // TEST_SUITE
