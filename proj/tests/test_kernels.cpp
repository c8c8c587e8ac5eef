#include "doctest.h"

#include "kernel_emit.hpp"

#include <csim/experiment.hpp>

using namespace csim;

namespace {

CellOutcome gemm(ArchVariant v, uint32_t m, uint32_t n, uint32_t k, uint64_t seed = 1) {
    CellSpec s;
    s.variant = v;
    s.workload = Workload::Gemm;
    s.m = m;
    s.n = n;
    s.k = k;
    s.seed = seed;
    return run_cell(preset(v, default_precision(Workload::Gemm)), s);
}

}  // namespace

TEST_SUITE("kernels") {

TEST_CASE("GEMM is correct and conserves MACs on every variant") {
    for (ArchVariant v : all_variants()) {
        const TileShape t = gemm_block_tile(preset(v, Precision::FP16in_FP32acc));
        const TileShape sizes[] = {{t.m, t.n, t.k}, {t.m, 2 * t.n, 3 * t.k}, {2 * t.m, t.n, t.k}, {256, 256, 128}};
        uint64_t seed = 1;
        for (const TileShape& s : sizes) {
            CAPTURE(to_string(v));
            CAPTURE(s.m);
            CAPTURE(s.n);
            CAPTURE(s.k);
            const CellOutcome o = gemm(v, s.m, s.n, s.k, seed++);
            CHECK(o.run.ledger.macs == uint64_t(s.m) * s.n * s.k);
            CHECK(o.error.max_rel_err <= kGemmTolerance);
            CHECK(o.oracle_pass);
            if (v == ArchVariant::Disaggregated) {
                uint64_t unit_macs = 0;
                for (const auto& u : o.run.units) unit_macs += u.macs;
                CHECK(unit_macs == o.run.ledger.macs);
            }
        }
    }
}

TEST_CASE("register-file traffic reflects where operands and accumulators live") {
    for (ArchVariant v : all_variants()) {
        CAPTURE(to_string(v));
        const CellOutcome o = gemm(v, 128, 128, 128);
        const uint64_t opnd = o.run.ledger.rf_bytes(RfPurpose::Operand);
        const uint64_t acc = o.run.ledger.rf_bytes(RfPurpose::Accumulator);
        CHECK(o.row.rf_operand_bytes == opnd);
        CHECK(o.row.rf_accumulator_bytes == acc);
        switch (v) {
            case ArchVariant::TightlyCoupled:
            case ArchVariant::TightlyCoupledDma:
                CHECK(opnd > 0);
                CHECK(acc > 0);
                break;
            case ArchVariant::OperandDecoupled:
                CHECK(opnd == 0);
                CHECK(acc > 0);
                break;
            case ArchVariant::Disaggregated:
                CHECK(opnd == 0);
                CHECK(acc == 0);
                break;
        }
    }
}

TEST_CASE("sizes that do not tile are rejected before simulation") {
    for (ArchVariant v : all_variants()) {
        const SoCConfig cfg = preset(v, Precision::FP16in_FP32acc);
        CHECK_THROWS_AS(build_gemm_kernel(cfg, 100, 128, 128, 1), MappingError);
        CHECK_THROWS_AS(build_gemm_kernel(cfg, 128, 128, 0, 1), MappingError);
    }
}

TEST_CASE("flash attention matches the taylor2 reference") {
    for (ArchVariant v : {ArchVariant::Disaggregated, ArchVariant::TightlyCoupledDma}) {
        CAPTURE(to_string(v));
        CellSpec s;
        s.variant = v;
        s.workload = Workload::Flash;
        s.seq_len = 128;
        s.head_dim = 64;
        const CellOutcome o = run_cell(preset(v, default_precision(Workload::Flash)), s);
        CHECK(o.error.max_rel_err <= kFlashTolerance);
        CHECK(o.macs_match);
        CHECK(o.run.ledger.macs == 2ull * 128 * 128 * 64);
    }
    const SoCConfig volta = preset(ArchVariant::TightlyCoupled, Precision::FP32in_FP32acc);
    CHECK_THROWS_AS(build_flash_attention_kernel(volta, 128, 64, 1), MappingError);
}

TEST_CASE("identical runs produce byte-identical reports") {
    for (ArchVariant v : {ArchVariant::TightlyCoupledDma, ArchVariant::Disaggregated}) {
        const CellOutcome a = gemm(v, 128, 128, 128, 7), b = gemm(v, 128, 128, 128, 7);
        CHECK(emit_report({a.row}, ReportFormat::Csv) == emit_report({b.row}, ReportFormat::Csv));
        CHECK(a.run.ledger == b.run.ledger);
    }
}

TEST_CASE("two matrix units in parallel match serial execution") {
    const MultiUnitOutcome o = run_multiunit(multiunit_config(), MultiUnitShape{}, 1);
    CHECK(o.oracle_pass);
    CHECK(o.parallel.ledger.macs == o.serial[0].ledger.macs + o.serial[1].ledger.macs);
    CHECK(std::abs(o.util_delta_rel_pct) <= 5.0);
    CHECK(o.energy_overhead_pct <= 10.0);
    REQUIRE(o.rows.size() == 3);
}

TEST_CASE("a barrier that can never complete is reported as a deadlock") {
    const SoCConfig cfg = preset(ArchVariant::Disaggregated, Precision::FP16in_FP32acc);
    std::vector<std::vector<MicroOp>> ops(2);
    detail::Emit e0(ops[0], cfg);
    e0.barrier(0, 0);
    detail::Emit e1(ops[1], cfg);
    e1.alu(3);
    const KernelImage img = make_list_image(cfg, ops, {});
    Cluster cl(cfg, img);
    RunOptions opt;
    opt.stall_limit = 1000;
    const RunResult r = cl.run(opt);
    CHECK(r.deadlock);
    CHECK_FALSE(r.deadlock_reason.empty());
}

TEST_CASE("an out-of-range DMA descriptor is counted and retired") {
    const SoCConfig cfg = preset(ArchVariant::Disaggregated, Precision::FP16in_FP32acc);
    std::vector<std::vector<MicroOp>> ops(1);
    detail::Emit e(ops[0], cfg);
    e.dma(0, mmio::global_addr(0), cfg.smem_bytes, 1, 32, 32, 32);
    e.fence(0, 0);
    const KernelImage img = make_list_image(cfg, ops, std::vector<uint8_t>(64, 0));
    Cluster cl(cfg, img);
    const RunResult r = cl.run();
    CHECK_FALSE(r.deadlock);
    CHECK(r.ledger.dma_errors == 1);
    CHECK(r.ledger.dma_total() == 0);
}

TEST_CASE("a kernel built for another variant is refused") {
    const SoCConfig d = preset(ArchVariant::Disaggregated, Precision::FP16in_FP32acc);
    const SoCConfig h = preset(ArchVariant::OperandDecoupled, Precision::FP16in_FP32acc);
    const KernelImage img = build_gemm_kernel(d, 128, 64, 128, 1);
    CHECK_THROWS_AS(Cluster(h, img), SimError);
}

}  // TEST_SUITE
