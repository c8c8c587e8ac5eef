#include "doctest.h"

#include <csim/matrix_units.hpp>
#include <csim/workloads.hpp>

#include <json.hpp>

#include <filesystem>
#include <fstream>

using namespace csim;

namespace {

MicroOp op_of(OpKind k, uint8_t flags = 0) {
    MicroOp op;
    op.kind = k;
    op.flags = flags;
    return op;
}

MicroOp barrier_op(uint32_t id) {
    MicroOp op = op_of(OpKind::Barrier);
    op.imm = id;
    return op;
}

}  // namespace

TEST_SUITE("isa") {

TEST_CASE("register-file traffic is split by purpose") {
    // [TRIVIAL] 8 lanes x 4 bytes per register access.
    const RfTraffic ld = rf_traffic(op_of(OpKind::LoadShared, kFlagOperandData), 8, 2, 16);
    CHECK(ld.operand_write == 32);
    CHECK(ld.scalar_read == 32);
    CHECK(ld.accum_write == 0);

    const RfTraffic st = rf_traffic(op_of(OpKind::StoreGlobal, kFlagAccumData), 8, 2, 16);
    CHECK(st.accum_read == 32);
    CHECK(st.operand_read == 0);

    const RfTraffic plain = rf_traffic(op_of(OpKind::LoadGlobal), 8, 2, 16);
    CHECK(plain.operand_write + plain.accum_write == 0);
    CHECK(plain.scalar_write == 32);

    // One FP16 k-step of an 8x8 fragment: 8 A + 8 B halves, 256 accumulator bytes spread over tile_k steps.
    const RfTraffic h = rf_traffic(op_of(OpKind::HmmaSetStep), 8, 2, 16);
    CHECK(h.operand_read == 32);
    CHECK(h.accum_read == 16);
    CHECK(h.accum_write == 16);

    MicroOp w = op_of(OpKind::WgmmaInit, kFlagAccumulate);
    const RfTraffic wg = rf_traffic(w, 8, 2, 16);
    CHECK(wg.operand_read + wg.operand_write == 0);
    CHECK(wg.accum_write == 1024);

    MicroOp annotated = op_of(OpKind::FpOp);
    annotated.fp = FpFunc::Fma;
    annotate_rf(annotated, 8, 4, 8);
    CHECK(annotated.rf_read_bytes == 96);
    CHECK(annotated.rf_write_bytes == 32);
}

TEST_CASE("scoreboard register sets") {
    MicroOp fma = op_of(OpKind::FpOp);
    fma.fp = FpFunc::Fma;
    fma.dst = fpr(0);
    fma.src_a = fpr(1);
    fma.src_b = fpr(2);
    fma.src_c = fpr(3);
    const RegUse u = reg_use(fma, Precision::FP32in_FP32acc);
    CHECK(u.n_reads == 3);
    CHECK(u.n_writes == 1);
    CHECK(u.writes[0] == fpr(0));

    MicroOp wg = op_of(OpKind::WgmmaInit);
    wg.dst = fpr(0);
    CHECK(reg_use(wg, Precision::FP16in_FP32acc).n_writes == 32);
}

TEST_CASE("static barrier checker") {
    const SoCConfig cfg = preset(ArchVariant::Disaggregated, Precision::FP16in_FP32acc);
    KernelImage good = make_list_image(cfg, {{barrier_op(0), barrier_op(1)}, {barrier_op(0), barrier_op(1)}}, {});
    CHECK(check_barriers(good).empty());

    KernelImage bad = make_list_image(cfg, {{barrier_op(0), barrier_op(0)}, {barrier_op(0)}}, {});
    const auto problems = check_barriers(bad);
    REQUIRE(problems.size() == 1);
    CHECK(problems[0].find("arrives 1 times, expected 2") != std::string::npos);

    MicroOp unknown = barrier_op(0);
    unknown.value = 5;
    KernelImage bad_mask = make_list_image(cfg, {{unknown}}, {});
    CHECK_FALSE(check_barriers(bad_mask).empty());
}

TEST_CASE("every built kernel passes the static barrier checker") {
    for (ArchVariant v : all_variants()) {
        const SoCConfig cfg = preset(v, Precision::FP16in_FP32acc);
        const TileShape t = gemm_block_tile(cfg);
        CAPTURE(to_string(v));
        CHECK(check_barriers(build_gemm_kernel(cfg, t.m, t.n, 2 * t.k, 1)).empty());
    }
    for (ArchVariant v : {ArchVariant::Disaggregated, ArchVariant::TightlyCoupledDma}) {
        const SoCConfig cfg = preset(v, Precision::FP32in_FP32acc);
        CHECK(check_barriers(build_flash_attention_kernel(cfg, 128, 64, 1)).empty());
    }
    CHECK(check_barriers(build_multiunit_kernel(multiunit_config(), MultiUnitShape{}, 1, 3)).empty());
}

TEST_CASE("kernel image dump") {
    const SoCConfig cfg = preset(ArchVariant::Disaggregated, Precision::FP16in_FP32acc);
    const KernelImage img = build_gemm_kernel(cfg, 128, 64, 128, 3);
    const auto dir = std::filesystem::temp_directory_path() / "csim_test_image";
    std::filesystem::remove_all(dir);
    write_kernel_image(img, dir.string(), cfg.warps_per_core);
    std::ifstream f(dir / "manifest.json");
    const auto man = nlohmann::json::parse(f);
    CHECK(man["workload"] == "gemm");
    CHECK(man["expected_macs"] == uint64_t(128) * 64 * 128);
    CHECK(man["warps"].size() == img.program->num_warps());
    uint64_t count = 0;
    for (const auto& w : man["warps"]) count += w["count"].get<uint64_t>();
    CHECK(count == total_ops(img));
    CHECK(std::filesystem::file_size(dir / "ops.bin") == count * sizeof(MicroOp));
    CHECK(std::filesystem::file_size(dir / "global.bin") == img.initial_global_memory.size());
    std::filesystem::remove_all(dir);
}

TEST_CASE("MMIO address helpers") {
    CHECK(mmio::unit_reg(1, mmio::kGo) == 0x5C);
    CHECK(mmio::dma_reg(2, mmio::kDmaGo) == 0x100 + 0x80 + 0x1C);
    CHECK(mmio::accum_addr(1, 0x40) == 0x41000040u);
    CHECK(mmio::global_addr(0x1234) == 0x80001234u);
    CHECK(mmio::dims(128, 64, 256) == (128u | 64u << 10 | 256u << 20));
}

}  // TEST_SUITE
