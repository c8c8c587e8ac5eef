#include "checks.hpp"

#include "kernel_emit.hpp"

#include <csim/cluster.hpp>
#include <csim/fp16.hpp>
#include <csim/workloads.hpp>

#include <cstdio>
#include <cstring>
#include <random>
#include <sstream>

namespace csim::check {

const std::vector<std::string>& sync_properties() {
    static const std::vector<std::string> p = {"barrier_retire_order", "barrier_data", "fence_outstanding",
                                               "fence_data", "termination"};
    return p;
}

namespace {

using detail::Emit;
using detail::UnitCmd;

constexpr uint32_t kSrcBase = 0;          // global: DMA source blocks
constexpr uint32_t kOutBase = 4096;       // global: per-warp output entries
constexpr uint32_t kOutPerWarp = 4096;
constexpr uint32_t kGlobalBytes = kOutBase + 4 * kOutPerWarp;
constexpr uint32_t kSlotBase = 0;         // shared: DMA destination slots
constexpr uint32_t kUnitA = 1024, kUnitB = 1536;
constexpr uint32_t kExchBase = 4096;      // shared: barrier exchange slots
constexpr uint32_t kEntry = 32;           // 8 lanes x 4 bytes

AddrPattern row(uint32_t base) { return AddrPattern{base, 4, 0, 8}; }
uint32_t src_word(uint32_t block, uint32_t lane) { return 0x1000u + block * 8 + lane; }
float exch_value(uint32_t warp, uint32_t round) { return 1.0f + float(round * 4 + warp); }

struct Shape {
    uint32_t warps, rounds, dmas, depth;
    bool all_fence;   // every warp fences after the barrier (else only the issuing warp, before it)
    uint64_t seed;
};

/// One output entry and the value the sequential interpretation predicts for it.
struct Expect {
    enum Kind { Data, Outstanding, Exchange } kind;
    uint32_t addr;
    uint32_t words[8];
    uint32_t bound;
};

struct Built {
    std::vector<std::vector<MicroOp>> ops;
    std::vector<std::vector<Expect>> expect;
};

Built build(const SoCConfig& cfg, const Shape& s, const SyncCheckOptions& opt) {
    std::mt19937_64 rng(s.seed);
    Built b;
    b.ops.resize(s.warps);
    b.expect.resize(s.warps);
    std::vector<uint32_t> out_next(s.warps, 0);
    auto out_addr = [&](uint32_t w) { return kOutBase + w * kOutPerWarp + kEntry * out_next[w]++; };

    // Async operations in issue order: DMA block index, or -1 for a matrix command.
    std::vector<int32_t> issued;
    for (uint32_t r = 0; r < s.rounds; ++r) {
        // Sequential semantics of the fence: everything except the `depth` most recent ops is done.
        const size_t before = issued.size();
        for (uint32_t i = 0; i < s.dmas; ++i) {
            if (rng() % 3 == 0) issued.push_back(-1);
            issued.push_back(static_cast<int32_t>(r * s.dmas + i));
        }
        const size_t guaranteed = issued.size() > s.depth ? issued.size() - s.depth : 0;

        for (uint32_t w = 0; w < s.warps; ++w) {
            Emit e(b.ops[w], cfg);
            e.alu(static_cast<uint32_t>(rng() % 40));
            e.movimm(fpr(0), exch_value(w, r));
            e.sts(fpr(0), row(kExchBase + (r * 4 + w) * kEntry));
            auto fence_and_report = [&] {
                if (opt.fence) e.fence(0, s.depth);
                MicroOp rd;
                rd.kind = OpKind::MmioRead;
                rd.imm = mmio::unit_reg(0, mmio::kOutstanding);
                rd.dst = 1;
                e.push(rd);
                const uint32_t a = out_addr(w);
                e.stg(1, row(a));
                Expect x{Expect::Outstanding, a, {}, s.depth};
                b.expect[w].push_back(x);
            };
            if (w == 0) {
                for (size_t i = before; i < issued.size(); ++i) {
                    if (issued[i] < 0) {
                        UnitCmd c;
                        c.a = kUnitA;
                        c.b = kUnitB;
                        c.d = mmio::accum_addr(0, 0);
                        c.m = c.n = c.k = 16;
                        c.lda = c.ldb = 32;
                        c.ldd = 64;
                        e.unit_cmd(0, c);
                    } else {
                        const uint32_t blk = static_cast<uint32_t>(issued[i]);
                        e.dma(0, mmio::global_addr(kSrcBase + blk * kEntry), kSlotBase + blk * kEntry, 1, kEntry,
                              kEntry, kEntry);
                    }
                    e.alu(static_cast<uint32_t>(rng() % 8));
                }
                if (!s.all_fence) fence_and_report();
            }
            if (opt.barrier) e.barrier(0, 0);
            if (s.all_fence) fence_and_report();
            e.alu(static_cast<uint32_t>(rng() % 40));
            for (size_t i = 0; i < guaranteed; ++i) {
                if (issued[i] < 0) continue;
                const uint32_t blk = static_cast<uint32_t>(issued[i]);
                e.lds(fpr(1), row(kSlotBase + blk * kEntry));
                const uint32_t a = out_addr(w);
                e.stg(fpr(1), row(a));
                Expect x{Expect::Data, a, {}, 0};
                for (uint32_t l = 0; l < 8; ++l) x.words[l] = src_word(blk, l);
                b.expect[w].push_back(x);
            }
            for (uint32_t v = 0; v < s.warps; ++v) {
                e.lds(fpr(2), row(kExchBase + (r * 4 + v) * kEntry));
                const uint32_t a = out_addr(w);
                e.stg(fpr(2), row(a));
                Expect x{Expect::Exchange, a, {}, 0};
                for (uint32_t l = 0; l < 8; ++l) x.words[l] = f32_bits(exch_value(v, r));
                b.expect[w].push_back(x);
            }
        }
    }
    return b;
}

struct IssueEvent {
    uint64_t cycle;
    OpKind kind;
};

void run_case(Summary& sum, const SoCConfig& cfg, const Shape& s, const SyncCheckOptions& opt) {
    Built b = build(cfg, s, opt);
    std::vector<uint8_t> mem(kGlobalBytes, 0);
    for (uint32_t blk = 0; blk < 64; ++blk)
        for (uint32_t l = 0; l < 8; ++l) {
            const uint32_t v = src_word(blk, l);
            std::memcpy(mem.data() + kSrcBase + blk * kEntry + l * 4, &v, 4);
        }
    const auto expect = b.expect;
    const KernelImage img = make_list_image(cfg, std::move(b.ops), std::move(mem));

    std::ostringstream id;
    id << "warps " << s.warps << " rounds " << s.rounds << " dmas " << s.dmas << " depth " << s.depth
       << (s.all_fence ? " all-fence" : " driver-fence") << " seed " << s.seed;

    Cluster cl(cfg, img);
    RunOptions ro;
    ro.trace = TraceMode::Events;
    ro.retire_log = true;
    ro.stall_limit = 100000;
    const RunResult r = cl.run(ro);
    ++sum.cases;
    if (r.deadlock) {
        sum.fail("termination", id.str() + ": " + r.deadlock_reason);
        return;
    }

    // Issue and retire sequences per warp line up one to one (in-order retirement).
    std::vector<std::vector<IssueEvent>> issues(s.warps);
    std::vector<std::vector<uint64_t>> retires(s.warps);
    for (const std::string& line : r.trace) {
        unsigned long long cyc;
        unsigned core, warp;
        char kind[32], status[32];
        if (std::sscanf(line.c_str(), "%llu %u %u %31s %31s", &cyc, &core, &warp, kind, status) != 5) continue;
        if (std::strcmp(status, "issue") != 0 || warp >= s.warps) continue;
        OpKind k = OpKind::Nop;
        for (size_t i = 0; i < kNumOpKinds; ++i)
            if (std::strcmp(kind, to_string(static_cast<OpKind>(i))) == 0) k = static_cast<OpKind>(i);
        issues[warp].push_back(IssueEvent{cyc, k});
    }
    for (const RetireRecord& rr : r.retires)
        if (rr.warp < s.warps) retires[rr.warp].push_back(rr.cycle);

    // No retirement after barrier j in any warp before the last warp arrived at barrier j.
    std::vector<std::vector<size_t>> barrier_idx(s.warps);
    for (uint32_t w = 0; w < s.warps; ++w) {
        if (issues[w].size() != retires[w].size()) {
            sum.fail("barrier_retire_order", id.str() + ": issue and retire counts differ");
            return;
        }
        for (size_t i = 0; i < issues[w].size(); ++i)
            if (issues[w][i].kind == OpKind::Barrier) barrier_idx[w].push_back(i);
    }
    for (size_t j = 0; opt.barrier && j < barrier_idx[0].size(); ++j) {
        uint64_t last_arrival = 0;
        for (uint32_t w = 0; w < s.warps; ++w)
            last_arrival = std::max(last_arrival, issues[w][barrier_idx[w].at(j)].cycle);
        for (uint32_t w = 0; w < s.warps; ++w)
            for (size_t i = barrier_idx[w][j] + 1; i < retires[w].size(); ++i) {
                ++sum.events;
                if (retires[w][i] <= last_arrival) {
                    sum.fail("barrier_retire_order", id.str() + ": warp " + std::to_string(w) + " retired op " +
                                                         std::to_string(i) + " at cycle " +
                                                         std::to_string(retires[w][i]) + " before barrier " +
                                                         std::to_string(j) + " filled at " +
                                                         std::to_string(last_arrival));
                    break;
                }
            }
    }

    // Observed values against the sequential interpretation.
    for (uint32_t w = 0; w < s.warps; ++w)
        for (const Expect& x : expect[w]) {
            ++sum.events;
            uint32_t got[8];
            std::memcpy(got, r.global_memory.data() + x.addr, sizeof got);
            if (x.kind == Expect::Outstanding) {
                if (got[0] > x.bound)
                    sum.fail("fence_outstanding", id.str() + ": warp " + std::to_string(w) + " saw " +
                                                      std::to_string(got[0]) + " outstanding after fence(" +
                                                      std::to_string(x.bound) + ")");
                continue;
            }
            if (std::memcmp(got, x.words, sizeof got) != 0)
                sum.fail(x.kind == Expect::Data ? "fence_data" : "barrier_data",
                         id.str() + ": warp " + std::to_string(w) + " read a stale value at output " +
                             std::to_string(x.addr));
        }
}

}  // namespace

Summary model_check_sync(const SyncCheckOptions& opt) {
    Summary sum;
    for (const auto& p : sync_properties()) sum.violations[p] = 0;
    const SoCConfig cfg = preset(ArchVariant::Disaggregated, Precision::FP16in_FP32acc);
    uint64_t seed = opt.seed;
    for (uint32_t warps = 1; warps <= 4; ++warps)
        for (uint32_t rounds = 1; rounds <= 3; ++rounds)
            for (uint32_t dmas = 1; dmas <= 3; ++dmas)
                for (uint32_t depth = 0; depth <= 2; ++depth)
                    for (bool all_fence : {false, true})
                        for (uint32_t k = 0; k < opt.seeds_per_shape; ++k)
                            run_case(sum, cfg, Shape{warps, rounds, dmas, depth, all_fence, seed++}, opt);
    return sum;
}

}  // namespace csim::check
