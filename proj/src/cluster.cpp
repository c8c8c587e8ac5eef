#include <csim/cluster.hpp>

#include <algorithm>
#include <cstdio>

namespace csim {

Cluster::Cluster(const SoCConfig& c, const KernelImage& image)
    : cfg(c), img(image), fabric(c), global(image.initial_global_memory), hier(c) {
    require_valid(cfg);
    if (!img.program) throw SimError("kernel image has no program");
    if (img.variant != cfg.arch_variant)
        throw SimError(std::string("kernel was built for ") + to_string(img.variant) + " but the config is " +
                       to_string(cfg.arch_variant));
    if (img.precision != cfg.precision) throw SimError("kernel precision does not match the config");
    const uint32_t nw = img.program->num_warps();
    if (nw > cfg.total_warps()) throw SimError("kernel uses more warps than the cluster provides");
    if (img.warp_thread_block.size() != nw) throw SimError("warp_thread_block must cover every warp");
    trackers_.resize(std::max(1u, img.num_thread_blocks));

    switch (cfg.arch_variant) {
        case ArchVariant::TightlyCoupled:
        case ArchVariant::TightlyCoupledDma:
            tc_units_.resize(cfg.cores_per_cluster);
            for (auto& t : tc_units_) t.step_cycles = std::max(1u, 64u / cfg.matrix_cfg.macs_per_unit_per_cycle);
            break;
        case ArchVariant::OperandDecoupled:
            for (uint32_t i = 0; i < cfg.cores_per_cluster; ++i)
                wg_units_.push_back(std::make_unique<WgmmaUnit>(i, cfg));
            break;
        case ArchVariant::Disaggregated:
            for (uint32_t i = 0; i < cfg.matrix_cfg.units_per_scope; ++i)
                dg_units_.push_back(std::make_unique<DisaggUnit>(i, cfg.matrix_cfg, cfg));
            if (cfg.second_unit)
                dg_units_.push_back(
                    std::make_unique<DisaggUnit>(static_cast<uint32_t>(dg_units_.size()), *cfg.second_unit, cfg));
            fabric.set_matrix_units(static_cast<uint32_t>(dg_units_.size()));
            break;
    }
    if (cfg.arch_variant != ArchVariant::TightlyCoupled)
        dma_ = std::make_unique<DmaEngine>(cfg, static_cast<uint32_t>(trackers_.size()));

    for (uint32_t i = 0; i < cfg.cores_per_cluster; ++i) cores_.push_back(std::make_unique<SimtCore>(i, *this));
    warp_core_.resize(nw);
    for (uint32_t g = 0; g < nw; ++g) {
        const uint32_t core = g / cfg.warps_per_core;
        warp_core_[g] = core;
        if (img.warp_thread_block[g] >= trackers_.size()) throw SimError("warp thread block out of range");
        cores_[core]->add_warp(g, img.warp_thread_block[g]);
    }
}

Cluster::~Cluster() = default;

DisaggUnit& Cluster::disagg_unit(uint32_t u) {
    if (u >= dg_units_.size()) throw SimError("no matrix unit " + std::to_string(u));
    return *dg_units_[u];
}

uint32_t Cluster::unit_for_tb(uint32_t tb) const {
    return tb < img.thread_block_unit.size() ? img.thread_block_unit[tb] : 0;
}

MmioResult Cluster::mmio_write(uint32_t warp, uint32_t addr, uint32_t value, uint64_t cycle) {
    const uint32_t tb = thread_block_of(warp);
    if (addr < mmio::kDmaBase) {
        const uint32_t u = addr / mmio::kUnitStride, reg = addr % mmio::kUnitStride;
        if (u >= dg_units_.size()) return MmioResult::Unmapped;
        return dg_units_[u]->mmio_write(reg, value, tb, *this, cycle);
    }
    if (!dma_) return MmioResult::Unmapped;
    const uint32_t ch = (addr - mmio::kDmaBase) / mmio::kDmaStride, reg = (addr - mmio::kDmaBase) % mmio::kDmaStride;
    return dma_->mmio_write(ch, reg, value, *this, cycle);
}

uint32_t Cluster::mmio_read(uint32_t warp, uint32_t addr) const {
    const uint32_t tb = thread_block_of(warp);
    const uint32_t base = addr < mmio::kDmaBase ? mmio::kUnitBase : mmio::kDmaBase;
    const uint32_t idx = (addr - base) / mmio::kUnitStride, reg = (addr - base) % mmio::kUnitStride;
    // Every window exposes the reader's outstanding-operation count.
    if (reg == mmio::kOutstanding) return trackers_.at(tb).outstanding();
    if (addr < mmio::kDmaBase) return idx < dg_units_.size() ? dg_units_[idx]->mmio_read(reg) : 0;
    return dma_ ? dma_->mmio_read(idx, reg) : 0;
}

uint32_t* Cluster::warp_regs(uint32_t warp) {
    const uint32_t core = warp_core_.at(warp);
    return cores_[core]->warps()[warp % cfg.warps_per_core].regs.data();
}

void Cluster::wgmma_complete(uint32_t warp, uint8_t c_reg, uint64_t ready) {
    cores_[warp_core_.at(warp)]->wgmma_complete(warp % cfg.warps_per_core, c_reg, ready);
}

bool Cluster::barrier_arrive(uint32_t warp, const MicroOp& op, uint64_t cycle) {
    if (op.value >= img.barrier_masks.size()) throw SimError("barrier mask index out of range");
    std::vector<uint32_t> released;
    const auto r = barriers.arrive(op.imm, warp, img.barrier_masks[op.value], cycle, released);
    if (r == BarrierUnit::Result::Pending) return true;
    for (uint32_t g : released)
        if (g != warp) cores_[warp_core_.at(g)]->release(g % cfg.warps_per_core, cycle);
    return false;
}

void Cluster::trace(uint64_t cycle, uint32_t core, uint32_t warp, OpKind kind, const char* status) {
    if (trace_mode_ != TraceMode::Events) return;
    char buf[96];
    std::snprintf(buf, sizeof buf, "%llu %u %u %s %s", static_cast<unsigned long long>(cycle), core, warp,
                  to_string(kind), status);
    trace_.emplace_back(buf);
}

void Cluster::record_retire(uint64_t cycle, uint32_t warp, OpKind kind) {
    if (retire_log_) retires_.push_back(RetireRecord{cycle, warp, kind});
}

bool Cluster::units_idle() const {
    for (const auto& u : wg_units_)
        if (u->busy()) return false;
    for (const auto& u : dg_units_)
        if (u->busy()) return false;
    return !dma_ || dma_->idle();
}

RunResult Cluster::run(const RunOptions& opt) {
    trace_mode_ = opt.trace;
    retire_log_ = opt.retire_log;
    if (opt.trace == TraceMode::Fabric) fabric.enable_log(true);

    RunResult res;
    uint64_t cycle = 0;
    uint64_t last_sig = UINT64_MAX, last_change = 0;
    for (;; ++cycle) {
        for (auto& c : cores_) c->issue(cycle);
        for (auto& u : wg_units_) u->tick(*this, cycle);
        for (auto& u : dg_units_) u->tick(*this, cycle);
        if (dma_) dma_->tick(*this, cycle);
        fabric.tick(cycle);
        for (auto& c : cores_) {
            c->retire(cycle);
            res.max_lsq_occupancy = std::max(res.max_lsq_occupancy, c->lsq_used());
        }

        bool done = fabric.idle() && units_idle();
        for (auto& c : cores_) done = done && c->finished();
        if (done) break;

        if ((cycle & 1023) == 0) {
            // Progress signature: fence polls alone do not count as progress.
            const uint64_t sig = ledger.retired_total() - ledger.retired[size_t(OpKind::MmioRead)] + ledger.macs +
                                 fabric.stats().served_requests + ledger.accumulator_access_count +
                                 ledger.dma_total() + ledger.fence_instances;
            if (sig != last_sig) {
                last_sig = sig;
                last_change = cycle;
            } else if (cycle - last_change > opt.stall_limit) {
                res.deadlock = true;
                res.deadlock_reason = "no progress for " + std::to_string(cycle - last_change) + " cycles";
                break;
            }
        }
        if (cycle >= opt.max_cycles) {
            res.deadlock = true;
            res.deadlock_reason = "cycle watchdog expired";
            break;
        }
    }

    ledger.cycles = cycle + 1;
    const FabricStats& fs = fabric.stats();
    ledger.smem_read_bytes = fs.read_bytes;
    ledger.smem_write_bytes = fs.write_bytes;
    ledger.fabric_defer_cycles = fs.defer_cycles;
    ledger.barrier_wait_cycles = barriers.wait_cycles();
    const CacheCounters& cc = hier.counters();
    ledger.l1_accesses = cc.l1_accesses;
    ledger.l2_accesses = cc.l2_accesses;
    ledger.dram_accesses = cc.dram_accesses;
    ledger.fencing_warps = 0;
    for (auto& c : cores_)
        for (auto& w : c->warps()) ledger.fencing_warps += w.ever_fenced ? 1 : 0;

    res.ledger = ledger;
    res.global_memory = global.bytes();
    res.retires = std::move(retires_);
    res.trace = std::move(trace_);
    if (opt.trace == TraceMode::Fabric) res.fabric_log = fabric.log();
    for (const auto& u : dg_units_) {
        UnitStats s;
        s.macs = u->macs();
        s.capacity = u->capacity();
        s.first_active = u->first_active_cycle();
        s.last_active = u->last_active_cycle();
        s.commands = u->commands_completed();
        s.max_acc_accesses_per_cycle = u->max_acc_accesses_per_cycle();
        res.units.push_back(s);
    }
    if (!dg_units_.empty()) res.unit0_spans = dg_units_[0]->command_spans();
    return res;
}

}  // namespace csim
