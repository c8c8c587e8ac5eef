#pragma once

/// @file cluster.hpp
/// @brief One SIMT cluster: cores, shared memory, matrix units, DMA and the cycle loop.

#include <csim/cluster_sync.hpp>
#include <csim/config.hpp>
#include <csim/isa.hpp>
#include <csim/matrix_units.hpp>
#include <csim/memory.hpp>
#include <csim/metrics.hpp>
#include <csim/simt_core.hpp>
#include <csim/smem_fabric.hpp>

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace csim {

enum class TraceMode { None, Events, Fabric };

struct RunOptions {
    TraceMode trace = TraceMode::None;
    uint64_t max_cycles = 2'000'000'000ull;   // watchdog
    /// Cycles without any retirement or unit progress before declaring deadlock.
    uint64_t stall_limit = 1'000'000ull;
    bool retire_log = false;
};

struct RetireRecord {
    uint64_t cycle;
    uint32_t warp;
    OpKind kind;
    bool operator==(const RetireRecord&) const = default;
};

struct UnitStats {
    uint64_t macs = 0;
    uint64_t capacity = 0;   // MACs per cycle
    uint64_t first_active = 0, last_active = 0;
    uint64_t commands = 0;
    uint32_t max_acc_accesses_per_cycle = 0;
};

struct RunResult {
    EventLedger ledger;
    std::vector<uint8_t> global_memory;
    std::vector<RetireRecord> retires;
    std::vector<UnitStats> units;
    std::vector<std::string> trace;
    std::vector<ServeRecord> fabric_log;
    std::vector<std::pair<uint64_t, uint64_t>> unit0_spans;
    uint32_t max_lsq_occupancy = 0;
    bool deadlock = false;
    std::string deadlock_reason;
};

class Cluster {
public:
    Cluster(const SoCConfig& cfg, const KernelImage& img);
    ~Cluster();
    Cluster(const Cluster&) = delete;
    Cluster& operator=(const Cluster&) = delete;

    RunResult run(const RunOptions& opt = {});

    // Shared state used by cores and units.
    const SoCConfig cfg;
    const KernelImage& img;
    SmemFabric fabric;
    GlobalMemory global;
    MemoryHierarchy hier;
    BarrierUnit barriers;
    EventLedger ledger;

    AsyncTracker& tracker(uint32_t tb) { return trackers_.at(tb); }
    DisaggUnit& disagg_unit(uint32_t u);
    TcUnit& tc_unit(uint32_t core) { return tc_units_.at(core); }
    WgmmaUnit& wgmma_unit(uint32_t core) { return *wg_units_.at(core); }

    /// Matrix-unit index driven by a thread block.
    uint32_t unit_for_tb(uint32_t tb) const;

    MmioResult mmio_write(uint32_t warp, uint32_t addr, uint32_t value, uint64_t cycle);
    uint32_t mmio_read(uint32_t warp, uint32_t addr) const;

    uint32_t* warp_regs(uint32_t warp);
    void wgmma_complete(uint32_t warp, uint8_t c_reg, uint64_t ready);
    /// Delivers a barrier arrival; returns true if the warp must wait.
    bool barrier_arrive(uint32_t warp, const MicroOp& op, uint64_t cycle);

    void trace(uint64_t cycle, uint32_t core, uint32_t warp, OpKind kind, const char* status);
    void record_retire(uint64_t cycle, uint32_t warp, OpKind kind);
    uint32_t thread_block_of(uint32_t warp) const { return img.warp_thread_block.at(warp); }

private:
    bool units_idle() const;

    std::vector<AsyncTracker> trackers_;
    std::vector<TcUnit> tc_units_;
    std::vector<std::unique_ptr<WgmmaUnit>> wg_units_;
    std::vector<std::unique_ptr<DisaggUnit>> dg_units_;
    std::unique_ptr<DmaEngine> dma_;
    std::vector<std::unique_ptr<SimtCore>> cores_;
    std::vector<uint32_t> warp_core_;

    TraceMode trace_mode_ = TraceMode::None;
    bool retire_log_ = false;
    std::vector<std::string> trace_;
    std::vector<RetireRecord> retires_;
    uint64_t progress_marker_ = 0;
};

}  // namespace csim
