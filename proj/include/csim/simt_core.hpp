#pragma once

/// @file simt_core.hpp
/// @brief In-order multi-warp SIMT core: scheduler, scoreboard, LSQ and retirement.

#include <csim/config.hpp>
#include <csim/isa.hpp>
#include <csim/smem_fabric.hpp>

#include <array>
#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <vector>

namespace csim {

class Cluster;

enum class WarpStatus : uint8_t { Ready, WaitBarrier, WaitFence, Done };
const char* to_string(WarpStatus s);

struct WarpState {
    uint32_t gid = 0;     // cluster-wide warp index
    uint32_t local = 0;   // index within the core
    uint32_t tb = 0;
    WarpStatus status = WarpStatus::Ready;

    std::vector<MicroOp> buf;   // current program chunk
    size_t pc = 0;
    size_t next_chunk = 0;
    size_t num_chunks = 0;

    std::vector<uint32_t> regs;       // kNumRegs * lanes, reg-major
    std::vector<uint64_t> reg_ready;  // cycle each register becomes readable

    struct RobEntry {
        uint64_t done = 0;   // UINT64_MAX until known
        OpKind kind = OpKind::Nop;
        OpTag tag = OpTag::None;
        bool lsq = false;
    };
    std::deque<RobEntry> rob;
    uint64_t rob_base = 0;   // sequence number of rob.front()

    uint32_t mem_inflight = 0;
    uint32_t wgmma_pending = 0;
    uint64_t wake_at = 0;            // fence re-poll cycle
    uint64_t fence_first_poll = 0;   // start of the current fence wait
    bool in_fence = false;
    bool ever_fenced = false;

    bool has_op() const { return pc < buf.size(); }
};

struct TraceEvent {
    uint64_t cycle;
    uint32_t core;
    uint32_t warp;
    OpKind kind;
    const char* status;
};

class SimtCore : public FabricClient {
public:
    SimtCore(uint32_t id, Cluster& cl);

    uint32_t id() const { return id_; }
    void add_warp(uint32_t gid, uint32_t tb);
    std::vector<WarpState>& warps() { return warps_; }
    const std::vector<WarpState>& warps() const { return warps_; }

    /// Next warp the greedy round-robin scheduler would consider.
    std::optional<uint32_t> schedule(uint64_t cycle) const;
    void issue(uint64_t cycle);
    void retire(uint64_t cycle);
    bool finished() const;
    /// Earliest future cycle at which this core can make progress on its own.
    uint64_t next_event(uint64_t cycle) const;

    void on_served(uint64_t tag, uint64_t cycle, const uint32_t* words, uint32_t n) override;
    void wgmma_complete(uint32_t local, uint8_t c_reg, uint64_t ready);
    void release(uint32_t local, uint64_t cycle);

    uint32_t lsq_used() const { return lsq_used_; }

private:
    enum class Outcome { Issued, Stalled, Blocked };
    Outcome try_issue(WarpState& w, uint64_t cycle);
    bool refill(WarpState& w);
    bool operands_ready(const WarpState& w, const MicroOp& op, uint64_t cycle) const;
    void push_rob(WarpState& w, const MicroOp& op, uint64_t done, bool lsq);
    void account_issue(WarpState& w, const MicroOp& op, uint64_t cycle);
    void set_rob_done(WarpState& w, uint64_t seq, uint64_t done);

    bool issue_smem(WarpState& w, const MicroOp& op, uint64_t cycle);
    void issue_global(WarpState& w, const MicroOp& op, uint64_t cycle);
    void exec_fp(WarpState& w, const MicroOp& op);

    uint32_t id_;
    Cluster& cl_;
    const SoCConfig& cfg_;
    uint32_t lanes_;
    std::vector<WarpState> warps_;
    uint32_t last_issued_ = 0;
    uint32_t lsq_used_ = 0;
    uint64_t l1_port_free_ = 0;

    // Shared-memory accesses awaiting fabric service, keyed by slot.
    struct SmemAccess {
        bool active = false;
        uint32_t warp = 0;
        uint64_t rob_seq = 0;
        bool load = false;
        uint8_t dst = kNoReg;
        uint32_t remaining = 0;
        uint64_t last_serve = 0;
        std::array<uint8_t, 32> lane_word{};   // unique-word index per lane
        uint32_t lanes = 0;
    };
    std::vector<SmemAccess> smem_slots_;
    std::vector<uint32_t> free_slots_;
};

}  // namespace csim
