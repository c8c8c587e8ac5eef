#pragma once

/// @file cluster_sync.hpp
/// @brief Cluster-wide barrier synchronizer and per-thread-block async-op tracking.

#include <csim/isa.hpp>

#include <cstdint>
#include <deque>
#include <stdexcept>
#include <vector>

namespace csim {

class SyncError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

constexpr uint32_t kMaxBarrierIds = 32;

struct BarrierState {
    uint32_t id = 0;
    WarpMask expected;
    WarpMask arrived;
    std::vector<std::pair<uint32_t, uint64_t>> arrivals;   // (warp, cycle)
    uint64_t rounds = 0;
};

class BarrierUnit {
public:
    enum class Result { Pending, Released };

    BarrierUnit();

    /// Records the arrival of `warp`. When the last participant arrives every
    /// participant is appended to `released` and the barrier resets.
    Result arrive(uint32_t id, uint32_t warp, const WarpMask& mask, uint64_t cycle, std::vector<uint32_t>& released);

    const BarrierState& state(uint32_t id) const { return state_.at(id); }
    uint64_t wait_cycles() const { return wait_cycles_; }

private:
    std::vector<BarrierState> state_;
    uint64_t wait_cycles_ = 0;
};

/// Issue-ordered FIFO of asynchronous operations (matrix commands and DMA
/// transfers) for one thread block. outstanding = issued - completed prefix,
/// so fence(d) passes iff everything except the d most recent ops is done.
class AsyncTracker {
public:
    uint64_t issue();
    void complete(uint64_t ticket);
    uint32_t outstanding() const { return static_cast<uint32_t>(done_.size()); }
    bool fence_passes(uint32_t depth) const { return outstanding() <= depth; }
    uint64_t issued() const { return base_ + done_.size(); }
    uint64_t completed() const { return completed_; }

private:
    uint64_t base_ = 0;   // ticket of done_.front()
    std::deque<bool> done_;
    uint64_t completed_ = 0;
};

}  // namespace csim
