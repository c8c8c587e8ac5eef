#include <csim/cluster_sync.hpp>

#include <string>

namespace csim {

BarrierUnit::BarrierUnit() : state_(kMaxBarrierIds) {
    for (uint32_t i = 0; i < kMaxBarrierIds; ++i) state_[i].id = i;
}

BarrierUnit::Result BarrierUnit::arrive(uint32_t id, uint32_t warp, const WarpMask& mask, uint64_t cycle,
                                        std::vector<uint32_t>& released) {
    if (id >= kMaxBarrierIds) throw SyncError("barrier id " + std::to_string(id) + " out of range");
    if (warp >= kMaxWarps || !mask.test(warp))
        throw SyncError("warp " + std::to_string(warp) + " is not a participant of barrier " + std::to_string(id));
    BarrierState& s = state_[id];
    if (s.arrivals.empty()) s.expected = mask;
    else if (s.expected != mask) throw SyncError("barrier " + std::to_string(id) + " reached with a different mask");
    if (s.arrived.test(warp))
        throw SyncError("warp " + std::to_string(warp) + " arrived twice at barrier " + std::to_string(id));
    s.arrived.set(warp);
    s.arrivals.emplace_back(warp, cycle);
    if (s.arrived != s.expected) return Result::Pending;
    for (const auto& [w, t] : s.arrivals) {
        released.push_back(w);
        wait_cycles_ += cycle - t;
    }
    s.arrived.reset();
    s.arrivals.clear();
    ++s.rounds;
    return Result::Released;
}

uint64_t AsyncTracker::issue() {
    done_.push_back(false);
    return base_ + done_.size() - 1;
}

void AsyncTracker::complete(uint64_t ticket) {
    if (ticket < base_ || ticket >= base_ + done_.size())
        throw SyncError("async completion for unknown ticket " + std::to_string(ticket));
    bool& d = done_[ticket - base_];
    if (d) throw SyncError("async ticket " + std::to_string(ticket) + " completed twice");
    d = true;
    ++completed_;
    while (!done_.empty() && done_.front()) {
        done_.pop_front();
        ++base_;
    }
}

}  // namespace csim
