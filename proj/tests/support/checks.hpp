#pragma once

/// @file checks.hpp
/// @brief Randomized property checkers shared by the unit tests and the acceptance binary.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace csim::check {

struct Summary {
    uint64_t cases = 0;      // streams or kernels
    uint64_t events = 0;     // requests served or operations checked
    std::map<std::string, uint64_t> violations;   // property -> count (every property has an entry)
    std::vector<std::string> examples;            // first few violations, human readable

    uint64_t total_violations() const;
    void fail(const std::string& property, const std::string& what);
};

/// Fabric property names, in report order.
const std::vector<std::string>& fabric_properties();

/// Fuzzes the shared-memory fabric with `streams` random request streams.
/// Every stream runs on a fresh fabric and is checked against an independent
/// routing function and a shadow memory.
Summary fuzz_fabric(uint64_t streams, uint64_t seed);

struct SyncCheckOptions {
    bool fence = true;     // negative control when false: readers skip the fence
    bool barrier = true;   // negative control when false: warps skip the barrier
    uint32_t seeds_per_shape = 8;
    uint64_t seed = 1;
};

/// Sync property names, in report order.
const std::vector<std::string>& sync_properties();

/// Model-checks barriers and fences on small Disaggregated kernels (1..4
/// warps) over every combination of warp count, rounds, DMA count, fence depth
/// and fencing style, with randomized delays. Each run is compared against a
/// sequential (linearized) interpretation of the same kernel.
Summary model_check_sync(const SyncCheckOptions& opt = {});

}  // namespace csim::check
