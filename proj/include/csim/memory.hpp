#pragma once

/// @file memory.hpp
/// @brief Global memory image, tag-only L1/L2 caches and the memory coalescer.

#include <csim/config.hpp>

#include <cstdint>
#include <stdexcept>
#include <vector>

namespace csim {

struct LaneRequest {
    uint32_t lane = 0;
    uint64_t addr = 0;
    bool operator==(const LaneRequest&) const = default;
};

struct CoalescedRequest {
    uint64_t line_address = 0;
    uint32_t lane_mask = 0;   // bit per merged lane
    bool write = false;
};

struct CoalesceResult {
    std::vector<CoalescedRequest> merged;
    std::vector<LaneRequest> residue;   // non-word-aligned lanes, serialized one per cycle
};

/// Word-aligned lane requests falling in one line merge into one request, in
/// order of first appearance. Unaligned requests are never merged.
CoalesceResult coalesce(const std::vector<LaneRequest>& lanes, bool write, uint32_t line_bytes);

class SetAssocCache {
public:
    SetAssocCache(uint32_t bytes, uint32_t line_bytes, uint32_t ways);
    /// Returns true on hit. Misses allocate when `allocate` is set.
    bool access(uint64_t addr, bool allocate = true);
    bool probe(uint64_t addr) const;

private:
    uint32_t line_bytes_, ways_, sets_;
    std::vector<uint64_t> tags_;   // sets_ * ways_, UINT64_MAX = invalid
    std::vector<uint64_t> stamp_;
    uint64_t clock_ = 0;
};

class GlobalMemory {
public:
    explicit GlobalMemory(std::vector<uint8_t> image) : data_(std::move(image)) {}
    size_t size() const { return data_.size(); }
    uint32_t read_word(uint64_t addr) const;
    void write_word(uint64_t addr, uint32_t v);
    void read(uint64_t addr, uint8_t* dst, size_t n) const;
    void write(uint64_t addr, const uint8_t* src, size_t n);
    const std::vector<uint8_t>& bytes() const { return data_; }

private:
    void check(uint64_t addr, size_t n) const;
    std::vector<uint8_t> data_;
};

struct CacheCounters {
    uint64_t l1_accesses = 0;
    uint64_t l2_accesses = 0;
    uint64_t dram_accesses = 0;
};

/// Per-core L1 data caches in front of a shared L2. Stores write through
/// without allocating in L1.
class MemoryHierarchy {
public:
    explicit MemoryHierarchy(const SoCConfig& cfg);
    uint32_t load_line(uint32_t core, uint64_t line_addr);
    uint32_t store_line(uint32_t core, uint64_t line_addr);
    /// DMA traffic bypasses L1.
    uint32_t dma_line(uint64_t line_addr, bool write);
    uint32_t line_bytes() const { return line_bytes_; }
    const CacheCounters& counters() const { return counters_; }

private:
    uint32_t l2_path(uint64_t line_addr);
    uint32_t line_bytes_;
    LatencyConfig lat_;
    std::vector<SetAssocCache> l1_;
    SetAssocCache l2_;
    CacheCounters counters_;
};

}  // namespace csim
