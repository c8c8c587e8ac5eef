#include <csim/memory.hpp>

#include <cstring>
#include <limits>
#include <string>

namespace csim {

CoalesceResult coalesce(const std::vector<LaneRequest>& lanes, bool write, uint32_t line_bytes) {
    CoalesceResult r;
    for (const auto& l : lanes) {
        if (l.addr % 4 != 0) {
            r.residue.push_back(l);
            continue;
        }
        const uint64_t line = l.addr - l.addr % line_bytes;
        bool merged = false;
        for (auto& m : r.merged) {
            if (m.line_address == line) {
                m.lane_mask |= 1u << l.lane;
                merged = true;
                break;
            }
        }
        if (!merged) r.merged.push_back(CoalescedRequest{line, 1u << l.lane, write});
    }
    return r;
}

SetAssocCache::SetAssocCache(uint32_t bytes, uint32_t line_bytes, uint32_t ways)
    : line_bytes_(line_bytes), ways_(ways), sets_(bytes / (line_bytes * ways)) {
    tags_.assign(size_t(sets_) * ways_, std::numeric_limits<uint64_t>::max());
    stamp_.assign(tags_.size(), 0);
}

bool SetAssocCache::probe(uint64_t addr) const {
    const uint64_t line = addr / line_bytes_;
    const size_t set = line % sets_;
    for (uint32_t w = 0; w < ways_; ++w)
        if (tags_[set * ways_ + w] == line) return true;
    return false;
}

bool SetAssocCache::access(uint64_t addr, bool allocate) {
    const uint64_t line = addr / line_bytes_;
    const size_t set = line % sets_;
    ++clock_;
    size_t victim = set * ways_;
    for (uint32_t w = 0; w < ways_; ++w) {
        const size_t i = set * ways_ + w;
        if (tags_[i] == line) {
            stamp_[i] = clock_;
            return true;
        }
        if (stamp_[i] < stamp_[victim]) victim = i;
    }
    if (allocate) {
        tags_[victim] = line;
        stamp_[victim] = clock_;
    }
    return false;
}

void GlobalMemory::check(uint64_t addr, size_t n) const {
    if (addr + n > data_.size())
        throw std::out_of_range("global memory access at " + std::to_string(addr) + " beyond image of " +
                                std::to_string(data_.size()) + " bytes");
}

uint32_t GlobalMemory::read_word(uint64_t addr) const {
    check(addr, 4);
    uint32_t v;
    std::memcpy(&v, data_.data() + addr, 4);
    return v;
}

void GlobalMemory::write_word(uint64_t addr, uint32_t v) {
    check(addr, 4);
    std::memcpy(data_.data() + addr, &v, 4);
}

void GlobalMemory::read(uint64_t addr, uint8_t* dst, size_t n) const {
    check(addr, n);
    std::memcpy(dst, data_.data() + addr, n);
}

void GlobalMemory::write(uint64_t addr, const uint8_t* src, size_t n) {
    check(addr, n);
    std::memcpy(data_.data() + addr, src, n);
}

MemoryHierarchy::MemoryHierarchy(const SoCConfig& cfg)
    : line_bytes_(cfg.l1_line_bytes), lat_(cfg.latency_cfg), l2_(cfg.l2_bytes, cfg.l1_line_bytes, cfg.l2_ways) {
    for (uint32_t c = 0; c < cfg.cores_per_cluster; ++c) l1_.emplace_back(cfg.l1d_bytes, cfg.l1_line_bytes, cfg.l1_ways);
}

uint32_t MemoryHierarchy::l2_path(uint64_t line_addr) {
    ++counters_.l2_accesses;
    if (l2_.access(line_addr)) return lat_.l2_hit;
    ++counters_.dram_accesses;
    return lat_.l2_hit + lat_.dram;
}

uint32_t MemoryHierarchy::load_line(uint32_t core, uint64_t line_addr) {
    ++counters_.l1_accesses;
    if (l1_.at(core).access(line_addr)) return lat_.l1_hit;
    return lat_.l1_hit + l2_path(line_addr);
}

uint32_t MemoryHierarchy::store_line(uint32_t core, uint64_t line_addr) {
    ++counters_.l1_accesses;
    l1_.at(core).access(line_addr, false);
    l2_path(line_addr);
    return lat_.l1_hit;
}

uint32_t MemoryHierarchy::dma_line(uint64_t line_addr, bool) { return l2_path(line_addr); }

}  // namespace csim
