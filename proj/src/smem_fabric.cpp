#include <csim/smem_fabric.hpp>

#include <algorithm>
#include <cstring>

namespace csim {

const char* to_string(ReqClass c) {
    switch (c) {
        case ReqClass::Core: return "core";
        case ReqClass::Matrix: return "matrix";
        case ReqClass::Dma: return "dma";
    }
    return "?";
}

void FabricStats::account(ReqClass cls, bool write, uint64_t bytes) {
    (write ? write_bytes : read_bytes)[static_cast<size_t>(cls)] += bytes;
}

SmemFabric::SmemFabric(const SoCConfig& cfg)
    : SmemFabric(cfg.smem_bytes, cfg.smem_banks, cfg.smem_subbanks_per_bank, cfg.smem_queue_depth) {}

SmemFabric::SmemFabric(uint32_t bytes, uint32_t banks, uint32_t subbanks, uint32_t queue_depth)
    : bytes_(bytes), banks_(banks), subbanks_(subbanks), queue_depth_(queue_depth) {
    if (banks_ == 0 || subbanks_ == 0 || subbanks_ > kMaxWideWords)
        throw FabricError("fabric geometry: banks >= 1 and 1 <= subbanks <= 32 required");
    mem_.assign(bytes_ / 4, 0);
    bank_state_.resize(banks_);
}

Route SmemFabric::route(uint32_t addr) const {
    if (addr % 4 != 0) throw FabricError("route: address " + std::to_string(addr) + " is not word-aligned");
    if (addr >= bytes_) throw FabricError("route: address " + std::to_string(addr) + " outside shared memory");
    const uint32_t w = addr / 4;
    return Route{(w / subbanks_) % banks_, w % subbanks_, w / (subbanks_ * banks_)};
}

std::vector<SubRequest> SmemFabric::split_wide(const MemRequest& req, uint64_t parent) const {
    if (req.width == 0 || req.width % 4 != 0 || req.width > bank_row_bytes())
        throw FabricError("split_wide: width " + std::to_string(req.width) + " must be 4n and fit one bank row");
    const uint32_t row = bank_row_bytes();
    const bool pow2 = (req.width & (req.width - 1)) == 0;
    const uint32_t align = pow2 ? req.width : row;
    if (req.addr % align != 0 || req.addr / row != (req.addr + req.width - 1) / row)
        throw FabricError("split_wide: base " + std::to_string(req.addr) + " is not aligned to the bank row");
    std::vector<SubRequest> out;
    out.reserve(req.width / 4);
    for (uint32_t off = 0; off < req.width; off += 4) {
        const Route r = route(req.addr + off);
        out.push_back(SubRequest{parent, r.bank, r.subbank, (req.addr + off) / 4});
    }
    return out;
}

uint32_t SmemFabric::core_queue_free(uint32_t bank) const {
    const size_t used = bank_state_[bank].core.size();
    return used >= queue_depth_ ? 0 : static_cast<uint32_t>(queue_depth_ - used);
}

uint64_t SmemFabric::submit(const MemRequest& req, uint64_t cycle) {
    Pending p;
    p.req = req;
    p.id = next_id_++;
    p.submit_cycle = cycle;
    uint32_t bank;
    if (req.cls == ReqClass::Core) {
        if (req.width != 4) throw FabricError("core requests are one word wide");
        const Route r = route(req.addr);
        bank = r.bank;
        p.mask = 1u << r.subbank;
        p.first_word = req.addr / 4;
        p.n_words = 1;
        Bank& b = bank_state_[bank];
        if (b.core.size() >= queue_depth_) throw FabricError("core queue overflow in bank " + std::to_string(bank));
        p.queue_len = static_cast<uint32_t>(b.core.size());
        b.core.push_back(p);
    } else {
        const auto subs = split_wide(req, p.id);
        bank = subs.front().bank;
        for (const auto& s : subs) p.mask |= 1u << s.subbank;
        p.first_word = req.addr / 4;
        p.n_words = req.width / 4;
        Bank& b = bank_state_[bank];
        p.queue_len = static_cast<uint32_t>(b.wide.size());
        b.wide.push_back(p);
    }
    ++pending_;
    return p.id;
}

uint32_t SmemFabric::wide_rank(const Pending& p, uint64_t cycle) const {
    // Matrix units rotate among themselves; DMA shares the class but ranks after them.
    if (p.req.cls == ReqClass::Matrix) {
        const uint32_t rot = static_cast<uint32_t>(cycle % n_matrix_units_);
        return (p.req.requester + n_matrix_units_ - rot) % n_matrix_units_;
    }
    return n_matrix_units_ + p.req.requester;
}

void SmemFabric::serve(Pending& p, uint32_t bank, uint64_t cycle) {
    const uint32_t n = p.n_words;
    if (p.req.write) {
        for (uint32_t i = 0; i < n; ++i) mem_[p.first_word + i] = p.req.data[i];
        if (p.req.client) p.req.client->on_served(p.req.tag, cycle, p.req.data.data(), n);
    } else {
        for (uint32_t i = 0; i < n; ++i) scratch_[i] = mem_[p.first_word + i];
        if (p.req.client) p.req.client->on_served(p.req.tag, cycle, scratch_.data(), n);
    }
    stats_.account(p.req.cls, p.req.write, uint64_t(n) * 4);
    ++stats_.served_requests;
    if (log_on_)
        log_.push_back(ServeRecord{cycle, p.id, p.submit_cycle, p.queue_len, p.req.cls, p.req.requester, bank,
                                   p.req.addr, p.req.width, p.req.write});
    --pending_;
}

void SmemFabric::tick(uint64_t cycle) {
    if (pending_ == 0) return;
    for (uint32_t bi = 0; bi < banks_; ++bi) {
        Bank& b = bank_state_[bi];
        if (b.wide.empty() && b.core.empty()) continue;
        uint32_t rd_used = 0, wr_used = 0;

        if (!b.wide.empty()) {
            if (b.wide.size() > 1)
                std::stable_sort(b.wide.begin(), b.wide.end(), [&](const Pending& x, const Pending& y) {
                    const uint32_t rx = wide_rank(x, cycle), ry = wide_rank(y, cycle);
                    return rx != ry ? rx < ry : x.id < y.id;
                });
            size_t keep = 0;
            for (size_t i = 0; i < b.wide.size(); ++i) {
                Pending& p = b.wide[i];
                uint32_t& used = p.req.write ? wr_used : rd_used;
                if (p.mask & used) {
                    ++stats_.defer_cycles;
                    if (keep != i) b.wide[keep] = std::move(p);
                    ++keep;
                    continue;
                }
                used |= p.mask;
                serve(p, bi, cycle);
            }
            b.wide.resize(keep);
        }

        if (!b.core.empty()) {
            uint32_t blocked = 0;
            for (auto it = b.core.begin(); it != b.core.end();) {
                const uint32_t bit = it->mask;
                uint32_t& used = it->req.write ? wr_used : rd_used;
                if ((blocked & bit) || (used & bit)) {
                    blocked |= bit;
                    ++stats_.defer_cycles;
                    ++it;
                    continue;
                }
                used |= bit;
                serve(*it, bi, cycle);
                it = b.core.erase(it);
            }
        }
    }
}

uint32_t SmemFabric::read_word(uint32_t addr) const {
    if (addr % 4 || addr >= bytes_) throw FabricError("read_word: bad address " + std::to_string(addr));
    return mem_[addr / 4];
}

void SmemFabric::write_word(uint32_t addr, uint32_t value) {
    if (addr % 4 || addr >= bytes_) throw FabricError("write_word: bad address " + std::to_string(addr));
    mem_[addr / 4] = value;
}

void SmemFabric::write_bytes(uint32_t addr, const uint8_t* src, size_t n) {
    if (uint64_t(addr) + n > bytes_) throw FabricError("write_bytes: range outside shared memory");
    std::memcpy(reinterpret_cast<uint8_t*>(mem_.data()) + addr, src, n);
}

void SmemFabric::read_bytes(uint32_t addr, uint8_t* dst, size_t n) const {
    if (uint64_t(addr) + n > bytes_) throw FabricError("read_bytes: range outside shared memory");
    std::memcpy(dst, reinterpret_cast<const uint8_t*>(mem_.data()) + addr, n);
}

}  // namespace csim
