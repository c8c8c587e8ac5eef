#pragma once

/// @file smem_fabric.hpp
/// @brief Cluster shared memory: two-dimensional banking, wide-request
/// splitting, matrix-priority arbitration and separate read/write paths.

#include <csim/config.hpp>

#include <array>
#include <cstdint>
#include <deque>
#include <stdexcept>
#include <vector>

namespace csim {

enum class ReqClass : uint8_t { Core, Matrix, Dma };
constexpr size_t kNumReqClasses = 3;
const char* to_string(ReqClass c);

class FabricError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class FabricClient {
public:
    virtual ~FabricClient() = default;
    /// Called in serve order. `words` holds read data (reads) or the written data (writes).
    virtual void on_served(uint64_t tag, uint64_t cycle, const uint32_t* words, uint32_t n_words) = 0;
};

constexpr uint32_t kMaxWideWords = 32;

struct MemRequest {
    ReqClass cls = ReqClass::Core;
    uint32_t requester = 0;   // priority key within the class; lower wins
    uint32_t addr = 0;
    uint32_t width = 4;
    bool write = false;
    std::array<uint32_t, kMaxWideWords> data{};
    FabricClient* client = nullptr;
    uint64_t tag = 0;
};

struct Route {
    uint32_t bank = 0;
    uint32_t subbank = 0;
    uint32_t word_offset = 0;   // row within the bank
    bool operator==(const Route&) const = default;
};

struct SubRequest {
    uint64_t parent = 0;
    uint32_t bank = 0;
    uint32_t subbank = 0;
    uint32_t word = 0;   // global word index
};

struct FabricStats {
    std::array<uint64_t, kNumReqClasses> read_bytes{};
    std::array<uint64_t, kNumReqClasses> write_bytes{};
    uint64_t defer_cycles = 0;      // sum over requests of cycles spent deferred
    uint64_t served_requests = 0;

    /// Matrix-unit read bytes (the shared-memory read footprint).
    uint64_t footprint() const { return read_bytes[static_cast<size_t>(ReqClass::Matrix)]; }
    void account(ReqClass cls, bool write, uint64_t bytes);
};

struct ServeRecord {
    uint64_t cycle = 0;
    uint64_t id = 0;
    uint64_t submit_cycle = 0;
    uint32_t queue_len_at_submit = 0;
    ReqClass cls = ReqClass::Core;
    uint32_t requester = 0;
    uint32_t bank = 0;
    uint32_t addr = 0;
    uint32_t width = 0;
    bool write = false;
};

class SmemFabric {
public:
    explicit SmemFabric(const SoCConfig& cfg);
    SmemFabric(uint32_t bytes, uint32_t banks, uint32_t subbanks, uint32_t queue_depth);

    uint32_t banks() const { return banks_; }
    uint32_t subbanks() const { return subbanks_; }
    uint32_t bank_row_bytes() const { return subbanks_ * 4; }
    uint32_t bytes() const { return bytes_; }

    /// word w -> bank (w / subbanks) % banks, subbank w % subbanks.
    Route route(uint32_t addr) const;
    /// Wide request -> one sub-request per word, all in one bank row.
    std::vector<SubRequest> split_wide(const MemRequest& req, uint64_t parent = 0) const;

    /// Free core-queue slots in a bank (cores check before submitting).
    uint32_t core_queue_free(uint32_t bank) const;
    /// Queue a request; it competes for service from this cycle on.
    uint64_t submit(const MemRequest& req, uint64_t cycle);
    /// Arbitrate and serve one cycle.
    void tick(uint64_t cycle);
    bool idle() const { return pending_ == 0; }
    size_t pending() const { return pending_; }

    uint32_t read_word(uint32_t addr) const;
    void write_word(uint32_t addr, uint32_t value);
    void write_bytes(uint32_t addr, const uint8_t* src, size_t n);
    void read_bytes(uint32_t addr, uint8_t* dst, size_t n) const;

    const FabricStats& stats() const { return stats_; }
    void enable_log(bool on) { log_on_ = on; }
    const std::vector<ServeRecord>& log() const { return log_; }
    void clear_log() { log_.clear(); }

    /// Matrix-unit requesters rotate priority every cycle.
    void set_matrix_units(uint32_t n) { n_matrix_units_ = n ? n : 1; }

private:
    struct Pending {
        MemRequest req;
        uint64_t id = 0;
        uint64_t submit_cycle = 0;
        uint32_t queue_len = 0;
        uint32_t mask = 0;   // subbank bitmask
        uint32_t first_word = 0;
        uint32_t n_words = 0;
    };
    struct Bank {
        std::vector<Pending> wide;
        std::deque<Pending> core;
    };

    void serve(Pending& p, uint32_t bank, uint64_t cycle);
    uint32_t wide_rank(const Pending& p, uint64_t cycle) const;

    uint32_t bytes_, banks_, subbanks_, queue_depth_;
    uint32_t n_matrix_units_ = 1;
    std::vector<uint32_t> mem_;
    std::vector<Bank> bank_state_;
    uint64_t next_id_ = 1;
    size_t pending_ = 0;
    FabricStats stats_;
    bool log_on_ = false;
    std::vector<ServeRecord> log_;
    std::array<uint32_t, kMaxWideWords> scratch_{};
};

}  // namespace csim
