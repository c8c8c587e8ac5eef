#pragma once

/// @file matrix_units.hpp
/// @brief The four matrix-unit designs and the MMIO-programmed DMA engine.

#include <csim/config.hpp>
#include <csim/metrics.hpp>
#include <csim/smem_fabric.hpp>

#include <array>
#include <cstdint>
#include <deque>
#include <stdexcept>
#include <vector>

namespace csim {

class Cluster;

/// Programming errors detected during simulation (malformed commands, bad addresses).
class SimError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// MMIO map (byte offsets, stable)
// ---------------------------------------------------------------------------
namespace mmio {
constexpr uint32_t kUnitBase = 0x000;
constexpr uint32_t kUnitStride = 0x40;
constexpr uint32_t kDmaBase = 0x100;
constexpr uint32_t kDmaStride = 0x40;

// Matrix unit window
constexpr uint32_t kAAddr = 0x00;
constexpr uint32_t kBAddr = 0x04;
constexpr uint32_t kDAddr = 0x08;
constexpr uint32_t kDims = 0x0C;   // m | n << 10 | k << 20
constexpr uint32_t kLda = 0x10;
constexpr uint32_t kLdb = 0x14;
constexpr uint32_t kCtrl = 0x18;   // [19:0] ldd, bit 24 accumulate, bit 25 b_transpose, [27:26] scratch slot
constexpr uint32_t kGo = 0x1C;
constexpr uint32_t kStatus = 0x20;        // bit 0 busy, [15:8] queued commands
constexpr uint32_t kOutstanding = 0x24;   // async ops outstanding for the reader's thread block

// DMA channel window (one channel per thread block)
constexpr uint32_t kDmaSrc = 0x00;
constexpr uint32_t kDmaDst = 0x04;
constexpr uint32_t kDmaRows = 0x08;
constexpr uint32_t kDmaRowBytes = 0x0C;
constexpr uint32_t kDmaSrcStride = 0x10;
constexpr uint32_t kDmaDstStride = 0x14;
constexpr uint32_t kDmaGo = 0x1C;
constexpr uint32_t kDmaStatus = 0x20;

// Address spaces seen by the matrix unit and the DMA engine
constexpr uint32_t kSpaceMask = 0xC0000000u;
constexpr uint32_t kSmemSpace = 0x00000000u;
constexpr uint32_t kAccumSpace = 0x40000000u;   // + unit << 24 + byte offset
constexpr uint32_t kGlobalSpace = 0x80000000u;  // + byte offset

constexpr uint32_t kCtrlAccumulate = 1u << 24;
constexpr uint32_t kCtrlBTranspose = 1u << 25;
constexpr uint32_t kCtrlSlotShift = 26;

inline uint32_t unit_reg(uint32_t unit, uint32_t reg) { return kUnitBase + unit * kUnitStride + reg; }
inline uint32_t dma_reg(uint32_t tb, uint32_t reg) { return kDmaBase + tb * kDmaStride + reg; }
inline uint32_t accum_addr(uint32_t unit, uint32_t offset) { return kAccumSpace | (unit << 24) | offset; }
inline uint32_t global_addr(uint64_t offset) { return kGlobalSpace | static_cast<uint32_t>(offset); }
inline uint32_t dims(uint32_t m, uint32_t n, uint32_t k) { return m | (n << 10) | (k << 20); }
}  // namespace mmio

enum class TileOp { LoadOperandA, LoadOperandB, Compute, StoreResult, DmaLoad, DmaStore };

struct TileCommand {
    TileOp op = TileOp::Compute;
    uint32_t a_base = 0, b_base = 0, d_base = 0;
    uint32_t m = 0, n = 0, k = 0;
    bool accumulate = false;
    bool b_transpose = false;
    uint32_t lda = 0, ldb = 0, ldd = 0;   // row strides in bytes
    uint32_t slot = 0;                    // scratch half used when D lives in shared memory
    uint32_t tb = 0;
    uint64_t ticket = 0;
};

struct DmaDescriptor {
    uint32_t src = 0, dst = 0;
    uint32_t rows = 0, row_bytes = 0;
    uint32_t src_stride = 0, dst_stride = 0;
    uint32_t tb = 0;
    uint64_t ticket = 0;
};

enum class MmioResult { Accepted, Rejected, Unmapped };

// ---------------------------------------------------------------------------
// Tightly-coupled (Volta / Ampere) unit: set/step execution from the RF
// ---------------------------------------------------------------------------

/// One HMMA step on an 8x8 tile at k index `k`: C[r][c] += A[r][k] * B[k][c].
/// Register layouts (per 8-lane warp):
///   FP16 A reg r = row r, lane l holds k = 2l, 2l+1 (packed halves)
///   FP16 B reg q holds k-row 2q in lanes 0..3 and 2q+1 in lanes 4..7, 2 packed columns per lane
///   FP32 A reg r lane l = A[r][l];  FP32 B reg k lane n = B[k][n]
///   C reg r lane c = C[r][c] (FP32)
void hmma_step(const uint32_t* a_regs, const uint32_t* b_regs, uint32_t* c_regs, uint32_t k, Precision p);

struct TcUnit {
    uint64_t busy_until = 0;
    uint32_t step_cycles = 2;
};

// ---------------------------------------------------------------------------
// Operand-decoupled (Hopper) unit
// ---------------------------------------------------------------------------

struct WgmmaCommand {
    uint32_t warp = 0;   // global warp index
    uint32_t a_base = 0, b_base = 0, lda = 0, ldb = 0;
    uint32_t k = 0;
    uint8_t c_reg = 0;
    bool accumulate = false;
};

class WgmmaUnit : public FabricClient {
public:
    WgmmaUnit(uint32_t id, const SoCConfig& cfg);
    bool busy() const { return active_; }
    /// False while a command is in flight (the warp retries).
    bool initiate(const WgmmaCommand& cmd);
    void tick(Cluster& cl, uint64_t cycle);
    void on_served(uint64_t tag, uint64_t cycle, const uint32_t* words, uint32_t n) override;
    uint64_t backend_stall_cycles() const { return backend_stalls_; }
    uint32_t max_fifo_occupancy() const { return max_fifo_; }
    uint32_t fifo_depth() const { return fifo_depth_; }

private:
    uint32_t id_;
    uint32_t es_, kc_, macs_per_cycle_, fifo_depth_, segs_per_brow_;
    bool fp16_;
    bool active_ = false;
    WgmmaCommand cmd_;
    uint32_t nkb_ = 0;
    // frontend
    uint32_t fe_kb_ = 0, fe_phase_ = 0, fe_idx_ = 0;   // phase 0 = B segments, 1 = A rows
    uint32_t a_inflight_ = 0;
    // operand buffers
    std::vector<std::vector<float>> b_block_;   // 2 buffers, kc x 16
    std::array<uint32_t, 2> b_seg_arrived_{};
    std::array<int32_t, 2> b_block_kb_{{-1, -1}};
    struct ARow {
        uint32_t kb = 0, row = 0;
        bool ready = false;
        std::vector<float> v;
    };
    std::deque<ARow> a_fifo_;
    // backend
    uint32_t be_kb_ = 0, be_row_ = 0;
    uint64_t be_busy_until_ = 0;
    bool be_in_group_ = false;
    std::vector<float> acc_;   // 16 x 16
    uint64_t backend_stalls_ = 0;
    uint32_t max_fifo_ = 0;
    uint64_t done_cycle_ = 0;
};

// ---------------------------------------------------------------------------
// Disaggregated cluster-level unit: MMIO command queue + FSM + accumulator
// ---------------------------------------------------------------------------

class DisaggUnit : public FabricClient {
public:
    DisaggUnit(uint32_t id, const MatrixUnitConfig& mc, const SoCConfig& cfg);

    uint32_t id() const { return id_; }
    const MatrixUnitConfig& config() const { return mc_; }
    uint64_t capacity() const { return mc_.macs_per_unit_per_cycle; }

    MmioResult mmio_write(uint32_t reg, uint32_t value, uint32_t tb, Cluster& cl, uint64_t cycle);
    uint32_t mmio_read(uint32_t reg) const;
    bool busy() const { return active_ || !queue_.empty(); }
    size_t queued() const { return queue_.size(); }

    void tick(Cluster& cl, uint64_t cycle);
    void on_served(uint64_t tag, uint64_t cycle, const uint32_t* words, uint32_t n) override;

    /// Single-banked accumulator port: at most one access per cycle.
    bool acc_port_free(uint64_t cycle) const { return acc_last_cycle_ != cycle; }
    void acc_claim(uint64_t cycle, EventLedger& l);
    float* accumulator() { return acc_.data(); }
    const std::vector<float>& accumulator_words() const { return acc_; }
    uint32_t accumulator_bytes() const { return static_cast<uint32_t>(acc_.size() * 4); }
    uint32_t max_acc_accesses_per_cycle() const { return max_acc_per_cycle_; }

    uint64_t macs() const { return macs_; }
    uint64_t commands_completed() const { return completed_; }
    uint64_t first_active_cycle() const { return first_active_; }
    uint64_t last_active_cycle() const { return last_active_; }
    /// Start/finish cycle of every completed command, for overlap checks.
    const std::vector<std::pair<uint64_t, uint64_t>>& command_spans() const { return spans_; }

private:
    enum class Phase { Idle, Preload, Compute, Drain, Writeback };
    struct BBuf {
        int64_t block = -1;   // (j * nkb + kb)
        uint32_t arrived = 0;
        uint32_t issued = 0;
        std::vector<float> v;   // rows x cols
    };
    struct ARow {
        uint32_t i = 0;
        uint32_t seq = 0;
        bool ready = false;
        std::vector<float> v;   // rows
    };
    struct PendingWrite {
        uint64_t due = 0;
        uint32_t acc_word = 0;
        bool overwrite = false;
        std::vector<float> v;   // cols
    };

    void start_command(Cluster& cl, uint64_t cycle);
    void finish_command(Cluster& cl, uint64_t cycle);
    uint32_t d_acc_word(uint32_t i, uint32_t col) const;
    void issue_b_segment(Cluster& cl, uint64_t cycle, BBuf& buf, int64_t block);
    void tick_compute(Cluster& cl, uint64_t cycle);

    uint32_t id_;
    MatrixUnitConfig mc_;
    uint32_t es_, rows_, cols_, seg_bytes_;
    bool fp16_;
    uint32_t smem_latency_;
    std::array<uint32_t, 16> regs_{};
    std::deque<TileCommand> queue_;
    uint32_t queue_depth_;

    bool active_ = false;
    Phase phase_ = Phase::Idle;
    TileCommand cmd_;
    uint64_t cmd_start_ = 0;
    bool d_in_smem_ = false;
    uint32_t d_acc_base_word_ = 0;   // word offset of D (or scratch) in the accumulator
    uint32_t d_ld_words_ = 0;
    // preload / writeback progress (32-byte chunks of the D tile)
    uint32_t chunk_issued_ = 0, chunk_done_ = 0, chunks_total_ = 0;
    // compute progress
    uint32_t nj_ = 0, nkb_ = 0;
    int64_t cur_block_ = 0;   // block being streamed
    uint32_t stream_i_ = 0;   // next row to stream in the current block
    uint32_t a_next_i_ = 0;   // next A row to request (for cur_block_)
    std::array<BBuf, 2> bbuf_;
    std::deque<ARow> a_fifo_;
    std::deque<PendingWrite> writes_;
    uint32_t a_seq_ = 0;
    std::deque<std::pair<uint32_t, std::array<float, 8>>> preload_arrived_;

    std::vector<float> acc_;
    uint64_t acc_last_cycle_ = UINT64_MAX;
    uint32_t acc_this_cycle_ = 0;
    uint32_t max_acc_per_cycle_ = 0;

    uint64_t macs_ = 0;
    uint64_t completed_ = 0;
    uint64_t first_active_ = UINT64_MAX, last_active_ = 0;
    std::vector<std::pair<uint64_t, uint64_t>> spans_;
};

// ---------------------------------------------------------------------------
// DMA engine: one channel per thread block, shared beat pipeline
// ---------------------------------------------------------------------------

class DmaEngine : public FabricClient {
public:
    DmaEngine(const SoCConfig& cfg, uint32_t channels);

    MmioResult mmio_write(uint32_t tb, uint32_t reg, uint32_t value, Cluster& cl, uint64_t cycle);
    uint32_t mmio_read(uint32_t tb, uint32_t reg) const;
    bool busy(uint32_t tb) const;
    bool idle() const;
    void tick(Cluster& cl, uint64_t cycle);
    void on_served(uint64_t tag, uint64_t cycle, const uint32_t* words, uint32_t n) override;

    static DmaDir direction(const DmaDescriptor& d);
    static constexpr uint32_t kChannelQueueDepth = 4;

private:
    struct Active {
        DmaDescriptor d;
        DmaDir dir = DmaDir::GlobalToSmem;
        uint32_t row = 0, off = 0;   // next beat position
        uint32_t beats_outstanding = 0;
        bool issued_all = false;
        bool error = false;
    };
    struct Beat {
        uint64_t arrival = 0;
        uint32_t channel = 0;
        uint32_t dst = 0;
        uint32_t len = 0;
        std::array<uint8_t, 256> data{};
    };
    struct Channel {
        std::array<uint32_t, 8> regs{};
        std::deque<Active> queue;     // head is in progress
        std::deque<Beat> inflight;    // global reads, delivered in order per channel
        uint64_t last_arrival = 0;
    };

    bool issue_beat(Cluster& cl, uint64_t cycle, uint32_t ch, Active& a, uint32_t budget);
    void submit_smem_writes(Cluster& cl, uint64_t cycle, uint32_t ch, uint32_t smem_addr, const uint8_t* data,
                            uint32_t len);
    void maybe_complete(Cluster& cl, uint64_t cycle, uint32_t ch);

    SoCConfig cfg_;
    Cluster* cl_ = nullptr;   // bound on first use; serves global writes from on_served
    std::vector<Channel> ch_;
    uint32_t inflight_ = 0;   // beats in flight over all channels
    uint32_t rr_ = 0;
    uint32_t row_bytes_;
};

}  // namespace csim
