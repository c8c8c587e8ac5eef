#pragma once

/// @file isa.hpp
/// @brief Kernel IR: micro-ops, per-warp programs and kernel images.

#include <csim/config.hpp>

#include <bitset>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

namespace csim {

enum class OpKind : uint8_t {
    Alu,
    FpOp,
    LoadGlobal,
    StoreGlobal,
    LoadShared,
    StoreShared,
    HmmaSetStep,
    WgmmaInit,
    WgmmaWait,
    MmioWrite,
    MmioRead,
    Barrier,
    Nop,
};
constexpr size_t kNumOpKinds = 13;

enum class OpTag : uint8_t { None, Producer, Consumer, Softmax, Epilogue, Sync };
constexpr size_t kNumOpTags = 6;

enum class FpFunc : uint8_t { Add, Sub, Mul, Fma, Max, Mov, MovImm, Div };

const char* to_string(OpKind k);
const char* to_string(OpTag t);

/// Registers 0..31 are integer, 32..63 floating point. Each holds one 32-bit word per lane.
constexpr uint8_t kNumRegs = 64;
constexpr uint8_t kFpBase = 32;
constexpr uint8_t kNoReg = 0xFF;

inline constexpr uint8_t fpr(unsigned i) { return static_cast<uint8_t>(kFpBase + i); }

/// addr(lane) = base + (lane % lanes_per_row) * lane_stride + (lane / lanes_per_row) * row_stride
struct AddrPattern {
    uint32_t base = 0;
    int32_t lane_stride = 4;
    uint32_t row_stride = 0;
    uint16_t lanes_per_row = 8;

    uint32_t addr(uint32_t lane) const {
        return base + static_cast<uint32_t>(static_cast<int32_t>(lane % lanes_per_row) * lane_stride) +
               (lane / lanes_per_row) * row_stride;
    }
    bool operator==(const AddrPattern&) const = default;
};

enum OpFlags : uint8_t {
    kFlagAccumulate = 1 << 0,   // WgmmaInit: add into the existing C fragment
    kFlagOperandData = 1 << 1,  // memory op moves matrix operand data through the RF
    kFlagAccumData = 1 << 2,    // memory op moves accumulator data through the RF
    kFlagFence = 1 << 3,        // MmioRead polls until outstanding <= value
};

/// Field use by kind:
///  Alu          dst, src_a, src_b (timing only)
///  FpOp         fp, dst, src_a, src_b, src_c; value = immediate bits for MovImm
///  Load*/Store* dst (load) or src_a (store), addr
///  HmmaSetStep  src_a = A base, src_b = B base, src_c = C base, imm = k index within the tile
///  WgmmaInit    addr.base = A, addr.lane_stride = lda, value = B, addr.row_stride = ldb, dst = C base
///  MmioWrite    imm = MMIO address, value = data
///  MmioRead     imm = MMIO address, value = fence depth when kFlagFence, dst otherwise
///  Barrier      imm = barrier id, value = index into KernelImage::barrier_masks
struct MicroOp {
    OpKind kind = OpKind::Nop;
    OpTag tag = OpTag::None;
    FpFunc fp = FpFunc::Add;
    uint8_t flags = 0;
    uint8_t dst = kNoReg, src_a = kNoReg, src_b = kNoReg, src_c = kNoReg;
    uint16_t rf_read_bytes = 0;
    uint16_t rf_write_bytes = 0;
    uint32_t imm = 0;
    uint32_t value = 0;
    AddrPattern addr;

    bool operator==(const MicroOp&) const = default;
};

struct RfTraffic {
    uint32_t operand_read = 0, operand_write = 0;
    uint32_t accum_read = 0, accum_write = 0;
    uint32_t scalar_read = 0, scalar_write = 0;
    uint32_t read() const { return operand_read + accum_read + scalar_read; }
    uint32_t write() const { return operand_write + accum_write + scalar_write; }
};

/// Register-file bytes implied by an op, split by purpose.
RfTraffic rf_traffic(const MicroOp& op, uint32_t lanes, uint32_t elem_bytes, uint32_t tile_k);

/// Fills rf_read_bytes / rf_write_bytes from rf_traffic.
void annotate_rf(MicroOp& op, uint32_t lanes, uint32_t elem_bytes, uint32_t tile_k);

/// Registers read and written by an op, for the scoreboard.
struct RegUse {
    uint8_t reads[40];
    uint8_t n_reads = 0;
    uint8_t writes[32];
    uint8_t n_writes = 0;
};
RegUse reg_use(const MicroOp& op, Precision p);

constexpr size_t kMaxWarps = 256;
using WarpMask = std::bitset<kMaxWarps>;

/// Lazily generated per-warp instruction streams. A chunk is one loop stage
/// so that large kernels never exist fully materialized.
class KernelProgram {
public:
    virtual ~KernelProgram() = default;
    virtual uint32_t num_warps() const = 0;
    virtual size_t num_chunks(uint32_t warp) const = 0;
    virtual void emit_chunk(uint32_t warp, size_t chunk, std::vector<MicroOp>& out) const = 0;
};

/// Fully materialized program, used for micro-benchmarks and tests.
class ListProgram : public KernelProgram {
public:
    explicit ListProgram(std::vector<std::vector<MicroOp>> per_warp) : ops_(std::move(per_warp)) {}
    uint32_t num_warps() const override { return static_cast<uint32_t>(ops_.size()); }
    size_t num_chunks(uint32_t warp) const override { return ops_.at(warp).empty() ? 0 : 1; }
    void emit_chunk(uint32_t warp, size_t, std::vector<MicroOp>& out) const override {
        out.insert(out.end(), ops_.at(warp).begin(), ops_.at(warp).end());
    }

private:
    std::vector<std::vector<MicroOp>> ops_;
};

struct WarpProgram {
    uint32_t core = 0;
    uint32_t warp = 0;
    std::vector<MicroOp> ops;
};

struct MatrixDesc {
    std::string name;
    uint64_t base = 0;   // byte offset into global memory
    uint32_t rows = 0, cols = 0;
    uint32_t elem_bytes = 4;
    uint32_t row_stride = 0;   // bytes
    bool output = false;
};

struct KernelImage {
    std::string workload;   // "gemm", "flash" or "micro"
    ArchVariant variant = ArchVariant::Disaggregated;
    Precision precision = Precision::FP16in_FP32acc;
    uint32_t m = 0, n = 0, k = 0;   // GEMM extents, or (seq_len, head_dim, seq_len) for attention
    uint64_t seed = 0;
    uint64_t expected_macs = 0;

    std::shared_ptr<const KernelProgram> program;
    std::vector<uint8_t> initial_global_memory;
    std::vector<MatrixDesc> expected_layouts;
    std::vector<WarpMask> barrier_masks;
    std::vector<uint32_t> warp_thread_block;   // per global warp index
    uint32_t num_thread_blocks = 1;
    /// Matrix-unit index each thread block drives (Disaggregated multi-unit runs).
    std::vector<uint32_t> thread_block_unit;
    /// Key-tile width of the streaming softmax (attention only).
    uint32_t attn_block = 0;

    const MatrixDesc* layout(const std::string& name) const;
};

WarpProgram materialize(const KernelImage& img, uint32_t warp, uint32_t warps_per_core);
size_t total_ops(const KernelImage& img);

/// Each barrier id must be reached the same number of times by every warp in
/// its mask and by no other warp. Returns human-readable problems.
std::vector<std::string> check_barriers(const KernelImage& img);

/// Flat binary dump: `<dir>/manifest.json`, `<dir>/ops.bin`, `<dir>/global.bin`.
void write_kernel_image(const KernelImage& img, const std::string& dir, uint32_t warps_per_core);

}  // namespace csim
