#pragma once

/// @file kernel_emit.hpp
/// @brief Internal helpers shared by the kernel builders.

#include <csim/isa.hpp>
#include <csim/workloads.hpp>

#include <functional>
#include <string>
#include <vector>

namespace csim::detail {

/// Bump allocator for global-memory matrices (256-byte aligned).
struct GlobalLayout {
    uint64_t next = 0;
    std::vector<MatrixDesc> descs;

    uint64_t place(const std::string& name, uint32_t rows, uint32_t cols, uint32_t elem_bytes, bool output);
    const MatrixDesc& get(const std::string& name) const;
    void store(std::vector<uint8_t>& mem, const std::string& name, const Matrix& m) const;
};

struct UnitCmd {
    uint32_t a = 0, b = 0, d = 0;
    uint32_t m = 0, n = 0, k = 0;
    uint32_t lda = 0, ldb = 0, ldd = 0;
    bool accumulate = false;
    bool b_transpose = false;
    uint32_t slot = 0;
};

/// Appends annotated micro-ops. Compiled-code overhead is modelled as one ALU
/// op per memory or MMIO access and two per loop iteration.
struct Emit {
    std::vector<MicroOp>& out;
    uint32_t lanes, es, tile_k;
    OpTag tag = OpTag::None;

    Emit(std::vector<MicroOp>& o, const SoCConfig& cfg);

    void push(MicroOp op);
    void alu(uint32_t n = 1);
    void loop() { alu(2); }
    void fp(FpFunc f, uint8_t d, uint8_t a, uint8_t b = kNoReg, uint8_t c = kNoReg);
    void movimm(uint8_t d, float v);
    void mem(OpKind k, uint8_t reg, const AddrPattern& p, uint8_t flags = 0);
    void lds(uint8_t d, const AddrPattern& p, uint8_t flags = 0) { mem(OpKind::LoadShared, d, p, flags); }
    void sts(uint8_t s, const AddrPattern& p, uint8_t flags = 0) { mem(OpKind::StoreShared, s, p, flags); }
    void ldg(uint8_t d, const AddrPattern& p, uint8_t flags = 0) { mem(OpKind::LoadGlobal, d, p, flags); }
    void stg(uint8_t s, const AddrPattern& p, uint8_t flags = 0) { mem(OpKind::StoreGlobal, s, p, flags); }
    void hmma(uint8_t a, uint8_t b, uint8_t c, uint32_t k);
    void wgmma(uint32_t a, uint32_t lda, uint32_t b, uint32_t ldb, uint8_t c, bool accumulate);
    void wgmma_wait();
    void mmio_write(uint32_t addr, uint32_t value);
    void fence(uint32_t unit, uint32_t depth);
    void barrier(uint32_t id, uint32_t mask_index);
    void dma(uint32_t channel, uint32_t src, uint32_t dst, uint32_t rows, uint32_t row_bytes, uint32_t src_stride,
             uint32_t dst_stride);
    void unit_cmd(uint32_t unit, const UnitCmd& c);
};

/// Program whose chunks are produced on demand by a callback.
class FnProgram : public KernelProgram {
public:
    using EmitFn = std::function<void(uint32_t warp, size_t chunk, Emit& e)>;
    FnProgram(const SoCConfig& cfg, std::vector<size_t> chunks, EmitFn fn)
        : cfg_(cfg), chunks_(std::move(chunks)), fn_(std::move(fn)) {}
    uint32_t num_warps() const override { return static_cast<uint32_t>(chunks_.size()); }
    size_t num_chunks(uint32_t warp) const override { return chunks_.at(warp); }
    void emit_chunk(uint32_t warp, size_t chunk, std::vector<MicroOp>& out) const override {
        Emit e(out, cfg_);
        fn_(warp, chunk, e);
    }

private:
    SoCConfig cfg_;
    std::vector<size_t> chunks_;
    EmitFn fn_;
};

}  // namespace csim::detail
