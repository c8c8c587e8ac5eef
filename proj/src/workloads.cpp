#include <csim/fp16.hpp>
#include <csim/matrix_units.hpp>
#include <csim/workloads.hpp>
#include "kernel_emit.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

namespace csim {

// ===========================================================================
// Matrices, inputs and oracles
// ===========================================================================

Matrix Matrix::identity(uint32_t n) {
    Matrix m(n, n);
    for (uint32_t i = 0; i < n; ++i) m.at(i, i) = 1.0f;
    return m;
}

Matrix random_matrix(uint32_t rows, uint32_t cols, std::mt19937_64& rng, bool fp16) {
    Matrix m(rows, cols);
    for (auto& x : m.v) {
        // 53 random bits mapped onto [-1, 1]; std::uniform_real_distribution is
        // implementation-defined, this mapping is not.
        const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
        const float f = static_cast<float>(2.0 * u - 1.0);
        x = fp16 ? round_to_half(f) : f;
    }
    return m;
}

Matrix reference_gemm(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows)
        throw MappingError("reference_gemm: inner dimensions differ (" + std::to_string(a.cols) + " vs " +
                           std::to_string(b.rows) + ")");
    Matrix c(a.rows, b.cols);
    for (uint32_t i = 0; i < a.rows; ++i)
        for (uint32_t j = 0; j < b.cols; ++j) {
            float s = 0.0f;
            for (uint32_t k = 0; k < a.cols; ++k) s += a.at(i, k) * b.at(k, j);
            c.at(i, j) = s;
        }
    return c;
}

const char* to_string(ExpMode m) { return m == ExpMode::Exact ? "exact" : "taylor2"; }

ExpMode parse_exp_mode(const std::string& s) {
    if (s == "exact") return ExpMode::Exact;
    if (s == "taylor2") return ExpMode::Taylor2;
    throw MappingError("unknown exp mode '" + s + "' (expected exact or taylor2)");
}

float taylor2_exp(float x) { return std::fma(x, std::fma(x, 0.5f, 1.0f), 1.0f); }

Matrix reference_attention(const Matrix& q, const Matrix& k, const Matrix& v, ExpMode mode, uint32_t block) {
    if (q.cols != k.cols || k.rows != v.rows || q.rows != k.rows || v.cols != q.cols)
        throw MappingError("reference_attention: Q, K and V must all be L x d");
    if (block == 0) throw MappingError("reference_attention: block must be positive");
    auto ex = [mode](float x) { return mode == ExpMode::Exact ? std::exp(x) : taylor2_exp(x); };
    const uint32_t L = k.rows, d = q.cols;
    Matrix o(q.rows, d);
    std::vector<float> s(block), acc(d);
    for (uint32_t r = 0; r < q.rows; ++r) {
        float m = 0.0f, l = 0.0f;
        std::fill(acc.begin(), acc.end(), 0.0f);
        for (uint32_t j0 = 0; j0 < L; j0 += block) {
            const uint32_t bc = std::min(block, L - j0);
            float rowmax = -std::numeric_limits<float>::infinity();
            for (uint32_t c = 0; c < bc; ++c) {
                float dot = 0.0f;
                for (uint32_t x = 0; x < d; ++x) dot += q.at(r, x) * k.at(j0 + c, x);
                s[c] = dot;
                rowmax = std::max(rowmax, dot);
            }
            // The first tile has nothing to rescale.
            float alpha = 1.0f;
            if (j0 == 0) {
                m = rowmax;
            } else {
                const float m_new = std::max(m, rowmax);
                alpha = ex(m - m_new);
                m = m_new;
            }
            float sum = 0.0f;
            for (uint32_t c = 0; c < bc; ++c) {
                s[c] = ex(s[c] - m);
                sum += s[c];
            }
            l = j0 == 0 ? sum : std::fma(l, alpha, sum);
            for (uint32_t x = 0; x < d; ++x) {
                float pv = 0.0f;
                for (uint32_t c = 0; c < bc; ++c) pv += s[c] * v.at(j0 + c, x);
                acc[x] = (j0 == 0 ? 0.0f : acc[x] * alpha) + pv;
            }
        }
        for (uint32_t x = 0; x < d; ++x) o.at(r, x) = acc[x] * (1.0f / l);
    }
    return o;
}

ErrorReport compare_matrices(const Matrix& got, const Matrix& want, double floor_frac) {
    if (got.rows != want.rows || got.cols != want.cols) throw MappingError("compare_matrices: shape mismatch");
    double maxabs = 0.0;
    for (float y : want.v) maxabs = std::max(maxabs, std::fabs(double(y)));
    const double floor = std::max(floor_frac * maxabs, std::numeric_limits<double>::min());
    ErrorReport r;
    for (uint32_t i = 0; i < want.rows; ++i)
        for (uint32_t j = 0; j < want.cols; ++j) {
            const double x = got.at(i, j), y = want.at(i, j);
            const double e = std::isfinite(x) ? std::fabs(x - y) / std::max(std::fabs(y), floor)
                                              : std::numeric_limits<double>::infinity();
            if (e > r.max_rel_err || (i == 0 && j == 0)) {
                r.max_rel_err = e;
                r.row = i;
                r.col = j;
                r.got = got.at(i, j);
                r.want = want.at(i, j);
            }
        }
    return r;
}

Matrix extract_matrix(const std::vector<uint8_t>& mem, const MatrixDesc& d) {
    if (d.base + uint64_t(d.rows ? d.rows - 1 : 0) * d.row_stride + uint64_t(d.cols) * d.elem_bytes > mem.size())
        throw MappingError("extract_matrix: '" + d.name + "' lies outside global memory");
    Matrix m(d.rows, d.cols);
    for (uint32_t r = 0; r < d.rows; ++r)
        for (uint32_t c = 0; c < d.cols; ++c) {
            const uint8_t* p = mem.data() + d.base + uint64_t(r) * d.row_stride + uint64_t(c) * d.elem_bytes;
            if (d.elem_bytes == 2) {
                uint16_t h;
                std::memcpy(&h, p, 2);
                m.at(r, c) = half_to_float(h);
            } else {
                float f;
                std::memcpy(&f, p, 4);
                m.at(r, c) = f;
            }
        }
    return m;
}

GemmInputs gemm_inputs(uint32_t m, uint32_t n, uint32_t k, uint64_t seed, bool fp16) {
    std::mt19937_64 rng(seed);
    GemmInputs in;
    in.a = random_matrix(m, k, rng, fp16);
    in.b = random_matrix(k, n, rng, fp16);
    return in;
}

AttentionInputs attention_inputs(uint32_t seq_len, uint32_t head_dim, uint64_t seed) {
    std::mt19937_64 rng(seed);
    AttentionInputs in;
    in.q = random_matrix(seq_len, head_dim, rng, false);
    in.k = random_matrix(seq_len, head_dim, rng, false);
    in.v = random_matrix(seq_len, head_dim, rng, false);
    return in;
}

void write_matrix_file(const std::string& path, const Matrix& m) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw MappingError("cannot open '" + path + "' for writing");
    f.write("CSMX", 4);
    f.write(reinterpret_cast<const char*>(&m.rows), 4);
    f.write(reinterpret_cast<const char*>(&m.cols), 4);
    f.write(reinterpret_cast<const char*>(m.v.data()), std::streamsize(m.v.size() * 4));
    if (!f) throw MappingError("write to '" + path + "' failed");
}

Matrix read_matrix_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw MappingError("cannot open '" + path + "'");
    char magic[4];
    uint32_t rows = 0, cols = 0;
    f.read(magic, 4);
    f.read(reinterpret_cast<char*>(&rows), 4);
    f.read(reinterpret_cast<char*>(&cols), 4);
    if (!f || std::memcmp(magic, "CSMX", 4) != 0) throw MappingError("'" + path + "' is not a matrix file");
    Matrix m(rows, cols);
    f.read(reinterpret_cast<char*>(m.v.data()), std::streamsize(m.v.size() * 4));
    if (!f) throw MappingError("'" + path + "' is truncated");
    return m;
}

// ===========================================================================
// Image plumbing
// ===========================================================================

namespace detail {

uint64_t GlobalLayout::place(const std::string& name, uint32_t rows, uint32_t cols, uint32_t elem_bytes, bool output) {
    MatrixDesc d;
    d.name = name;
    d.base = next;
    d.rows = rows;
    d.cols = cols;
    d.elem_bytes = elem_bytes;
    d.row_stride = cols * elem_bytes;
    d.output = output;
    next = (next + uint64_t(rows) * d.row_stride + 255) / 256 * 256;
    if (next >= (1ull << 30)) throw MappingError("problem does not fit the 1 GiB global address window");
    descs.push_back(d);
    return d.base;
}

const MatrixDesc& GlobalLayout::get(const std::string& name) const {
    for (const auto& d : descs)
        if (d.name == name) return d;
    throw MappingError("no matrix named '" + name + "'");
}

void GlobalLayout::store(std::vector<uint8_t>& mem, const std::string& name, const Matrix& m) const {
    const MatrixDesc& d = get(name);
    for (uint32_t r = 0; r < m.rows; ++r)
        for (uint32_t c = 0; c < m.cols; ++c) {
            uint8_t* p = mem.data() + d.base + uint64_t(r) * d.row_stride + uint64_t(c) * d.elem_bytes;
            if (d.elem_bytes == 2) {
                const uint16_t h = float_to_half(m.at(r, c));
                std::memcpy(p, &h, 2);
            } else {
                const float f = m.at(r, c);
                std::memcpy(p, &f, 4);
            }
        }
}

Emit::Emit(std::vector<MicroOp>& o, const SoCConfig& cfg)
    : out(o), lanes(cfg.lanes_per_warp), es(cfg.element_bytes()), tile_k(cfg.matrix_cfg.tile_k) {}

void Emit::push(MicroOp op) {
    op.tag = tag;
    annotate_rf(op, lanes, es, tile_k);
    out.push_back(op);
}

void Emit::alu(uint32_t n) {
    for (uint32_t i = 0; i < n; ++i) {
        MicroOp op;
        op.kind = OpKind::Alu;
        push(op);
    }
}

void Emit::fp(FpFunc f, uint8_t d, uint8_t a, uint8_t b, uint8_t c) {
    MicroOp op;
    op.kind = OpKind::FpOp;
    op.fp = f;
    op.dst = d;
    op.src_a = a;
    op.src_b = b;
    op.src_c = c;
    push(op);
}

void Emit::movimm(uint8_t d, float v) {
    MicroOp op;
    op.kind = OpKind::FpOp;
    op.fp = FpFunc::MovImm;
    op.dst = d;
    op.value = f32_bits(v);
    push(op);
}

void Emit::mem(OpKind k, uint8_t reg, const AddrPattern& p, uint8_t flags) {
    alu();
    MicroOp op;
    op.kind = k;
    if (k == OpKind::LoadShared || k == OpKind::LoadGlobal)
        op.dst = reg;
    else
        op.src_a = reg;
    op.addr = p;
    op.flags = flags;
    push(op);
}

void Emit::hmma(uint8_t a, uint8_t b, uint8_t c, uint32_t k) {
    MicroOp op;
    op.kind = OpKind::HmmaSetStep;
    op.src_a = a;
    op.src_b = b;
    op.src_c = c;
    op.imm = k;
    push(op);
}

void Emit::wgmma(uint32_t a, uint32_t lda, uint32_t b, uint32_t ldb, uint8_t c, bool accumulate) {
    alu(2);   // descriptor construction
    MicroOp op;
    op.kind = OpKind::WgmmaInit;
    op.addr.base = a;
    op.addr.lane_stride = static_cast<int32_t>(lda);
    op.addr.row_stride = ldb;
    op.value = b;
    op.dst = c;
    op.flags = accumulate ? kFlagAccumulate : 0;
    push(op);
}

void Emit::wgmma_wait() {
    MicroOp op;
    op.kind = OpKind::WgmmaWait;
    push(op);
}

void Emit::mmio_write(uint32_t addr, uint32_t value) {
    alu();
    MicroOp op;
    op.kind = OpKind::MmioWrite;
    op.imm = addr;
    op.value = value;
    push(op);
}

void Emit::fence(uint32_t unit, uint32_t depth) {
    alu();
    MicroOp op;
    op.kind = OpKind::MmioRead;
    op.flags = kFlagFence;
    op.imm = mmio::unit_reg(unit, mmio::kOutstanding);
    op.value = depth;
    const OpTag saved = tag;
    tag = OpTag::Sync;
    push(op);
    tag = saved;
}

void Emit::barrier(uint32_t id, uint32_t mask_index) {
    MicroOp op;
    op.kind = OpKind::Barrier;
    op.imm = id;
    op.value = mask_index;
    const OpTag saved = tag;
    tag = OpTag::Sync;
    push(op);
    tag = saved;
}

void Emit::dma(uint32_t channel, uint32_t src, uint32_t dst, uint32_t rows, uint32_t row_bytes, uint32_t src_stride,
               uint32_t dst_stride) {
    mmio_write(mmio::dma_reg(channel, mmio::kDmaSrc), src);
    mmio_write(mmio::dma_reg(channel, mmio::kDmaDst), dst);
    mmio_write(mmio::dma_reg(channel, mmio::kDmaRows), rows);
    mmio_write(mmio::dma_reg(channel, mmio::kDmaRowBytes), row_bytes);
    mmio_write(mmio::dma_reg(channel, mmio::kDmaSrcStride), src_stride);
    mmio_write(mmio::dma_reg(channel, mmio::kDmaDstStride), dst_stride);
    mmio_write(mmio::dma_reg(channel, mmio::kDmaGo), 1);
}

void Emit::unit_cmd(uint32_t unit, const UnitCmd& c) {
    mmio_write(mmio::unit_reg(unit, mmio::kAAddr), c.a);
    mmio_write(mmio::unit_reg(unit, mmio::kBAddr), c.b);
    mmio_write(mmio::unit_reg(unit, mmio::kDAddr), c.d);
    mmio_write(mmio::unit_reg(unit, mmio::kDims), mmio::dims(c.m, c.n, c.k));
    mmio_write(mmio::unit_reg(unit, mmio::kLda), c.lda);
    mmio_write(mmio::unit_reg(unit, mmio::kLdb), c.ldb);
    mmio_write(mmio::unit_reg(unit, mmio::kCtrl),
               c.ldd | (c.accumulate ? mmio::kCtrlAccumulate : 0) | (c.b_transpose ? mmio::kCtrlBTranspose : 0) |
                   (c.slot << mmio::kCtrlSlotShift));
    mmio_write(mmio::unit_reg(unit, mmio::kGo), 1);
}

}  // namespace detail

KernelImage make_list_image(const SoCConfig& cfg, std::vector<std::vector<MicroOp>> per_warp,
                            std::vector<uint8_t> global_image) {
    KernelImage img;
    img.workload = "micro";
    img.variant = cfg.arch_variant;
    img.precision = cfg.precision;
    const uint32_t nw = static_cast<uint32_t>(per_warp.size());
    img.program = std::make_shared<ListProgram>(std::move(per_warp));
    img.initial_global_memory = std::move(global_image);
    WarpMask all;
    for (uint32_t w = 0; w < nw; ++w) all.set(w);
    img.barrier_masks.push_back(all);
    img.warp_thread_block.assign(nw, 0);
    img.num_thread_blocks = 1;
    img.thread_block_unit = {0};
    return img;
}

}  // namespace csim

// ===========================================================================
// Kernel builders
// ===========================================================================

namespace csim {

using detail::Emit;
using detail::FnProgram;
using detail::GlobalLayout;
using detail::UnitCmd;

namespace {

void require_lanes(const SoCConfig& cfg) {
    if (cfg.lanes_per_warp != 8)
        throw MappingError("kernels are mapped for 8-lane warps (lanes_per_warp=" +
                           std::to_string(cfg.lanes_per_warp) + ")");
}

void require_warps(const SoCConfig& cfg, uint32_t n) {
    if (cfg.total_warps() < n)
        throw MappingError("the mapping needs " + std::to_string(n) + " warps but the cluster has " +
                           std::to_string(cfg.total_warps()));
}

void require_multiple(const char* dim, uint32_t v, uint32_t tile, const char* what) {
    if (v == 0 || v % tile != 0)
        throw MappingError(std::string(dim) + "=" + std::to_string(v) + " is not a multiple of the " +
                           std::to_string(tile) + "-" + what);
}

void require_smem(const SoCConfig& cfg, uint64_t bytes) {
    if (bytes > cfg.smem_bytes)
        throw MappingError("the mapping needs " + std::to_string(bytes) + " bytes of shared memory but only " +
                           std::to_string(cfg.smem_bytes) + " are configured");
}

AddrPattern pat(uint32_t base, int32_t lane_stride = 4, uint32_t row_stride = 0, uint16_t lanes_per_row = 8) {
    AddrPattern p;
    p.base = base;
    p.lane_stride = lane_stride;
    p.row_stride = row_stride;
    p.lanes_per_row = lanes_per_row;
    return p;
}

WarpMask range_mask(uint32_t first, uint32_t count) {
    WarpMask m;
    for (uint32_t w = first; w < first + count; ++w) m.set(w);
    return m;
}

KernelImage base_image(const SoCConfig& cfg, const char* workload, uint32_t m, uint32_t n, uint32_t k, uint64_t seed) {
    KernelImage img;
    img.workload = workload;
    img.variant = cfg.arch_variant;
    img.precision = cfg.precision;
    img.m = m;
    img.n = n;
    img.k = k;
    img.seed = seed;
    return img;
}

// ---------------------------------------------------------------------------
// Disaggregated GEMM: one driver warp streams DMA and unit commands
// ---------------------------------------------------------------------------

struct DisaggGemmPlan {
    uint32_t unit = 0, channel = 0;
    uint32_t smem_base = 0;
    uint32_t bm = 0, bn = 0, bk = 0;
    uint32_t m = 0, n = 0, k = 0;
    uint32_t es = 2;
    uint32_t pad = 0;   // bytes added to each staged row so consecutive rows start in different banks
    uint64_t a = 0, b = 0, c = 0;   // global offsets
    uint32_t barrier_id = 0, mask_index = 0;

    uint32_t tiles_n() const { return n / bn; }
    uint32_t steps_k() const { return k / bk; }
    uint32_t steps() const { return (m / bm) * tiles_n() * steps_k(); }
    uint32_t lda() const { return bk * es + pad; }
    uint32_t ldb() const { return bn * es + pad; }
    uint32_t a_bytes() const { return bm * lda(); }
    uint32_t stage_bytes() const { return a_bytes() + bk * ldb(); }
    uint32_t buf(uint32_t s) const { return smem_base + (s % 2) * stage_bytes(); }
    size_t driver_chunks() const { return size_t(steps()) + 2; }

    void load_stage(Emit& e, uint32_t s) const {
        const uint32_t kk = s % steps_k(), t = s / steps_k();
        const uint32_t ti = t / tiles_n(), tj = t % tiles_n();
        e.dma(channel, mmio::global_addr(a + (uint64_t(ti) * bm * k + uint64_t(kk) * bk) * es), buf(s), bm, bk * es,
              k * es, lda());
        e.dma(channel, mmio::global_addr(b + (uint64_t(kk) * bk * n + uint64_t(tj) * bn) * es), buf(s) + a_bytes(),
              bk, bn * es, n * es, ldb());
    }

    void store_tile(Emit& e, uint32_t t) const {
        const uint32_t ti = t / tiles_n(), tj = t % tiles_n();
        e.dma(channel, mmio::accum_addr(unit, 0), mmio::global_addr(c + (uint64_t(ti) * bm * n + uint64_t(tj) * bn) * 4),
              bm, bn * 4, bn * 4, n * 4);
    }

    void emit_driver(Emit& e, size_t chunk) const {
        const uint32_t S = steps();
        if (chunk == 0) {
            e.barrier(barrier_id, mask_index);
            e.tag = OpTag::Producer;
            load_stage(e, 0);
            return;
        }
        if (chunk <= S) {
            const uint32_t s = static_cast<uint32_t>(chunk - 1), kk = s % steps_k();
            e.fence(unit, 0);
            if (kk == 0 && s > 0) {
                // The accumulator holds one output tile: drain it before the next tile overwrites it.
                e.tag = OpTag::Epilogue;
                store_tile(e, s / steps_k() - 1);
                e.fence(unit, 0);
            }
            e.tag = OpTag::Consumer;
            UnitCmd cmd;
            cmd.a = buf(s);
            cmd.b = buf(s) + a_bytes();
            cmd.d = mmio::accum_addr(unit, 0);
            cmd.m = bm;
            cmd.n = bn;
            cmd.k = bk;
            cmd.lda = lda();
            cmd.ldb = ldb();
            cmd.ldd = bn * 4;
            cmd.accumulate = kk > 0;
            e.unit_cmd(unit, cmd);
            if (s + 1 < S) {
                e.tag = OpTag::Producer;
                load_stage(e, s + 1);
            }
            e.tag = OpTag::None;
            e.loop();
            return;
        }
        e.fence(unit, 0);
        e.tag = OpTag::Epilogue;
        store_tile(e, S / steps_k() - 1);
        e.fence(unit, 0);
        e.barrier(barrier_id, mask_index);
    }

    void emit_idle(Emit& e, size_t) const { e.barrier(barrier_id, mask_index); }
};

KernelImage build_gemm_disagg(const SoCConfig& cfg, uint32_t m, uint32_t n, uint32_t k, uint64_t seed) {
    const TileShape t = gemm_block_tile(cfg);
    const bool fp16 = cfg.precision == Precision::FP16in_FP32acc;
    const uint32_t es = cfg.element_bytes();
    KernelImage img = base_image(cfg, "gemm", m, n, k, seed);

    GlobalLayout lay;
    DisaggGemmPlan p;
    p.bm = t.m;
    p.bn = t.n;
    p.bk = t.k;
    p.m = m;
    p.n = n;
    p.k = k;
    p.es = es;
    p.pad = cfg.smem_subbanks_per_bank * 4;
    p.a = lay.place("A", m, k, es, false);
    p.b = lay.place("B", k, n, es, false);
    p.c = lay.place("C", m, n, 4, true);
    require_smem(cfg, 2ull * p.stage_bytes());
    if (uint64_t(p.bm) * p.bn * 4 > cfg.matrix_cfg.accumulator_bytes)
        throw MappingError("the output tile does not fit the accumulator");

    const GemmInputs in = gemm_inputs(m, n, k, seed, fp16);
    std::vector<uint8_t> mem(lay.next, 0);
    lay.store(mem, "A", in.a);
    lay.store(mem, "B", in.b);

    const uint32_t nw = cfg.total_warps();
    std::vector<size_t> chunks(nw, 2);
    chunks[0] = p.driver_chunks();
    img.program = std::make_shared<FnProgram>(cfg, chunks, [p](uint32_t w, size_t c, Emit& e) {
        if (w == 0) p.emit_driver(e, c);
        else p.emit_idle(e, c);
    });
    img.initial_global_memory = std::move(mem);
    img.expected_layouts = lay.descs;
    img.barrier_masks = {range_mask(0, nw)};
    img.warp_thread_block.assign(nw, 0);
    img.thread_block_unit = {0};
    img.expected_macs = uint64_t(m) * n * k;
    return img;
}

// ---------------------------------------------------------------------------
// Tightly-coupled GEMM (Volta: per-lane staging, Ampere: DMA staging)
// ---------------------------------------------------------------------------

struct TcGemmPlan {
    static constexpr uint32_t kWarps = 64;
    static constexpr uint32_t bm = 128, bn = 64, bk = 64;
    bool dma = false;
    bool fp16 = true;
    uint32_t es = 2, tile_k = 16;
    uint32_t m = 0, n = 0, k = 0;
    uint64_t a = 0, b = 0, c = 0;

    uint32_t tiles_n() const { return n / bn; }
    uint32_t steps_k() const { return k / bk; }
    uint32_t stages() const { return (m / bm) * tiles_n() * steps_k(); }
    uint32_t a_bytes() const { return bm * bk * es; }
    uint32_t stage_bytes() const { return a_bytes() + bk * bn * es; }
    uint32_t buf(uint32_t s) const { return (s % 2) * stage_bytes(); }
    uint32_t rounds() const { return stage_bytes() / 4 / (kWarps * 8); }

    struct StageCoord {
        uint32_t ti, tj, kk;
    };
    StageCoord coord(uint32_t s) const {
        const uint32_t t = s / steps_k();
        return {t / tiles_n(), t % tiles_n(), s % steps_k()};
    }

    // Global byte offset of stage word `w` (A region first, then B).
    uint64_t stage_word_global(uint32_t s, uint32_t w) const {
        const StageCoord sc = coord(s);
        const uint32_t byte = w * 4;
        if (byte < a_bytes()) {
            const uint32_t row = byte / (bk * es), off = byte % (bk * es);
            return a + (uint64_t(sc.ti) * bm + row) * k * es + uint64_t(sc.kk) * bk * es + off;
        }
        const uint32_t bb = byte - a_bytes();
        const uint32_t row = bb / (bn * es), off = bb % (bn * es);
        return b + (uint64_t(sc.kk) * bk + row) * n * es + uint64_t(sc.tj) * bn * es + off;
    }

    void stage_global_loads(Emit& e, uint32_t cw, uint32_t s) const {
        for (uint32_t r = 0; r < rounds(); ++r)
            e.ldg(static_cast<uint8_t>(r), pat(static_cast<uint32_t>(stage_word_global(s, r * 512 + cw * 8))));
    }
    void stage_shared_stores(Emit& e, uint32_t cw, uint32_t s) const {
        for (uint32_t r = 0; r < rounds(); ++r)
            e.sts(static_cast<uint8_t>(r), pat(buf(s) + (r * 512 + cw * 8) * 4));
    }
    void dma_stage(Emit& e, uint32_t s) const {
        const StageCoord sc = coord(s);
        e.dma(0, mmio::global_addr(a + (uint64_t(sc.ti) * bm * k + uint64_t(sc.kk) * bk) * es), buf(s), bm, bk * es,
              k * es, bk * es);
        e.dma(0, mmio::global_addr(b + (uint64_t(sc.kk) * bk * n + uint64_t(sc.tj) * bn) * es), buf(s) + a_bytes(), bk,
              bn * es, n * es, bn * es);
    }

    void zero_c(Emit& e) const {
        for (uint32_t r = 0; r < 16; ++r) e.movimm(fpr(r), 0.0f);
    }

    void compute(Emit& e, uint32_t cw, uint32_t s) const {
        const uint32_t row0 = 8 * (cw / 4), col0 = 16 * (cw % 4);
        const uint32_t abuf = buf(s), bbuf = buf(s) + a_bytes(), row_b = bn * es;
        for (uint32_t ks = 0; ks < bk / tile_k; ++ks) {
            for (uint32_t r = 0; r < 8; ++r)
                e.lds(fpr(16 + r), pat(abuf + (row0 + r) * bk * es + ks * 32), kFlagOperandData);
            for (uint32_t sub = 0; sub < 2; ++sub) {
                const uint32_t col = col0 + 8 * sub;
                for (uint32_t q = 0; q < 8; ++q) {
                    if (fp16)
                        e.lds(fpr(24 + q), pat(bbuf + (ks * 16 + 2 * q) * row_b + col * 2, 4, row_b, 4),
                              kFlagOperandData);
                    else
                        e.lds(fpr(24 + q), pat(bbuf + (ks * 8 + q) * row_b + col * 4), kFlagOperandData);
                }
                for (uint32_t kk = 0; kk < tile_k; ++kk) e.hmma(fpr(16), fpr(24), fpr(8 * sub), kk);
            }
        }
    }

    void epilogue(Emit& e, uint32_t cw, uint32_t s) const {
        const StageCoord sc = coord(s);
        const uint32_t row0 = 8 * (cw / 4), col0 = 16 * (cw % 4);
        for (uint32_t sub = 0; sub < 2; ++sub)
            for (uint32_t r = 0; r < 8; ++r) {
                const uint64_t addr = c + (uint64_t(sc.ti) * bm + row0 + r) * n * 4 + (uint64_t(sc.tj) * bn + col0 + 8 * sub) * 4;
                e.stg(fpr(8 * sub + r), pat(static_cast<uint32_t>(addr)), kFlagAccumData);
            }
        zero_c(e);
    }

    void emit(uint32_t cw, size_t chunk, Emit& e) const {
        const uint32_t G = stages();
        const bool driver = cw == 0;
        if (chunk == 0) {
            e.tag = OpTag::Consumer;
            zero_c(e);
            e.tag = OpTag::Producer;
            if (dma) {
                if (driver) {
                    dma_stage(e, 0);
                    e.fence(0, 0);
                }
            } else {
                stage_global_loads(e, cw, 0);
                stage_shared_stores(e, cw, 0);
            }
            e.barrier(0, 0);
            return;
        }
        const uint32_t s = static_cast<uint32_t>(chunk - 1);
        const bool next = s + 1 < G;
        e.tag = OpTag::Producer;
        if (next) {
            if (!dma) stage_global_loads(e, cw, s + 1);
            else if (driver) dma_stage(e, s + 1);
        }
        e.tag = OpTag::Consumer;
        compute(e, cw, s);
        if (coord(s).kk + 1 == steps_k()) {
            e.tag = OpTag::Epilogue;
            epilogue(e, cw, s);
        }
        e.tag = OpTag::Producer;
        if (next && !dma) stage_shared_stores(e, cw, s + 1);
        if (dma && driver) e.fence(0, 0);
        e.barrier(0, 0);
        e.tag = OpTag::None;
        e.loop();
    }
};

KernelImage build_gemm_tc(const SoCConfig& cfg, uint32_t m, uint32_t n, uint32_t k, uint64_t seed) {
    require_warps(cfg, TcGemmPlan::kWarps);
    const bool fp16 = cfg.precision == Precision::FP16in_FP32acc;
    KernelImage img = base_image(cfg, "gemm", m, n, k, seed);
    GlobalLayout lay;
    TcGemmPlan p;
    p.dma = cfg.arch_variant == ArchVariant::TightlyCoupledDma;
    p.fp16 = fp16;
    p.es = cfg.element_bytes();
    p.tile_k = cfg.matrix_cfg.tile_k;
    p.m = m;
    p.n = n;
    p.k = k;
    p.a = lay.place("A", m, k, p.es, false);
    p.b = lay.place("B", k, n, p.es, false);
    p.c = lay.place("C", m, n, 4, true);
    require_smem(cfg, 2ull * p.stage_bytes());
    if (p.tile_k * p.es != 32) throw MappingError("tightly-coupled fragments must span 32 bytes of k");
    if (!p.dma && p.rounds() > 32) throw MappingError("a stage does not fit the integer staging registers");

    const GemmInputs in = gemm_inputs(m, n, k, seed, fp16);
    std::vector<uint8_t> mem(lay.next, 0);
    lay.store(mem, "A", in.a);
    lay.store(mem, "B", in.b);

    const uint32_t nw = TcGemmPlan::kWarps;
    img.program = std::make_shared<FnProgram>(cfg, std::vector<size_t>(nw, size_t(p.stages()) + 1),
                                              [p](uint32_t w, size_t c, Emit& e) { p.emit(w, c, e); });
    img.initial_global_memory = std::move(mem);
    img.expected_layouts = lay.descs;
    img.barrier_masks = {range_mask(0, nw)};
    img.warp_thread_block.assign(nw, 0);
    img.thread_block_unit = {0};
    img.expected_macs = uint64_t(m) * n * k;
    return img;
}

// ---------------------------------------------------------------------------
// Operand-decoupled GEMM: asynchronous warpgroup MMA from shared memory
// ---------------------------------------------------------------------------

struct OdGemmPlan {
    static constexpr uint32_t kWarps = 32;
    static constexpr uint32_t bm = 128, bn = 64;
    uint32_t bk = 64, tile_k = 32, es = 2;
    uint32_t m = 0, n = 0, k = 0;
    uint64_t a = 0, b = 0, c = 0;

    uint32_t tiles_n() const { return n / bn; }
    uint32_t steps_k() const { return k / bk; }
    uint32_t stages() const { return (m / bm) * tiles_n() * steps_k(); }
    uint32_t a_bytes() const { return bm * bk * es; }
    uint32_t stage_bytes() const { return a_bytes() + bk * bn * es; }
    uint32_t buf(uint32_t s) const { return (s % 2) * stage_bytes(); }

    void dma_stage(Emit& e, uint32_t s) const {
        const uint32_t t = s / steps_k(), kk = s % steps_k();
        const uint32_t ti = t / tiles_n(), tj = t % tiles_n();
        e.dma(0, mmio::global_addr(a + (uint64_t(ti) * bm * k + uint64_t(kk) * bk) * es), buf(s), bm, bk * es,
              k * es, bk * es);
        e.dma(0, mmio::global_addr(b + (uint64_t(kk) * bk * n + uint64_t(tj) * bn) * es), buf(s) + a_bytes(), bk,
              bn * es, n * es, bn * es);
    }

    void emit(uint32_t cw, size_t chunk, Emit& e) const {
        const uint32_t G = stages();
        const bool driver = cw == 0;
        if (chunk == 0) {
            if (driver) {
                e.tag = OpTag::Producer;
                dma_stage(e, 0);
                e.fence(0, 0);
            }
            e.barrier(0, 0);
            return;
        }
        const uint32_t s = static_cast<uint32_t>(chunk - 1), kk = s % steps_k();
        const uint32_t row0 = 16 * (cw / 4), col0 = 16 * (cw % 4);
        if (driver && s + 1 < G) {
            e.tag = OpTag::Producer;
            dma_stage(e, s + 1);
        }
        e.tag = OpTag::Consumer;
        const uint32_t lda = bk * es, ldb = bn * es;
        for (uint32_t j = 0; j < bk / tile_k; ++j)
            e.wgmma(buf(s) + row0 * lda + j * tile_k * es, lda, buf(s) + a_bytes() + j * tile_k * ldb + col0 * es,
                    ldb, fpr(0), !(kk == 0 && j == 0));
        e.wgmma_wait();
        if (kk + 1 == steps_k()) {
            e.tag = OpTag::Epilogue;
            const uint32_t t = s / steps_k(), ti = t / tiles_n(), tj = t % tiles_n();
            for (uint32_t i = 0; i < 16; ++i)
                for (uint32_t h = 0; h < 2; ++h) {
                    const uint64_t addr =
                        c + (uint64_t(ti) * bm + row0 + i) * n * 4 + (uint64_t(tj) * bn + col0 + 8 * h) * 4;
                    e.stg(fpr(i * 2 + h), pat(static_cast<uint32_t>(addr)), kFlagAccumData);
                }
        }
        if (driver) e.fence(0, 0);
        e.barrier(0, 0);
        e.tag = OpTag::None;
        e.loop();
    }
};

KernelImage build_gemm_od(const SoCConfig& cfg, uint32_t m, uint32_t n, uint32_t k, uint64_t seed) {
    require_warps(cfg, OdGemmPlan::kWarps);
    const bool fp16 = cfg.precision == Precision::FP16in_FP32acc;
    const TileShape t = gemm_block_tile(cfg);
    KernelImage img = base_image(cfg, "gemm", m, n, k, seed);
    GlobalLayout lay;
    OdGemmPlan p;
    p.bk = t.k;
    p.tile_k = cfg.matrix_cfg.tile_k;
    p.es = cfg.element_bytes();
    p.m = m;
    p.n = n;
    p.k = k;
    p.a = lay.place("A", m, k, p.es, false);
    p.b = lay.place("B", k, n, p.es, false);
    p.c = lay.place("C", m, n, 4, true);
    require_smem(cfg, 2ull * p.stage_bytes());

    const GemmInputs in = gemm_inputs(m, n, k, seed, fp16);
    std::vector<uint8_t> mem(lay.next, 0);
    lay.store(mem, "A", in.a);
    lay.store(mem, "B", in.b);

    const uint32_t nw = OdGemmPlan::kWarps;
    img.program = std::make_shared<FnProgram>(cfg, std::vector<size_t>(nw, size_t(p.stages()) + 1),
                                              [p](uint32_t w, size_t c, Emit& e) { p.emit(w, c, e); });
    img.initial_global_memory = std::move(mem);
    img.expected_layouts = lay.descs;
    img.barrier_masks = {range_mask(0, nw)};
    img.warp_thread_block.assign(nw, 0);
    img.thread_block_unit = {0};
    img.expected_macs = uint64_t(m) * n * k;
    return img;
}

}  // namespace

TileShape gemm_block_tile(const SoCConfig& cfg) {
    switch (cfg.arch_variant) {
        case ArchVariant::TightlyCoupled:
        case ArchVariant::TightlyCoupledDma:
            return {TcGemmPlan::bm, TcGemmPlan::bn, TcGemmPlan::bk};
        case ArchVariant::OperandDecoupled:
            return {OdGemmPlan::bm, OdGemmPlan::bn, 2 * cfg.matrix_cfg.tile_k};
        case ArchVariant::Disaggregated:
            return {cfg.matrix_cfg.tile_m, cfg.matrix_cfg.tile_n, cfg.matrix_cfg.tile_k};
    }
    throw MappingError("unknown variant");
}

KernelImage build_gemm_kernel(const SoCConfig& cfg, uint32_t m, uint32_t n, uint32_t k, uint64_t seed) {
    require_valid(cfg);
    require_lanes(cfg);
    const TileShape t = gemm_block_tile(cfg);
    require_multiple("M", m, t.m, "row thread-block tile");
    require_multiple("N", n, t.n, "column thread-block tile");
    require_multiple("K", k, t.k, "deep thread-block k-step");
    switch (cfg.arch_variant) {
        case ArchVariant::TightlyCoupled:
        case ArchVariant::TightlyCoupledDma:
            return build_gemm_tc(cfg, m, n, k, seed);
        case ArchVariant::OperandDecoupled:
            return build_gemm_od(cfg, m, n, k, seed);
        case ArchVariant::Disaggregated:
            return build_gemm_disagg(cfg, m, n, k, seed);
    }
    throw MappingError("unknown variant");
}

}  // namespace csim

namespace csim {

using detail::Emit;
using detail::FnProgram;
using detail::GlobalLayout;
using detail::UnitCmd;

namespace {

AddrPattern row_pat(uint32_t base) {
    AddrPattern p;
    p.base = base;
    return p;
}

AddrPattern bcast_pat(uint32_t addr) {
    AddrPattern p;
    p.base = addr;
    p.lane_stride = 0;
    return p;
}

/// Pairwise reduction of `src` into `tmp` (which may alias nothing in src).
uint8_t reduce_tree(Emit& e, FpFunc f, std::vector<uint8_t> src, uint8_t tmp) {
    if (src.size() == 1) return src[0];
    std::vector<uint8_t> level;
    for (size_t i = 0; i + 1 < src.size(); i += 2) {
        const uint8_t d = static_cast<uint8_t>(tmp + level.size());
        e.fp(f, d, src[i], src[i + 1]);
        level.push_back(d);
    }
    if (src.size() % 2) level.push_back(src.back());
    while (level.size() > 1) {
        std::vector<uint8_t> next;
        for (size_t i = 0; i + 1 < level.size(); i += 2) {
            const uint8_t d = static_cast<uint8_t>(tmp + next.size());
            e.fp(f, d, level[i], level[i + 1]);
            next.push_back(d);
        }
        if (level.size() % 2) next.push_back(level.back());
        level = next;
    }
    return level[0];
}

/// Cross-lane reduction: per-lane partials go through words 0..7 of `scratch`
/// and come back as broadcast loads. Result lands in `tmp` on every lane.
void reduce_lanes(Emit& e, FpFunc f, uint8_t partial, uint32_t scratch, uint8_t tmp) {
    e.sts(partial, row_pat(scratch));
    std::vector<uint8_t> regs;
    for (uint32_t i = 0; i < 8; ++i) {
        e.lds(static_cast<uint8_t>(tmp + i), bcast_pat(scratch + 4 * i));
        regs.push_back(static_cast<uint8_t>(tmp + i));
    }
    const uint8_t r = reduce_tree(e, f, regs, tmp);
    if (r != tmp) e.fp(FpFunc::Mov, tmp, r);
}

struct SoftmaxRegs {
    uint8_t s0;       // first S/P register
    uint32_t nr;      // registers per row (8 columns each)
    uint8_t tmp;      // 8 scratch registers
    uint8_t m, l, alpha, new_max, t, half, one;
};

void taylor(Emit& e, const SoftmaxRegs& r, uint8_t dst, uint8_t x) {
    e.fp(FpFunc::Fma, r.t, x, r.half, r.one);
    e.fp(FpFunc::Fma, dst, x, r.t, r.one);
}

/// Online softmax of one row held in shared memory at `row`, in place. For
/// later tiles also produces the rescale factor alpha = e(m_old - m_new).
void online_softmax_row(Emit& e, const SoftmaxRegs& r, uint32_t row, bool first) {
    std::vector<uint8_t> s;
    for (uint32_t q = 0; q < r.nr; ++q) {
        s.push_back(static_cast<uint8_t>(r.s0 + q));
        e.lds(s.back(), row_pat(row + 32 * q));
    }
    const uint8_t pm = reduce_tree(e, FpFunc::Max, s, r.tmp);
    reduce_lanes(e, FpFunc::Max, pm, row, r.tmp);
    if (first) {
        e.fp(FpFunc::Mov, r.m, r.tmp);
    } else {
        e.fp(FpFunc::Max, r.new_max, r.m, r.tmp);
        e.fp(FpFunc::Sub, r.alpha, r.m, r.new_max);
        taylor(e, r, r.alpha, r.alpha);
        e.fp(FpFunc::Mov, r.m, r.new_max);
    }
    for (uint8_t q : s) {
        e.fp(FpFunc::Sub, q, q, r.m);
        taylor(e, r, q, q);
    }
    const uint8_t ps = reduce_tree(e, FpFunc::Add, s, r.tmp);
    reduce_lanes(e, FpFunc::Add, ps, row, r.tmp);
    if (first) e.fp(FpFunc::Mov, r.l, r.tmp);
    else e.fp(FpFunc::Fma, r.l, r.l, r.alpha, r.tmp);
    for (uint32_t q = 0; q < r.nr; ++q) e.sts(s[q], row_pat(row + 32 * q));
}

// ---------------------------------------------------------------------------
// Disaggregated flash attention: GEMMs on the unit, softmax on every warp
// ---------------------------------------------------------------------------

struct DisaggFlashPlan {
    static constexpr uint32_t kWarps = 64;
    static constexpr uint32_t br = 64, bc = 64;
    uint32_t L = 0, d = 0;
    uint64_t q = 0, kv = 0, o = 0;

    uint32_t tiles() const { return L / bc; }
    uint32_t blocks() const { return L / br; }
    uint32_t chunks_per_block() const { return tiles() + 4; }
    uint32_t tile_bytes() const { return bc * d * 4; }
    uint32_t q_s() const { return 0; }
    uint32_t k_s(uint32_t i) const { return tile_bytes() * (1 + i % 2); }
    uint32_t v_s(uint32_t i) const { return tile_bytes() * (3 + i % 2); }
    uint32_t sp_s(uint32_t i) const { return tile_bytes() * 5 + (i % 2) * br * bc * 4; }
    uint32_t o_s() const { return tile_bytes() * 5 + 2 * br * bc * 4; }
    uint32_t smem_bytes() const { return o_s() + br * d * 4; }

    static constexpr SoftmaxRegs regs() {
        return SoftmaxRegs{fpr(0), 8, fpr(8), fpr(16), fpr(17), fpr(18), fpr(19), fpr(20), fpr(21), fpr(22)};
    }

    void dma_k(Emit& e, uint32_t j) const {
        e.dma(0, mmio::global_addr(kv + uint64_t(j) * bc * 2 * d * 4), k_s(j), bc, d * 4, 2 * d * 4, d * 4);
    }
    void dma_v(Emit& e, uint32_t j) const {
        e.dma(0, mmio::global_addr(kv + uint64_t(j) * bc * 2 * d * 4 + d * 4), v_s(j), bc, d * 4, 2 * d * 4, d * 4);
    }

    void emit(uint32_t w, size_t chunk, Emit& e) const {
        const uint32_t qb = static_cast<uint32_t>(chunk / chunks_per_block());
        const uint32_t c = static_cast<uint32_t>(chunk % chunks_per_block());
        const uint32_t T = tiles();
        const bool driver = w == 0;
        const SoftmaxRegs r = regs();
        const uint32_t o_row = o_s() + w * d * 4;

        if (c == 0) {
            e.movimm(r.half, 0.5f);
            e.movimm(r.one, 1.0f);
            if (driver) {
                e.tag = OpTag::Producer;
                e.dma(0, mmio::global_addr(q + uint64_t(qb) * br * d * 4), q_s(), br, d * 4, d * 4, d * 4);
                dma_k(e, 0);
            }
            return;
        }
        if (c <= T + 2) {
            const uint32_t t = c - 1;
            e.fence(0, 0);
            e.barrier(0, 0);
            uint32_t after_gemm2 = 0;
            if (driver) {
                e.tag = OpTag::Consumer;
                if (t >= 2) {
                    UnitCmd g2;
                    g2.a = sp_s(t);
                    g2.b = v_s(t);
                    g2.d = o_s();
                    g2.m = br;
                    g2.n = d;
                    g2.k = bc;
                    g2.lda = bc * 4;
                    g2.ldb = d * 4;
                    g2.ldd = d * 4;
                    g2.accumulate = t > 2;
                    g2.slot = 1;
                    e.unit_cmd(0, g2);
                }
                if (t < T) {
                    UnitCmd g1;
                    g1.a = q_s();
                    g1.b = k_s(t);
                    g1.d = sp_s(t);
                    g1.m = br;
                    g1.n = bc;
                    g1.k = d;
                    g1.lda = d * 4;
                    g1.ldb = d * 4;
                    g1.ldd = bc * 4;
                    g1.b_transpose = true;
                    e.unit_cmd(0, g1);
                }
                e.tag = OpTag::Producer;
                if (t + 1 < T) dma_k(e, t + 1);
                if (t >= 1 && t <= T) dma_v(e, t - 1);
            }
            after_gemm2 = (t < T ? 1 : 0) + (t + 1 < T ? 1 : 0) + (t >= 1 && t <= T ? 1 : 0);
            // Every warp's later fence must observe this iteration's operations.
            e.barrier(0, 0);
            if (t >= 1 && t <= T) {
                e.tag = OpTag::Softmax;
                online_softmax_row(e, r, sp_s(t - 1) + w * bc * 4, t == 1);
            }
            if (t >= 2 && t <= T) {
                e.fence(0, after_gemm2);
                e.tag = OpTag::Softmax;
                for (uint32_t i = 0; i < d / 8; ++i) {
                    const uint8_t v = fpr(24 + i);
                    e.lds(v, row_pat(o_row + 32 * i));
                    e.fp(FpFunc::Mul, v, v, r.alpha);
                    e.sts(v, row_pat(o_row + 32 * i));
                }
            }
            e.tag = OpTag::None;
            e.loop();
            return;
        }
        e.fence(0, 0);
        e.tag = OpTag::Epilogue;
        e.fp(FpFunc::Div, r.t, r.one, r.l);
        for (uint32_t i = 0; i < d / 8; ++i) {
            const uint8_t v = fpr(24 + i);
            e.lds(v, row_pat(o_row + 32 * i));
            e.fp(FpFunc::Mul, v, v, r.t);
            e.sts(v, row_pat(o_row + 32 * i));
        }
        e.barrier(0, 0);
        if (driver) {
            e.dma(0, o_s(), mmio::global_addr(o + uint64_t(qb) * br * d * 4), br, d * 4, d * 4, d * 4);
            e.fence(0, 0);
        }
        e.tag = OpTag::None;
    }
};

// ---------------------------------------------------------------------------
// Ampere-style flash attention: HMMA GEMMs, two 4-warp groups per core
// ---------------------------------------------------------------------------

struct AmpereFlashPlan {
    static constexpr uint32_t kWarps = 64;
    static constexpr uint32_t groups = 16, rows_per_group = 8;
    static constexpr uint32_t br = groups * rows_per_group, bc = 32;
    uint32_t L = 0, d = 0;
    uint64_t q = 0, kv = 0, o = 0;

    uint32_t tiles() const { return L / bc; }
    uint32_t passes() const { return L / br; }
    uint32_t chunks_per_pass() const { return tiles() + 2; }
    uint32_t q_s() const { return 0; }
    uint32_t kvt_bytes() const { return bc * d * 4; }
    uint32_t k_s(uint32_t j) const { return br * d * 4 + (j % 2) * kvt_bytes(); }
    uint32_t v_s(uint32_t j) const { return br * d * 4 + (2 + j % 2) * kvt_bytes(); }
    uint32_t sp_s() const { return br * d * 4 + 4 * kvt_bytes(); }
    uint32_t o_s() const { return sp_s() + br * bc * 4; }
    uint32_t alpha_s() const { return o_s() + br * d * 4; }
    uint32_t smem_bytes() const { return alpha_s() + br * 4; }

    static constexpr SoftmaxRegs regs(uint32_t row) {
        return SoftmaxRegs{fpr(4 * row), 4, fpr(8), fpr(24 + row), fpr(26 + row), fpr(28),
                           fpr(19), fpr(20), fpr(30), fpr(31)};
    }

    void dma_kv(Emit& e, uint32_t j) const {
        const uint64_t base = kv + uint64_t(j) * bc * 2 * d * 4;
        e.dma(0, mmio::global_addr(base), k_s(j), bc, d * 4, 2 * d * 4, d * 4);
        e.dma(0, mmio::global_addr(base + d * 4), v_s(j), bc, d * 4, 2 * d * 4, d * 4);
    }

    void emit(uint32_t w, size_t chunk, Emit& e) const {
        const uint32_t pass = static_cast<uint32_t>(chunk / chunks_per_pass());
        const uint32_t c = static_cast<uint32_t>(chunk % chunks_per_pass());
        const uint32_t T = tiles();
        const bool driver = w == 0;
        const uint32_t G = w / 4, wg = w % 4;
        const uint32_t grow = G * rows_per_group;
        const uint32_t gbar = 1 + G, gmask = 1 + G;

        if (c == 0) {
            e.movimm(fpr(30), 0.5f);
            e.movimm(fpr(31), 1.0f);
            if (driver) {
                e.tag = OpTag::Producer;
                e.dma(0, mmio::global_addr(q + uint64_t(pass) * br * d * 4), q_s(), br, d * 4, d * 4, d * 4);
                dma_kv(e, 0);
                e.fence(0, 0);
            }
            e.barrier(0, 0);
            return;
        }
        if (c <= T) {
            const uint32_t j = c - 1;
            if (driver && j + 1 < T) {
                e.tag = OpTag::Producer;
                dma_kv(e, j + 1);
            }
            // GEMM-1: S[grow.., wg*8..] = Q K^T
            e.tag = OpTag::Consumer;
            for (uint32_t r = 0; r < 8; ++r) e.movimm(fpr(r), 0.0f);
            for (uint32_t kc = 0; kc < d / 8; ++kc) {
                for (uint32_t r = 0; r < 8; ++r)
                    e.lds(fpr(8 + r), row_pat(q_s() + (grow + r) * d * 4 + kc * 32), kFlagOperandData);
                for (uint32_t kk = 0; kk < 8; ++kk)
                    e.lds(fpr(16 + kk), pat(k_s(j) + wg * 8 * d * 4 + (kc * 8 + kk) * 4, static_cast<int32_t>(d * 4)),
                          kFlagOperandData);
                for (uint32_t kk = 0; kk < 8; ++kk) e.hmma(fpr(8), fpr(16), fpr(0), kk);
            }
            for (uint32_t r = 0; r < 8; ++r)
                e.sts(fpr(r), row_pat(sp_s() + (grow + r) * bc * 4 + wg * 32), kFlagAccumData);
            e.barrier(gbar, gmask);

            e.tag = OpTag::Softmax;
            for (uint32_t rr = 0; rr < 2; ++rr) {
                const uint32_t row = grow + wg * 2 + rr;
                const SoftmaxRegs sr = regs(rr);
                online_softmax_row(e, sr, sp_s() + row * bc * 4, j == 0);
                if (j > 0) e.sts(sr.alpha, bcast_pat(alpha_s() + row * 4));
            }
            e.barrier(gbar, gmask);

            // GEMM-2: O[grow.., sc*8..] = alpha * O + P V
            e.tag = OpTag::Consumer;
            for (uint32_t i = 0; i < d / 32; ++i) {
                const uint32_t sc = wg * (d / 32) + i;
                if (j == 0) {
                    for (uint32_t r = 0; r < 8; ++r) e.movimm(fpr(r), 0.0f);
                } else {
                    for (uint32_t r = 0; r < 8; ++r) {
                        e.lds(fpr(r), row_pat(o_s() + (grow + r) * d * 4 + sc * 32), kFlagAccumData);
                        e.lds(fpr(29), bcast_pat(alpha_s() + (grow + r) * 4));
                        e.fp(FpFunc::Mul, fpr(r), fpr(r), fpr(29));
                    }
                }
                for (uint32_t kc = 0; kc < bc / 8; ++kc) {
                    for (uint32_t r = 0; r < 8; ++r)
                        e.lds(fpr(8 + r), row_pat(sp_s() + (grow + r) * bc * 4 + kc * 32), kFlagOperandData);
                    for (uint32_t kk = 0; kk < 8; ++kk)
                        e.lds(fpr(16 + kk), row_pat(v_s(j) + (kc * 8 + kk) * d * 4 + sc * 32), kFlagOperandData);
                    for (uint32_t kk = 0; kk < 8; ++kk) e.hmma(fpr(8), fpr(16), fpr(0), kk);
                }
                for (uint32_t r = 0; r < 8; ++r)
                    e.sts(fpr(r), row_pat(o_s() + (grow + r) * d * 4 + sc * 32), kFlagAccumData);
            }
            e.tag = OpTag::Producer;
            if (driver) e.fence(0, 0);
            e.barrier(0, 0);
            e.tag = OpTag::None;
            e.loop();
            return;
        }
        // Normalize this warp's two softmax rows, then store the pass.
        e.tag = OpTag::Epilogue;
        for (uint32_t rr = 0; rr < 2; ++rr) {
            const uint32_t row = grow + wg * 2 + rr;
            const SoftmaxRegs sr = regs(rr);
            e.fp(FpFunc::Div, fpr(20), fpr(31), sr.l);
            for (uint32_t i = 0; i < d / 8; ++i) {
                e.lds(fpr(i), row_pat(o_s() + row * d * 4 + 32 * i));
                e.fp(FpFunc::Mul, fpr(i), fpr(i), fpr(20));
                e.sts(fpr(i), row_pat(o_s() + row * d * 4 + 32 * i));
            }
        }
        e.barrier(0, 0);
        if (driver) {
            e.dma(0, o_s(), mmio::global_addr(o + uint64_t(pass) * br * d * 4), br, d * 4, d * 4, d * 4);
            e.fence(0, 0);
        }
        e.tag = OpTag::None;
    }
};

}  // namespace

KernelImage build_flash_attention_kernel(const SoCConfig& cfg, uint32_t seq_len, uint32_t head_dim, uint64_t seed) {
    require_valid(cfg);
    require_lanes(cfg);
    if (cfg.precision != Precision::FP32in_FP32acc)
        throw MappingError("flash attention is mapped for FP32 inputs only");
    const bool disagg = cfg.arch_variant == ArchVariant::Disaggregated;
    if (!disagg && cfg.arch_variant != ArchVariant::TightlyCoupledDma)
        throw MappingError("flash attention is mapped for the Disaggregated and TightlyCoupledDma variants only");
    require_warps(cfg, 64);

    KernelImage img = base_image(cfg, "flash", seq_len, head_dim, seq_len, seed);
    GlobalLayout lay;
    const uint64_t q = lay.place("Q", seq_len, head_dim, 4, false);
    const uint64_t kv = lay.place("KV", seq_len, 2 * head_dim, 4, false);
    const uint64_t o = lay.place("O", seq_len, head_dim, 4, true);

    const AttentionInputs in = attention_inputs(seq_len, head_dim, seed);
    Matrix kvm(seq_len, 2 * head_dim);
    for (uint32_t r = 0; r < seq_len; ++r)
        for (uint32_t c = 0; c < head_dim; ++c) {
            kvm.at(r, c) = in.k.at(r, c);
            kvm.at(r, head_dim + c) = in.v.at(r, c);
        }
    std::vector<uint8_t> mem(lay.next, 0);
    lay.store(mem, "Q", in.q);
    lay.store(mem, "KV", kvm);

    const uint32_t nw = 64;
    img.barrier_masks = {range_mask(0, nw)};
    if (disagg) {
        DisaggFlashPlan p;
        p.L = seq_len;
        p.d = head_dim;
        p.q = q;
        p.kv = kv;
        p.o = o;
        require_multiple("seq_len", seq_len, DisaggFlashPlan::bc, "row attention tile");
        if (head_dim == 0 || head_dim % 8 || head_dim > 64)
            throw MappingError("head_dim=" + std::to_string(head_dim) + " must be a multiple of 8 and at most 64");
        require_smem(cfg, p.smem_bytes());
        if (cfg.matrix_cfg.tile_n < 64 || cfg.matrix_cfg.tile_k < 64 || cfg.matrix_cfg.tile_m < 64)
            throw MappingError("the matrix unit tile must cover 64x64x64");
        img.program = std::make_shared<FnProgram>(
            cfg, std::vector<size_t>(nw, size_t(p.blocks()) * p.chunks_per_block()),
            [p](uint32_t w, size_t c, Emit& e) { p.emit(w, c, e); });
        img.attn_block = DisaggFlashPlan::bc;
    } else {
        AmpereFlashPlan p;
        p.L = seq_len;
        p.d = head_dim;
        p.q = q;
        p.kv = kv;
        p.o = o;
        require_multiple("seq_len", seq_len, AmpereFlashPlan::br, "row attention pass");
        if (head_dim != 32 && head_dim != 64)
            throw MappingError("head_dim=" + std::to_string(head_dim) + " must be 32 or 64 for this mapping");
        require_smem(cfg, p.smem_bytes());
        for (uint32_t g = 0; g < AmpereFlashPlan::groups; ++g) img.barrier_masks.push_back(range_mask(4 * g, 4));
        img.program = std::make_shared<FnProgram>(
            cfg, std::vector<size_t>(nw, size_t(p.passes()) * p.chunks_per_pass()),
            [p](uint32_t w, size_t c, Emit& e) { p.emit(w, c, e); });
        img.attn_block = AmpereFlashPlan::bc;
    }
    img.initial_global_memory = std::move(mem);
    img.expected_layouts = lay.descs;
    img.warp_thread_block.assign(nw, 0);
    img.thread_block_unit = {0};
    img.expected_macs = 2ull * seq_len * seq_len * head_dim;
    return img;
}

// ---------------------------------------------------------------------------
// Heterogeneous multi-unit scenario
// ---------------------------------------------------------------------------

SoCConfig multiunit_config() {
    SoCConfig cfg = preset(ArchVariant::Disaggregated, Precision::FP16in_FP32acc);
    MatrixUnitConfig small;
    small.units_per_scope = 1;
    small.scope = UnitScope::PerCluster;
    small.macs_per_unit_per_cycle = 64;
    small.tile_m = 64;
    small.tile_n = 32;
    small.tile_k = 64;
    small.accumulator_bytes = 8192;
    small.systolic_rows = 8;
    small.systolic_cols = 8;
    small.fifo_depth = 4;
    small.command_queue_depth = 2;
    cfg.second_unit = small;
    return cfg;
}

KernelImage build_multiunit_kernel(const SoCConfig& cfg, const MultiUnitShape& shape, uint64_t seed, unsigned active) {
    require_valid(cfg);
    require_lanes(cfg);
    if (cfg.arch_variant != ArchVariant::Disaggregated || !cfg.second_unit)
        throw MappingError("the multi-unit scenario needs a Disaggregated cluster with a second matrix unit");
    if (cfg.precision != Precision::FP16in_FP32acc) throw MappingError("the multi-unit scenario is FP16");
    require_warps(cfg, 64);
    if (active == 0 || active > 3) throw MappingError("active must select thread block 0, 1 or both");

    const uint32_t es = cfg.element_bytes();
    const MatrixUnitConfig& su = *cfg.second_unit;
    DisaggGemmPlan large, small;
    large.unit = 0;
    large.channel = 0;
    large.bm = std::min(128u, cfg.matrix_cfg.tile_m);
    large.bn = std::min(64u, cfg.matrix_cfg.tile_n);
    large.bk = std::min(64u, cfg.matrix_cfg.tile_k);
    large.m = shape.large_m;
    large.n = shape.large_n;
    large.k = shape.large_k;
    small.unit = 1;
    small.channel = 1;
    small.bm = su.tile_m;
    small.bn = su.tile_n;
    small.bk = su.tile_k;
    small.m = shape.small_m;
    small.n = shape.small_n;
    small.k = shape.small_k;
    small.barrier_id = 1;
    small.mask_index = 1;
    for (DisaggGemmPlan* p : {&large, &small}) {
        p->es = es;
        p->pad = cfg.smem_subbanks_per_bank * 4;
        require_multiple("M", p->m, p->bm, "row thread-block tile");
        require_multiple("N", p->n, p->bn, "column thread-block tile");
        require_multiple("K", p->k, p->bk, "deep thread-block k-step");
    }
    small.smem_base = 2 * large.stage_bytes();
    require_smem(cfg, small.smem_base + 2ull * small.stage_bytes());

    KernelImage img = base_image(cfg, "multiunit", shape.large_m, shape.large_n, shape.large_k, seed);
    GlobalLayout lay;
    large.a = lay.place("A0", large.m, large.k, es, false);
    large.b = lay.place("B0", large.k, large.n, es, false);
    large.c = lay.place("C0", large.m, large.n, 4, (active & 1) != 0);
    small.a = lay.place("A1", small.m, small.k, es, false);
    small.b = lay.place("B1", small.k, small.n, es, false);
    small.c = lay.place("C1", small.m, small.n, 4, (active & 2) != 0);
    const GemmInputs li = gemm_inputs(large.m, large.n, large.k, seed, true);
    const GemmInputs si = gemm_inputs(small.m, small.n, small.k, seed + 1, true);
    std::vector<uint8_t> mem(lay.next, 0);
    lay.store(mem, "A0", li.a);
    lay.store(mem, "B0", li.b);
    lay.store(mem, "A1", si.a);
    lay.store(mem, "B1", si.b);

    const uint32_t nw = 64, half = 32;
    std::vector<size_t> chunks(nw, 0);
    for (uint32_t w = 0; w < nw; ++w) {
        const bool tb1 = w >= half;
        if (!(active & (tb1 ? 2u : 1u))) continue;
        const DisaggGemmPlan& p = tb1 ? small : large;
        chunks[w] = (w % half == 0) ? p.driver_chunks() : 2;
    }
    img.program = std::make_shared<FnProgram>(cfg, chunks, [large, small](uint32_t w, size_t c, Emit& e) {
        const DisaggGemmPlan& p = w >= 32 ? small : large;
        if (w % 32 == 0) p.emit_driver(e, c);
        else p.emit_idle(e, c);
    });
    img.initial_global_memory = std::move(mem);
    img.expected_layouts = lay.descs;
    img.barrier_masks = {range_mask(0, half), range_mask(half, half)};
    img.warp_thread_block.assign(nw, 0);
    for (uint32_t w = half; w < nw; ++w) img.warp_thread_block[w] = 1;
    img.num_thread_blocks = 2;
    img.thread_block_unit = {0, 1};
    img.expected_macs = ((active & 1) ? uint64_t(large.m) * large.n * large.k : 0) +
                        ((active & 2) ? uint64_t(small.m) * small.n * small.k : 0);
    return img;
}

}  // namespace csim
