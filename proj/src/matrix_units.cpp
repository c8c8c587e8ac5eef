#include <csim/cluster.hpp>
#include <csim/fp16.hpp>
#include <csim/matrix_units.hpp>

#include <algorithm>
#include <cstring>
#include <string>

namespace csim {

namespace {

enum : uint64_t { kTagB = 1, kTagA = 2, kTagPreload = 3, kTagWriteback = 4 };

inline uint64_t make_tag(uint64_t kind, uint64_t a, uint64_t b = 0) { return (kind << 56) | (a << 28) | b; }
inline uint64_t tag_kind(uint64_t t) { return t >> 56; }
inline uint64_t tag_a(uint64_t t) { return (t >> 28) & 0xFFFFFFF; }
inline uint64_t tag_b(uint64_t t) { return t & 0xFFFFFFF; }

/// Decode `n` elements from little-endian words in storage precision.
void decode(const uint32_t* words, uint32_t n, bool fp16, float* out) {
    if (fp16) {
        for (uint32_t i = 0; i < n; ++i) {
            const uint32_t w = words[i / 2];
            out[i] = half_to_float(static_cast<uint16_t>((i % 2) ? (w >> 16) : (w & 0xFFFF)));
        }
    } else {
        for (uint32_t i = 0; i < n; ++i) out[i] = bits_f32(words[i]);
    }
}

}  // namespace

// ===========================================================================
// Tightly-coupled step
// ===========================================================================

void hmma_step(const uint32_t* a_regs, const uint32_t* b_regs, uint32_t* c_regs, uint32_t k, Precision p) {
    float a[8], b[8];
    if (p == Precision::FP16in_FP32acc) {
        for (uint32_t r = 0; r < 8; ++r) {
            const uint32_t w = a_regs[r * 8 + k / 2];
            a[r] = half_to_float(static_cast<uint16_t>((k % 2) ? (w >> 16) : (w & 0xFFFF)));
        }
        const uint32_t* breg = b_regs + (k / 2) * 8;
        for (uint32_t n = 0; n < 8; ++n) {
            const uint32_t w = breg[(k % 2) * 4 + n / 2];
            b[n] = half_to_float(static_cast<uint16_t>((n % 2) ? (w >> 16) : (w & 0xFFFF)));
        }
    } else {
        for (uint32_t r = 0; r < 8; ++r) a[r] = bits_f32(a_regs[r * 8 + k]);
        for (uint32_t n = 0; n < 8; ++n) b[n] = bits_f32(b_regs[k * 8 + n]);
    }
    for (uint32_t r = 0; r < 8; ++r)
        for (uint32_t c = 0; c < 8; ++c) c_regs[r * 8 + c] = f32_bits(bits_f32(c_regs[r * 8 + c]) + a[r] * b[c]);
}

// ===========================================================================
// Operand-decoupled unit
// ===========================================================================

WgmmaUnit::WgmmaUnit(uint32_t id, const SoCConfig& cfg)
    : id_(id),
      es_(cfg.element_bytes()),
      kc_(32 / cfg.element_bytes()),
      macs_per_cycle_(cfg.matrix_cfg.macs_per_unit_per_cycle),
      fifo_depth_(cfg.matrix_cfg.fifo_depth),
      segs_per_brow_(16 * cfg.element_bytes() / 32),
      fp16_(cfg.precision == Precision::FP16in_FP32acc) {
    b_block_.assign(2, std::vector<float>(kc_ * 16, 0.0f));
    acc_.assign(256, 0.0f);
}

bool WgmmaUnit::initiate(const WgmmaCommand& cmd) {
    if (active_) return false;
    active_ = true;
    cmd_ = cmd;
    nkb_ = cmd.k / kc_;
    fe_kb_ = fe_phase_ = fe_idx_ = 0;
    a_inflight_ = 0;
    b_seg_arrived_ = {0, 0};
    b_block_kb_ = {-1, -1};
    a_fifo_.clear();
    be_kb_ = be_row_ = 0;
    be_in_group_ = false;
    be_busy_until_ = 0;
    std::fill(acc_.begin(), acc_.end(), 0.0f);
    return true;
}

void WgmmaUnit::tick(Cluster& cl, uint64_t cycle) {
    if (!active_) return;

    // Access frontend: one 32-byte request per cycle, B segments of a k-block then its A rows.
    if (fe_kb_ < nkb_) {
        const uint32_t buf = fe_kb_ % 2;
        MemRequest req;
        req.cls = ReqClass::Matrix;
        req.requester = id_;
        req.width = 32;
        req.client = this;
        if (fe_phase_ == 0) {
            if (b_block_kb_[buf] == -1 || b_block_kb_[buf] == static_cast<int32_t>(fe_kb_)) {
                if (fe_idx_ == 0) {
                    b_block_kb_[buf] = static_cast<int32_t>(fe_kb_);
                    b_seg_arrived_[buf] = 0;
                }
                const uint32_t r = fe_idx_ / segs_per_brow_, part = fe_idx_ % segs_per_brow_;
                req.addr = cmd_.b_base + (fe_kb_ * kc_ + r) * cmd_.ldb + part * 32;
                req.tag = make_tag(kTagB, buf, fe_idx_);
                cl.fabric.submit(req, cycle);
                if (++fe_idx_ == kc_ * segs_per_brow_) {
                    fe_phase_ = 1;
                    fe_idx_ = 0;
                }
            }
        } else if (a_fifo_.size() < fifo_depth_) {
            req.addr = cmd_.a_base + fe_idx_ * cmd_.lda + fe_kb_ * 32;
            req.tag = make_tag(kTagA, fe_kb_, fe_idx_);
            cl.fabric.submit(req, cycle);
            a_fifo_.push_back(ARow{fe_kb_, fe_idx_, false, std::vector<float>(kc_, 0.0f)});
            max_fifo_ = std::max<uint32_t>(max_fifo_, static_cast<uint32_t>(a_fifo_.size()));
            if (++fe_idx_ == 16) {
                fe_idx_ = 0;
                fe_phase_ = 0;
                ++fe_kb_;
            }
        }
    }

    // Execute backend: one A row against the resident B block per MAC group.
    if (be_in_group_ && cycle >= be_busy_until_) {
        be_in_group_ = false;
        if (++be_row_ == 16) {
            b_block_kb_[be_kb_ % 2] = -1;
            be_row_ = 0;
            ++be_kb_;
        }
    }
    if (!be_in_group_ && be_kb_ < nkb_) {
        const uint32_t buf = be_kb_ % 2;
        const bool b_ok = b_block_kb_[buf] == static_cast<int32_t>(be_kb_) &&
                          b_seg_arrived_[buf] == kc_ * segs_per_brow_;
        const bool a_ok = !a_fifo_.empty() && a_fifo_.front().ready && a_fifo_.front().kb == be_kb_ &&
                          a_fifo_.front().row == be_row_;
        if (b_ok && a_ok) {
            const auto& arow = a_fifo_.front().v;
            const auto& bb = b_block_[buf];
            for (uint32_t c = 0; c < 16; ++c) {
                float s = 0.0f;
                for (uint32_t kk = 0; kk < kc_; ++kk) s += arow[kk] * bb[kk * 16 + c];
                acc_[be_row_ * 16 + c] += s;
            }
            const uint32_t group_macs = kc_ * 16;
            cl.ledger.macs += group_macs;
            be_busy_until_ = cycle + std::max<uint32_t>(1, group_macs / macs_per_cycle_);
            be_in_group_ = true;
            a_fifo_.pop_front();
        } else {
            ++backend_stalls_;
        }
    }
    if (be_kb_ == nkb_ && !be_in_group_) {
        uint32_t* regs = cl.warp_regs(cmd_.warp);
        for (uint32_t i = 0; i < 16; ++i)
            for (uint32_t j = 0; j < 16; ++j) {
                uint32_t& w = regs[(cmd_.c_reg + i * 2 + j / 8) * 8 + j % 8];
                const float prev = cmd_.accumulate ? bits_f32(w) : 0.0f;
                w = f32_bits(prev + acc_[i * 16 + j]);
            }
        cl.wgmma_complete(cmd_.warp, cmd_.c_reg, cycle + 1);
        active_ = false;
    }
}

void WgmmaUnit::on_served(uint64_t tag, uint64_t, const uint32_t* words, uint32_t n) {
    if (tag_kind(tag) == kTagB) {
        const uint32_t buf = static_cast<uint32_t>(tag_a(tag));
        const uint32_t seg = static_cast<uint32_t>(tag_b(tag));
        const uint32_t r = seg / segs_per_brow_, part = seg % segs_per_brow_;
        const uint32_t elems = n * 4 / es_;
        decode(words, elems, fp16_, &b_block_[buf][r * 16 + part * elems]);
        ++b_seg_arrived_[buf];
    } else {
        const uint32_t kb = static_cast<uint32_t>(tag_a(tag));
        const uint32_t row = static_cast<uint32_t>(tag_b(tag));
        for (auto& e : a_fifo_) {
            if (e.kb == kb && e.row == row) {
                decode(words, kc_, fp16_, e.v.data());
                e.ready = true;
                break;
            }
        }
    }
}

// ===========================================================================
// Disaggregated unit
// ===========================================================================

DisaggUnit::DisaggUnit(uint32_t id, const MatrixUnitConfig& mc, const SoCConfig& cfg)
    : id_(id),
      mc_(mc),
      es_(cfg.element_bytes()),
      rows_(mc.systolic_rows),
      cols_(mc.systolic_cols),
      seg_bytes_(mc.systolic_rows * cfg.element_bytes()),
      fp16_(cfg.precision == Precision::FP16in_FP32acc),
      smem_latency_(cfg.latency_cfg.smem_access),
      queue_depth_(mc.command_queue_depth) {
    acc_.assign(mc.accumulator_bytes / 4, 0.0f);
}

void DisaggUnit::acc_claim(uint64_t cycle, EventLedger& l) {
    if (acc_last_cycle_ != cycle) {
        acc_last_cycle_ = cycle;
        acc_this_cycle_ = 0;
    }
    ++acc_this_cycle_;
    max_acc_per_cycle_ = std::max(max_acc_per_cycle_, acc_this_cycle_);
    ++l.accumulator_access_count;
}

MmioResult DisaggUnit::mmio_write(uint32_t reg, uint32_t value, uint32_t tb, Cluster& cl, uint64_t) {
    if (reg % 4 != 0 || reg > mmio::kGo) return MmioResult::Unmapped;
    if (reg != mmio::kGo) {
        regs_[reg / 4] = value;
        return MmioResult::Accepted;
    }
    const size_t occupancy = queue_.size() + (active_ ? 1 : 0);
    if (occupancy >= queue_depth_) return MmioResult::Rejected;

    TileCommand c;
    c.op = TileOp::Compute;
    c.a_base = regs_[mmio::kAAddr / 4];
    c.b_base = regs_[mmio::kBAddr / 4];
    c.d_base = regs_[mmio::kDAddr / 4];
    const uint32_t dims = regs_[mmio::kDims / 4];
    c.m = dims & 0x3FF;
    c.n = (dims >> 10) & 0x3FF;
    c.k = (dims >> 20) & 0x3FF;
    c.lda = regs_[mmio::kLda / 4];
    c.ldb = regs_[mmio::kLdb / 4];
    const uint32_t ctrl = regs_[mmio::kCtrl / 4];
    c.ldd = ctrl & 0xFFFFF;
    c.accumulate = ctrl & mmio::kCtrlAccumulate;
    c.b_transpose = ctrl & mmio::kCtrlBTranspose;
    c.slot = (ctrl >> mmio::kCtrlSlotShift) & 0x3;
    c.tb = tb;

    auto bad = [&](const std::string& why) {
        throw SimError("matrix unit " + std::to_string(id_) + ": invalid command (" + why + ")");
    };
    if (c.m == 0 || c.n == 0 || c.k == 0) bad("zero extent");
    if (c.m > mc_.tile_m || c.n > mc_.tile_n || c.k > mc_.tile_k) bad("extent exceeds the unit tile");
    if (c.n % cols_ || c.k % rows_) bad("n and k must be multiples of the array size");
    const bool d_acc = (c.d_base & mmio::kSpaceMask) == mmio::kAccumSpace;
    if (d_acc) {
        if (((c.d_base >> 24) & 0x3F) != id_) bad("accumulator address belongs to another unit");
        const uint64_t end = (c.d_base & 0xFFFFFF) + uint64_t(c.m - 1) * c.ldd + uint64_t(c.n) * 4;
        if (end > accumulator_bytes()) bad("D region exceeds the accumulator");
    } else if (uint64_t(c.m) * c.n * 4 > accumulator_bytes() / 2) {
        bad("shared-memory D tile exceeds a scratch half of the accumulator");
    }
    c.ticket = cl.tracker(tb).issue();
    queue_.push_back(c);
    return MmioResult::Accepted;
}

uint32_t DisaggUnit::mmio_read(uint32_t reg) const {
    if (reg == mmio::kStatus)
        return (busy() ? 1u : 0u) | (static_cast<uint32_t>(queue_.size()) << 8);
    if (reg < mmio::kGo) return regs_[reg / 4];
    return 0;
}

uint32_t DisaggUnit::d_acc_word(uint32_t i, uint32_t col) const { return d_acc_base_word_ + i * d_ld_words_ + col; }

void DisaggUnit::start_command(Cluster&, uint64_t cycle) {
    cmd_ = queue_.front();
    queue_.pop_front();
    active_ = true;
    cmd_start_ = cycle;
    first_active_ = std::min(first_active_, cycle);
    d_in_smem_ = (cmd_.d_base & mmio::kSpaceMask) != mmio::kAccumSpace;
    if (d_in_smem_) {
        d_acc_base_word_ = cmd_.slot * static_cast<uint32_t>(acc_.size() / 2);
        d_ld_words_ = cmd_.n;
    } else {
        d_acc_base_word_ = (cmd_.d_base & 0xFFFFFF) / 4;
        d_ld_words_ = cmd_.ldd / 4;
    }
    nj_ = cmd_.n / cols_;
    nkb_ = cmd_.k / rows_;
    cur_block_ = 0;
    stream_i_ = 0;
    a_next_i_ = 0;
    for (auto& b : bbuf_) {
        b.block = -1;
        b.arrived = b.issued = 0;
        b.v.assign(size_t(rows_) * cols_, 0.0f);
    }
    a_fifo_.clear();
    writes_.clear();
    preload_arrived_.clear();
    chunk_issued_ = chunk_done_ = 0;
    chunks_total_ = cmd_.m * (cmd_.n * 4 / 32);
    phase_ = (d_in_smem_ && cmd_.accumulate) ? Phase::Preload : Phase::Compute;
}

void DisaggUnit::finish_command(Cluster& cl, uint64_t cycle) {
    cl.tracker(cmd_.tb).complete(cmd_.ticket);
    ++completed_;
    spans_.emplace_back(cmd_start_, cycle);
    last_active_ = cycle;
    active_ = false;
    phase_ = Phase::Idle;
}

void DisaggUnit::issue_b_segment(Cluster& cl, uint64_t cycle, BBuf& buf, int64_t block) {
    const uint32_t j = static_cast<uint32_t>(block / nkb_), kb = static_cast<uint32_t>(block % nkb_);
    MemRequest req;
    req.cls = ReqClass::Matrix;
    req.requester = id_;
    req.client = this;
    const uint32_t s = buf.issued;
    if (cmd_.b_transpose) {
        req.addr = cmd_.b_base + (j * cols_ + s) * cmd_.ldb + kb * rows_ * es_;
        req.width = rows_ * es_;
    } else {
        req.addr = cmd_.b_base + (kb * rows_ + s) * cmd_.ldb + j * cols_ * es_;
        req.width = cols_ * es_;
    }
    req.tag = make_tag(kTagB, static_cast<uint64_t>(&buf - bbuf_.data()), s);
    cl.fabric.submit(req, cycle);
    ++buf.issued;
}

void DisaggUnit::tick_compute(Cluster& cl, uint64_t cycle) {
    const int64_t total_blocks = int64_t(nj_) * nkb_;
    const uint32_t segs = cmd_.b_transpose ? cols_ : rows_;

    // Request issue: two request ports per cycle.
    uint32_t slots = 2;
    if (cur_block_ < total_blocks) {
        BBuf& cb = bbuf_[cur_block_ % 2];
        if (cb.block != cur_block_) {
            cb.block = cur_block_;
            cb.arrived = cb.issued = 0;
        }
        if (cb.issued < segs) {
            issue_b_segment(cl, cycle, cb, cur_block_);
            --slots;
        }
    }
    auto issue_a = [&]() {
        // A requests run ahead across block boundaries.
        const int64_t blk = cur_block_ + (a_next_i_ / cmd_.m);
        if (blk >= total_blocks || a_fifo_.size() >= mc_.fifo_depth) return false;
        const uint32_t i = a_next_i_ % cmd_.m;
        const uint32_t kb = static_cast<uint32_t>(blk % nkb_);
        MemRequest req;
        req.cls = ReqClass::Matrix;
        req.requester = id_;
        req.client = this;
        req.addr = cmd_.a_base + i * cmd_.lda + kb * rows_ * es_;
        req.width = seg_bytes_;
        const uint32_t seq = a_seq_++ & 0xFFFFFFF;
        req.tag = make_tag(kTagA, seq);
        cl.fabric.submit(req, cycle);
        ARow row;
        row.i = i;
        row.seq = seq;
        row.v.assign(rows_, 0.0f);
        a_fifo_.push_back(std::move(row));
        ++a_next_i_;
        return true;
    };
    if (slots && issue_a()) --slots;
    if (slots && cur_block_ + 1 < total_blocks) {
        BBuf& nb = bbuf_[(cur_block_ + 1) % 2];
        if (nb.block != cur_block_ + 1) {
            nb.block = cur_block_ + 1;
            nb.arrived = nb.issued = 0;
        }
        if (nb.issued < segs) {
            issue_b_segment(cl, cycle, nb, cur_block_ + 1);
            --slots;
        }
    }
    if (slots) issue_a();

    // Stream one A row through the array.
    if (cur_block_ < total_blocks) {
        BBuf& cb = bbuf_[cur_block_ % 2];
        const bool b_ok = cb.block == cur_block_ && cb.arrived == segs;
        const bool a_ok = !a_fifo_.empty() && a_fifo_.front().ready;
        if (b_ok && a_ok) {
            const ARow& ar = a_fifo_.front();
            const uint32_t j = static_cast<uint32_t>(cur_block_ / nkb_), kb = static_cast<uint32_t>(cur_block_ % nkb_);
            PendingWrite w;
            w.due = cycle + rows_ + cols_;
            w.acc_word = d_acc_word(ar.i, j * cols_);
            w.overwrite = kb == 0 && !cmd_.accumulate;
            w.v.assign(cols_, 0.0f);
            for (uint32_t c = 0; c < cols_; ++c) {
                float s = 0.0f;
                for (uint32_t r = 0; r < rows_; ++r) s += ar.v[r] * cb.v[r * cols_ + c];
                w.v[c] = s;
            }
            writes_.push_back(std::move(w));
            macs_ += uint64_t(rows_) * cols_;
            cl.ledger.macs += uint64_t(rows_) * cols_;
            a_fifo_.pop_front();
            if (++stream_i_ == cmd_.m) {
                stream_i_ = 0;
                a_next_i_ -= cmd_.m;
                ++cur_block_;
            }
        } else {
            ++cl.ledger.matrix_stall_cycles;
        }
    }

    // Accumulate-write into the accumulator: one access per cycle.
    if (!writes_.empty() && writes_.front().due <= cycle && acc_port_free(cycle)) {
        const PendingWrite& w = writes_.front();
        float* dst = acc_.data() + w.acc_word;
        for (uint32_t c = 0; c < cols_; ++c) dst[c] = w.overwrite ? w.v[c] : dst[c] + w.v[c];
        acc_claim(cycle, cl.ledger);
        writes_.pop_front();
    }

    if (cur_block_ == total_blocks && writes_.empty()) {
        if (d_in_smem_) {
            phase_ = Phase::Writeback;
            chunk_issued_ = chunk_done_ = 0;
        } else {
            finish_command(cl, cycle);
        }
    }
}

void DisaggUnit::tick(Cluster& cl, uint64_t cycle) {
    if (!active_) {
        if (queue_.empty()) return;
        start_command(cl, cycle);
    }
    const uint32_t chunks_per_row = cmd_.n * 4 / 32;
    switch (phase_) {
        case Phase::Preload: {
            // Issue one 32-byte read of D per cycle; served chunks land in the scratch half.
            if (chunk_issued_ < chunks_total_) {
                const uint32_t i = chunk_issued_ / chunks_per_row, c = chunk_issued_ % chunks_per_row;
                MemRequest req;
                req.cls = ReqClass::Matrix;
                req.requester = id_;
                req.client = this;
                req.addr = cmd_.d_base + i * cmd_.ldd + c * 32;
                req.width = 32;
                req.tag = make_tag(kTagPreload, chunk_issued_);
                cl.fabric.submit(req, cycle);
                ++chunk_issued_;
            }
            if (!preload_arrived_.empty() && acc_port_free(cycle)) {
                const auto& [chunk, v] = preload_arrived_.front();
                float* dst = acc_.data() + d_acc_word(chunk / chunks_per_row, (chunk % chunks_per_row) * 8);
                std::copy(v.begin(), v.end(), dst);
                acc_claim(cycle, cl.ledger);
                preload_arrived_.pop_front();
                ++chunk_done_;
            }
            if (chunk_done_ == chunks_total_) phase_ = Phase::Compute;
            break;
        }
        case Phase::Compute:
        case Phase::Drain:
            tick_compute(cl, cycle);
            break;
        case Phase::Writeback: {
            if (chunk_issued_ < chunks_total_ && acc_port_free(cycle)) {
                const uint32_t i = chunk_issued_ / chunks_per_row, c = chunk_issued_ % chunks_per_row;
                MemRequest req;
                req.cls = ReqClass::Matrix;
                req.requester = id_;
                req.client = this;
                req.write = true;
                req.addr = cmd_.d_base + i * cmd_.ldd + c * 32;
                req.width = 32;
                const float* src = acc_.data() + d_acc_word(i, c * 8);
                for (uint32_t w = 0; w < 8; ++w) req.data[w] = f32_bits(src[w]);
                req.tag = make_tag(kTagWriteback, chunk_issued_);
                acc_claim(cycle, cl.ledger);
                cl.fabric.submit(req, cycle);
                ++chunk_issued_;
            }
            if (chunk_done_ == chunks_total_) finish_command(cl, cycle);
            break;
        }
        case Phase::Idle:
            break;
    }
}

void DisaggUnit::on_served(uint64_t tag, uint64_t, const uint32_t* words, uint32_t n) {
    switch (tag_kind(tag)) {
        case kTagB: {
            BBuf& b = bbuf_[tag_a(tag)];
            const uint32_t s = static_cast<uint32_t>(tag_b(tag));
            const uint32_t elems = n * 4 / es_;
            float tmp[32];
            decode(words, elems, fp16_, tmp);
            if (cmd_.b_transpose) {
                for (uint32_t r = 0; r < elems; ++r) b.v[r * cols_ + s] = tmp[r];
            } else {
                for (uint32_t c = 0; c < elems; ++c) b.v[s * cols_ + c] = tmp[c];
            }
            ++b.arrived;
            break;
        }
        case kTagA: {
            const uint32_t seq = static_cast<uint32_t>(tag_a(tag));
            for (auto& e : a_fifo_) {
                if (e.seq == seq) {
                    decode(words, rows_, fp16_, e.v.data());
                    e.ready = true;
                    break;
                }
            }
            break;
        }
        case kTagPreload: {
            std::array<float, 8> v{};
            for (uint32_t w = 0; w < n && w < 8; ++w) v[w] = bits_f32(words[w]);
            preload_arrived_.emplace_back(static_cast<uint32_t>(tag_a(tag)), v);
            break;
        }
        case kTagWriteback:
            ++chunk_done_;
            break;
    }
}

// ===========================================================================
// DMA engine
// ===========================================================================

DmaEngine::DmaEngine(const SoCConfig& cfg, uint32_t channels)
    : cfg_(cfg), ch_(channels), row_bytes_(cfg.smem_subbanks_per_bank * 4) {}

DmaDir DmaEngine::direction(const DmaDescriptor& d) {
    const uint32_t s = d.src & mmio::kSpaceMask, t = d.dst & mmio::kSpaceMask;
    if (s == mmio::kGlobalSpace && t == mmio::kSmemSpace) return DmaDir::GlobalToSmem;
    if (s == mmio::kSmemSpace && t == mmio::kGlobalSpace) return DmaDir::SmemToGlobal;
    if (s == mmio::kAccumSpace && t == mmio::kGlobalSpace) return DmaDir::AccumToGlobal;
    if (s == mmio::kGlobalSpace && t == mmio::kAccumSpace) return DmaDir::GlobalToAccum;
    throw SimError("DMA: unsupported address-space pair");
}

MmioResult DmaEngine::mmio_write(uint32_t tb, uint32_t reg, uint32_t value, Cluster& cl, uint64_t) {
    cl_ = &cl;
    if (tb >= ch_.size() || reg % 4 != 0 || reg > mmio::kDmaGo) return MmioResult::Unmapped;
    Channel& c = ch_[tb];
    if (reg != mmio::kDmaGo) {
        c.regs[reg / 4] = value;
        return MmioResult::Accepted;
    }
    if (c.queue.size() >= kChannelQueueDepth) return MmioResult::Rejected;
    Active a;
    a.d.src = c.regs[mmio::kDmaSrc / 4];
    a.d.dst = c.regs[mmio::kDmaDst / 4];
    a.d.rows = c.regs[mmio::kDmaRows / 4];
    a.d.row_bytes = c.regs[mmio::kDmaRowBytes / 4];
    a.d.src_stride = c.regs[mmio::kDmaSrcStride / 4];
    a.d.dst_stride = c.regs[mmio::kDmaDstStride / 4];
    a.d.tb = tb;
    a.d.ticket = cl.tracker(tb).issue();

    bool error = false;
    const uint32_t ss = a.d.src & mmio::kSpaceMask, ds = a.d.dst & mmio::kSpaceMask;
    try {
        a.dir = direction(a.d);
    } catch (const SimError&) {
        error = true;
    }
    if (!error && ss == ds) error = true;
    auto smem_ok = [&](uint32_t addr, uint32_t stride) {
        return addr % row_bytes_ == 0 && (a.d.rows <= 1 || stride % row_bytes_ == 0) &&
               uint64_t(addr) + uint64_t(a.d.rows ? a.d.rows - 1 : 0) * stride + a.d.row_bytes <= cfg_.smem_bytes;
    };
    if (!error && a.dir == DmaDir::GlobalToSmem && !smem_ok(a.d.dst, a.d.dst_stride)) error = true;
    if (!error && a.dir == DmaDir::SmemToGlobal && !smem_ok(a.d.src, a.d.src_stride)) error = true;
    if (!error && a.d.row_bytes % 4 != 0) error = true;
    if (error || a.d.rows == 0 || a.d.row_bytes == 0) {
        if (error) ++cl.ledger.dma_errors;
        cl.tracker(tb).complete(a.d.ticket);
        return MmioResult::Accepted;
    }
    c.queue.push_back(a);
    return MmioResult::Accepted;
}

uint32_t DmaEngine::mmio_read(uint32_t tb, uint32_t reg) const {
    if (tb >= ch_.size()) return 0;
    if (reg == mmio::kDmaStatus)
        return (busy(tb) ? 1u : 0u) | (static_cast<uint32_t>(ch_[tb].queue.size()) << 8);
    if (reg < mmio::kDmaGo) return ch_[tb].regs[reg / 4];
    return 0;
}

bool DmaEngine::busy(uint32_t tb) const { return tb < ch_.size() && !ch_[tb].queue.empty(); }

bool DmaEngine::idle() const {
    for (const auto& c : ch_)
        if (!c.queue.empty()) return false;
    return inflight_ == 0;
}

void DmaEngine::submit_smem_writes(Cluster& cl, uint64_t cycle, uint32_t ch, uint32_t smem_addr,
                                   const uint8_t* data, uint32_t len) {
    uint32_t off = 0;
    while (off < len) {
        const uint32_t addr = smem_addr + off;
        const uint32_t piece = std::min(len - off, row_bytes_ - addr % row_bytes_);
        MemRequest req;
        req.cls = ReqClass::Dma;
        req.requester = ch;
        req.write = true;
        req.addr = addr;
        req.width = piece;
        std::memcpy(req.data.data(), data + off, piece);
        req.client = this;
        req.tag = make_tag(kTagWriteback, ch);
        cl.fabric.submit(req, cycle);
        ++ch_[ch].queue.front().beats_outstanding;
        off += piece;
    }
}

bool DmaEngine::issue_beat(Cluster& cl, uint64_t cycle, uint32_t ch, Active& a, uint32_t budget) {
    const uint32_t len = std::min(budget, a.d.row_bytes - a.off);
    const uint32_t src = (a.d.src & ~mmio::kSpaceMask) + a.row * a.d.src_stride + a.off;
    const uint32_t dst = (a.d.dst & ~mmio::kSpaceMask) + a.row * a.d.dst_stride + a.off;
    const uint32_t line = cl.hier.line_bytes();
    switch (a.dir) {
        case DmaDir::GlobalToSmem:
        case DmaDir::GlobalToAccum: {
            Beat b;
            b.channel = ch;
            b.dst = dst;
            b.len = len;
            cl.global.read(src, b.data.data(), len);
            uint32_t lat = 0;
            for (uint64_t l = src - src % line; l < uint64_t(src) + len; l += line)
                lat = std::max(lat, cl.hier.dma_line(l, false));
            Channel& c = ch_[ch];
            b.arrival = std::max(cycle + lat, c.last_arrival);
            c.last_arrival = b.arrival;
            c.inflight.push_back(b);
            ++inflight_;
            ++a.beats_outstanding;
            break;
        }
        case DmaDir::SmemToGlobal: {
            uint32_t off = 0;
            while (off < len) {
                const uint32_t addr = src + off;
                const uint32_t piece = std::min(len - off, row_bytes_ - addr % row_bytes_);
                MemRequest req;
                req.cls = ReqClass::Dma;
                req.requester = ch;
                req.addr = addr;
                req.width = piece;
                req.client = this;
                req.tag = make_tag(kTagA, ch, dst + off);
                cl.fabric.submit(req, cycle);
                ++a.beats_outstanding;
                off += piece;
            }
            break;
        }
        case DmaDir::AccumToGlobal: {
            DisaggUnit& u = cl.disagg_unit((a.d.src >> 24) & 0x3F);
            if (!u.acc_port_free(cycle)) return false;
            const uint32_t port = u.config().systolic_cols * 4;
            const uint32_t n = std::min(len, port);
            const uint32_t acc_off = src & 0xFFFFFF;
            if (acc_off + n > u.accumulator_bytes()) throw SimError("DMA: accumulator read out of range");
            std::vector<uint8_t> tmp(n);
            std::memcpy(tmp.data(), reinterpret_cast<const uint8_t*>(u.accumulator()) + acc_off, n);
            cl.global.write(dst, tmp.data(), n);
            for (uint64_t l = dst - dst % line; l < uint64_t(dst) + n; l += line) cl.hier.dma_line(l, true);
            u.acc_claim(cycle, cl.ledger);
            cl.ledger.dma_bytes[static_cast<size_t>(a.dir)] += n;
            a.off += n;
            if (a.off == a.d.row_bytes) {
                a.off = 0;
                if (++a.row == a.d.rows) a.issued_all = true;
            }
            return true;
        }
    }
    cl.ledger.dma_bytes[static_cast<size_t>(a.dir)] += len;
    a.off += len;
    if (a.off == a.d.row_bytes) {
        a.off = 0;
        if (++a.row == a.d.rows) a.issued_all = true;
    }
    return true;
}

void DmaEngine::maybe_complete(Cluster& cl, uint64_t cycle, uint32_t ch) {
    Channel& c = ch_[ch];
    while (!c.queue.empty() && c.queue.front().issued_all && c.queue.front().beats_outstanding == 0) {
        cl.tracker(c.queue.front().d.tb).complete(c.queue.front().d.ticket);
        c.queue.pop_front();
        (void)cycle;
    }
}

void DmaEngine::tick(Cluster& cl, uint64_t cycle) {
    cl_ = &cl;
    for (uint32_t ch = 0; ch < ch_.size(); ++ch) maybe_complete(cl, cycle, ch);

    // Deliver global-read beats, in order within each channel.
    for (uint32_t ch = 0; ch < ch_.size(); ++ch) {
        Channel& c = ch_[ch];
        while (!c.inflight.empty() && c.inflight.front().arrival <= cycle) {
            Beat& b = c.inflight.front();
            Active& a = c.queue.front();
            if (a.dir == DmaDir::GlobalToSmem) {
                submit_smem_writes(cl, cycle, ch, b.dst, b.data.data(), b.len);
            } else {
                DisaggUnit& u = cl.disagg_unit((a.d.dst >> 24) & 0x3F);
                if (!u.acc_port_free(cycle)) break;
                const uint32_t off = b.dst & 0xFFFFFF;
                if (off + b.len > u.accumulator_bytes()) throw SimError("DMA: accumulator write out of range");
                std::memcpy(reinterpret_cast<uint8_t*>(u.accumulator()) + off, b.data.data(), b.len);
                u.acc_claim(cycle, cl.ledger);
            }
            --a.beats_outstanding;
            c.inflight.pop_front();
            --inflight_;
            maybe_complete(cl, cycle, ch);
        }
    }

    // Issue one beat per cycle, round-robin over channels with work.
    const uint32_t n = static_cast<uint32_t>(ch_.size());
    if (inflight_ < 64) {
        for (uint32_t i = 0; i < n; ++i) {
            const uint32_t ch = (rr_ + i) % n;
            if (ch_[ch].queue.empty()) continue;
            Active& a = ch_[ch].queue.front();
            if (a.issued_all) continue;
            if (issue_beat(cl, cycle, ch, a, cfg_.latency_cfg.dma_bytes_per_cycle)) {
                rr_ = (ch + 1) % n;
                maybe_complete(cl, cycle, ch);
                break;
            }
        }
    }
}

void DmaEngine::on_served(uint64_t tag, uint64_t, const uint32_t* words, uint32_t n) {
    const uint32_t ch = static_cast<uint32_t>(tag_a(tag));
    Active& a = ch_[ch].queue.front();
    if (tag_kind(tag) == kTagA) {
        // Shared-memory read served: the bytes go straight to global memory.
        const uint32_t dst = static_cast<uint32_t>(tag_b(tag));
        cl_->global.write(dst, reinterpret_cast<const uint8_t*>(words), size_t(n) * 4);
        const uint32_t line = cl_->hier.line_bytes();
        for (uint64_t l = dst - dst % line; l < uint64_t(dst) + n * 4; l += line) cl_->hier.dma_line(l, true);
    }
    --a.beats_outstanding;
}

}  // namespace csim
