#include <csim/cluster.hpp>
#include <csim/fp16.hpp>
#include <csim/memory.hpp>
#include <csim/simt_core.hpp>

#include <algorithm>
#include <cmath>

namespace csim {

const char* to_string(WarpStatus s) {
    switch (s) {
        case WarpStatus::Ready: return "ready";
        case WarpStatus::WaitBarrier: return "wait-barrier";
        case WarpStatus::WaitFence: return "wait-fence";
        case WarpStatus::Done: return "done";
    }
    return "?";
}

SimtCore::SimtCore(uint32_t id, Cluster& cl)
    : id_(id), cl_(cl), cfg_(cl.cfg), lanes_(cl.cfg.lanes_per_warp) {
    smem_slots_.resize(cfg_.lsq_entries);
    for (uint32_t i = cfg_.lsq_entries; i-- > 0;) free_slots_.push_back(i);
}

void SimtCore::add_warp(uint32_t gid, uint32_t tb) {
    WarpState w;
    w.gid = gid;
    w.local = static_cast<uint32_t>(warps_.size());
    w.tb = tb;
    w.regs.assign(size_t(kNumRegs) * lanes_, 0);
    w.reg_ready.assign(kNumRegs, 0);
    w.num_chunks = cl_.img.program->num_chunks(gid);
    warps_.push_back(std::move(w));
}

bool SimtCore::refill(WarpState& w) {
    while (w.pc >= w.buf.size()) {
        if (w.next_chunk >= w.num_chunks) return false;
        w.buf.clear();
        w.pc = 0;
        cl_.img.program->emit_chunk(w.gid, w.next_chunk++, w.buf);
    }
    return true;
}

bool SimtCore::finished() const {
    for (const auto& w : warps_)
        if (w.status != WarpStatus::Done || !w.rob.empty()) return false;
    return true;
}

std::optional<uint32_t> SimtCore::schedule(uint64_t cycle) const {
    const uint32_t n = static_cast<uint32_t>(warps_.size());
    for (uint32_t i = 0; i < n; ++i) {
        const uint32_t idx = (last_issued_ + 1 + i) % n;
        const WarpState& w = warps_[idx];
        if (w.status == WarpStatus::Done || w.status == WarpStatus::WaitBarrier) continue;
        if (cycle < w.wake_at) continue;
        return idx;
    }
    return std::nullopt;
}

uint64_t SimtCore::next_event(uint64_t cycle) const {
    uint64_t t = UINT64_MAX;
    for (const auto& w : warps_) {
        if (!w.rob.empty()) t = std::min(t, std::max(cycle + 1, w.rob.front().done));
        if (w.status == WarpStatus::Ready || w.status == WarpStatus::WaitFence)
            t = std::min(t, std::max(cycle + 1, w.wake_at));
    }
    return t;
}

void SimtCore::release(uint32_t local, uint64_t cycle) {
    WarpState& w = warps_.at(local);
    w.status = WarpStatus::Ready;
    w.wake_at = cycle + 1;
}

void SimtCore::wgmma_complete(uint32_t local, uint8_t c_reg, uint64_t ready) {
    WarpState& w = warps_.at(local);
    for (uint32_t r = 0; r < 32; ++r) w.reg_ready[c_reg + r] = ready;
    --w.wgmma_pending;
}

bool SimtCore::operands_ready(const WarpState& w, const MicroOp& op, uint64_t cycle) const {
    const RegUse u = reg_use(op, cfg_.precision);
    for (uint8_t i = 0; i < u.n_reads; ++i)
        if (w.reg_ready[u.reads[i]] > cycle) return false;
    for (uint8_t i = 0; i < u.n_writes; ++i)
        if (w.reg_ready[u.writes[i]] > cycle) return false;
    return true;
}

void SimtCore::push_rob(WarpState& w, const MicroOp& op, uint64_t done, bool lsq) {
    w.rob.push_back(WarpState::RobEntry{done, op.kind, op.tag, lsq});
    if (lsq) {
        ++lsq_used_;
        ++w.mem_inflight;
    }
}

void SimtCore::set_rob_done(WarpState& w, uint64_t seq, uint64_t done) { w.rob.at(seq - w.rob_base).done = done; }

void SimtCore::account_issue(WarpState& w, const MicroOp& op, uint64_t cycle) {
    EventLedger& l = cl_.ledger;
    ++l.issued;
    const RfTraffic t = rf_traffic(op, lanes_, cfg_.element_bytes(), cfg_.matrix_cfg.tile_k);
    l.rf_read_bytes[size_t(RfPurpose::Operand)] += t.operand_read;
    l.rf_write_bytes[size_t(RfPurpose::Operand)] += t.operand_write;
    l.rf_read_bytes[size_t(RfPurpose::Accumulator)] += t.accum_read;
    l.rf_write_bytes[size_t(RfPurpose::Accumulator)] += t.accum_write;
    l.rf_read_bytes[size_t(RfPurpose::Scalar)] += t.scalar_read;
    l.rf_write_bytes[size_t(RfPurpose::Scalar)] += t.scalar_write;
    cl_.trace(cycle, id_, w.gid, op.kind, "issue");
}

void SimtCore::exec_fp(WarpState& w, const MicroOp& op) {
    auto reg = [&](uint8_t r, uint32_t lane) -> uint32_t& { return w.regs[size_t(r) * lanes_ + lane]; };
    for (uint32_t l = 0; l < lanes_; ++l) {
        const float a = op.src_a != kNoReg ? bits_f32(reg(op.src_a, l)) : 0.0f;
        const float b = op.src_b != kNoReg ? bits_f32(reg(op.src_b, l)) : 0.0f;
        const float c = op.src_c != kNoReg ? bits_f32(reg(op.src_c, l)) : 0.0f;
        float r = 0.0f;
        switch (op.fp) {
            case FpFunc::Add: r = a + b; break;
            case FpFunc::Sub: r = a - b; break;
            case FpFunc::Mul: r = a * b; break;
            case FpFunc::Fma: r = std::fma(a, b, c); break;
            case FpFunc::Max: r = std::max(a, b); break;
            case FpFunc::Mov: r = a; break;
            case FpFunc::MovImm: r = bits_f32(op.value); break;
            case FpFunc::Div: r = a / b; break;
        }
        reg(op.dst, l) = f32_bits(r);
    }
}

bool SimtCore::issue_smem(WarpState& w, const MicroOp& op, uint64_t cycle) {
    const bool load = op.kind == OpKind::LoadShared;
    uint32_t uniq_addr[32];
    uint32_t uniq_lane[32];   // last lane mapping to the word (store data source)
    uint32_t n_uniq = 0;
    std::array<uint8_t, 32> lane_word{};
    for (uint32_t l = 0; l < lanes_; ++l) {
        const uint32_t a = op.addr.addr(l);
        uint32_t u = 0;
        while (u < n_uniq && uniq_addr[u] != a) ++u;
        if (u == n_uniq) uniq_addr[n_uniq++] = a;
        uniq_lane[u] = l;
        lane_word[l] = static_cast<uint8_t>(u);
    }
    std::vector<uint32_t> need(cfg_.smem_banks, 0);
    for (uint32_t u = 0; u < n_uniq; ++u) ++need[cl_.fabric.route(uniq_addr[u]).bank];
    for (uint32_t b = 0; b < cfg_.smem_banks; ++b)
        if (need[b] > cl_.fabric.core_queue_free(b)) return false;

    const uint32_t slot = free_slots_.back();
    free_slots_.pop_back();
    SmemAccess& s = smem_slots_[slot];
    s.active = true;
    s.warp = w.local;
    s.rob_seq = w.rob_base + w.rob.size();
    s.load = load;
    s.dst = load ? op.dst : kNoReg;
    s.remaining = n_uniq;
    s.last_serve = cycle;
    s.lane_word = lane_word;
    s.lanes = lanes_;
    push_rob(w, op, UINT64_MAX, true);
    if (load) {
        w.reg_ready[op.dst] = UINT64_MAX;
        if (op.flags & kFlagOperandData) cl_.ledger.smem_operand_load_bytes += uint64_t(n_uniq) * 4;
    }
    for (uint32_t u = 0; u < n_uniq; ++u) {
        MemRequest req;
        req.cls = ReqClass::Core;
        req.requester = id_;
        req.addr = uniq_addr[u];
        req.width = 4;
        req.write = !load;
        if (!load) req.data[0] = w.regs[size_t(op.src_a) * lanes_ + uniq_lane[u]];
        req.client = this;
        req.tag = (uint64_t(slot) << 8) | u;
        cl_.fabric.submit(req, cycle);
    }
    return true;
}

void SimtCore::on_served(uint64_t tag, uint64_t cycle, const uint32_t* words, uint32_t) {
    SmemAccess& s = smem_slots_.at(tag >> 8);
    const uint32_t u = static_cast<uint32_t>(tag & 0xFF);
    WarpState& w = warps_[s.warp];
    if (s.load)
        for (uint32_t l = 0; l < s.lanes; ++l)
            if (s.lane_word[l] == u) w.regs[size_t(s.dst) * lanes_ + l] = words[0];
    s.last_serve = cycle;
    if (--s.remaining == 0) {
        const uint64_t done = cycle + cfg_.latency_cfg.smem_access;
        if (s.load) w.reg_ready[s.dst] = done;
        set_rob_done(w, s.rob_seq, done);
        s.active = false;
        free_slots_.push_back(static_cast<uint32_t>(tag >> 8));
    }
}

void SimtCore::issue_global(WarpState& w, const MicroOp& op, uint64_t cycle) {
    const bool load = op.kind == OpKind::LoadGlobal;
    std::vector<LaneRequest> lanes(lanes_);
    for (uint32_t l = 0; l < lanes_; ++l) lanes[l] = LaneRequest{l, op.addr.addr(l)};
    const CoalesceResult cr = coalesce(lanes, !load, cl_.hier.line_bytes());
    if (!cr.residue.empty()) throw SimError("unaligned global access");
    uint64_t done = cycle + 1;
    for (const auto& m : cr.merged) {
        const uint64_t at = std::max(cycle, l1_port_free_);
        l1_port_free_ = at + 1;
        const uint32_t lat = load ? cl_.hier.load_line(id_, m.line_address) : cl_.hier.store_line(id_, m.line_address);
        done = std::max(done, at + lat);
    }
    for (uint32_t l = 0; l < lanes_; ++l) {
        if (load)
            w.regs[size_t(op.dst) * lanes_ + l] = cl_.global.read_word(lanes[l].addr);
        else
            cl_.global.write_word(lanes[l].addr, w.regs[size_t(op.src_a) * lanes_ + l]);
    }
    if (load) w.reg_ready[op.dst] = done;
    push_rob(w, op, done, true);
}

SimtCore::Outcome SimtCore::try_issue(WarpState& w, uint64_t cycle) {
    const MicroOp& op = w.buf[w.pc];
    if (!operands_ready(w, op, cycle)) return Outcome::Stalled;
    const LatencyConfig& lat = cfg_.latency_cfg;
    EventLedger& l = cl_.ledger;

    switch (op.kind) {
        case OpKind::Nop:
            push_rob(w, op, cycle + 1, false);
            break;
        case OpKind::Alu:
            if (op.dst != kNoReg) w.reg_ready[op.dst] = cycle + lat.alu;
            l.alu_lane_ops += lanes_;
            push_rob(w, op, cycle + lat.alu, false);
            break;
        case OpKind::FpOp:
            exec_fp(w, op);
            w.reg_ready[op.dst] = cycle + lat.fpu;
            l.fpu_lane_ops += lanes_;
            push_rob(w, op, cycle + lat.fpu, false);
            break;
        case OpKind::LoadShared:
        case OpKind::StoreShared:
            if (lsq_used_ >= cfg_.lsq_entries || free_slots_.empty()) return Outcome::Stalled;
            if (!issue_smem(w, op, cycle)) return Outcome::Stalled;
            break;
        case OpKind::LoadGlobal:
        case OpKind::StoreGlobal:
            if (lsq_used_ >= cfg_.lsq_entries) return Outcome::Stalled;
            issue_global(w, op, cycle);
            break;
        case OpKind::HmmaSetStep: {
            TcUnit& tc = cl_.tc_unit(id_);
            if (tc.busy_until > cycle) return Outcome::Stalled;
            uint32_t* r = w.regs.data();
            hmma_step(r + size_t(op.src_a) * lanes_, r + size_t(op.src_b) * lanes_, r + size_t(op.src_c) * lanes_,
                      op.imm, cfg_.precision);
            tc.busy_until = cycle + tc.step_cycles;
            for (uint32_t i = 0; i < 8; ++i) w.reg_ready[op.src_c + i] = cycle + tc.step_cycles;
            l.macs += 64;
            push_rob(w, op, cycle + tc.step_cycles, false);
            break;
        }
        case OpKind::WgmmaInit: {
            WgmmaUnit& u = cl_.wgmma_unit(id_);
            WgmmaCommand c;
            c.warp = w.gid;
            c.a_base = op.addr.base;
            c.lda = static_cast<uint32_t>(op.addr.lane_stride);
            c.b_base = op.value;
            c.ldb = op.addr.row_stride;
            c.k = cfg_.matrix_cfg.tile_k;
            c.c_reg = op.dst;
            c.accumulate = op.flags & kFlagAccumulate;
            if (!u.initiate(c)) return Outcome::Stalled;
            for (uint32_t i = 0; i < 32; ++i) w.reg_ready[op.dst + i] = UINT64_MAX;
            ++w.wgmma_pending;
            push_rob(w, op, cycle + 1, false);
            break;
        }
        case OpKind::WgmmaWait:
            if (w.wgmma_pending > 0) return Outcome::Stalled;
            push_rob(w, op, cycle + 1, false);
            break;
        case OpKind::MmioWrite: {
            if (w.mem_inflight > 0) return Outcome::Stalled;
            const MmioResult r = cl_.mmio_write(w.gid, op.imm, op.value, cycle);
            if (r == MmioResult::Unmapped) throw SimError("MMIO write to unmapped address " + std::to_string(op.imm));
            if (r == MmioResult::Rejected) {
                ++l.mmio_rejects;
                return Outcome::Stalled;
            }
            ++l.mmio_accesses;
            push_rob(w, op, cycle + lat.mmio_access, false);
            break;
        }
        case OpKind::MmioRead: {
            const uint32_t v = cl_.mmio_read(w.gid, op.imm);
            ++l.mmio_accesses;
            if (op.flags & kFlagFence) {
                w.ever_fenced = true;
                if (v > op.value) {
                    // Failed poll: retires as an MMIO read, the fence stays at the PC.
                    if (!w.in_fence) {
                        w.in_fence = true;
                        w.fence_first_poll = cycle;
                    }
                    w.status = WarpStatus::WaitFence;
                    w.wake_at = cycle + lat.fence_poll_interval;
                    push_rob(w, op, cycle + lat.mmio_access, false);
                    account_issue(w, op, cycle);
                    cl_.trace(cycle, id_, w.gid, op.kind, "fence-wait");
                    return Outcome::Issued;
                }
                if (w.in_fence) {
                    l.fence_poll_cycles += cycle - w.fence_first_poll;
                    w.in_fence = false;
                }
                ++l.fence_instances;
            } else if (op.dst != kNoReg) {
                for (uint32_t i = 0; i < lanes_; ++i) w.regs[size_t(op.dst) * lanes_ + i] = v;
                w.reg_ready[op.dst] = cycle + lat.mmio_access;
            }
            push_rob(w, op, cycle + lat.mmio_access, false);
            break;
        }
        case OpKind::Barrier: {
            if (w.mem_inflight > 0) return Outcome::Stalled;
            push_rob(w, op, cycle + 1, false);
            account_issue(w, op, cycle);
            ++w.pc;
            if (cl_.barrier_arrive(w.gid, op, cycle)) {
                w.status = WarpStatus::WaitBarrier;
                cl_.trace(cycle, id_, w.gid, op.kind, "barrier-wait");
            }
            return Outcome::Issued;
        }
    }
    account_issue(w, op, cycle);
    ++w.pc;
    return Outcome::Issued;
}

void SimtCore::issue(uint64_t cycle) {
    const uint32_t n = static_cast<uint32_t>(warps_.size());
    uint32_t issued = 0;
    for (uint32_t i = 0; i < n && issued < cfg_.latency_cfg.issue_width_per_core; ++i) {
        const uint32_t idx = (last_issued_ + 1 + i) % n;
        WarpState& w = warps_[idx];
        if (w.status == WarpStatus::Done || w.status == WarpStatus::WaitBarrier) continue;
        if (cycle < w.wake_at) continue;
        if (w.status == WarpStatus::WaitFence) w.status = WarpStatus::Ready;
        if (!refill(w)) {
            w.status = WarpStatus::Done;
            continue;
        }
        const MicroOp& op = w.buf[w.pc];
        const Outcome o = try_issue(w, cycle);
        if (o == Outcome::Issued) {
            ++issued;
            last_issued_ = idx;
        } else {
            ++cl_.ledger.issue_stalls;
            cl_.trace(cycle, id_, w.gid, op.kind, "stall");
        }
    }
}

void SimtCore::retire(uint64_t cycle) {
    EventLedger& l = cl_.ledger;
    for (auto& w : warps_) {
        while (!w.rob.empty() && w.rob.front().done <= cycle) {
            const auto& e = w.rob.front();
            ++l.retired[size_t(e.kind)];
            ++l.retired_by_tag[size_t(e.tag)];
            if (e.lsq) {
                --lsq_used_;
                --w.mem_inflight;
            }
            cl_.record_retire(cycle, w.gid, e.kind);
            w.rob.pop_front();
            ++w.rob_base;
        }
    }
}

}  // namespace csim
