#include <csim/isa.hpp>

#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>

namespace csim {

const char* to_string(OpKind k) {
    switch (k) {
        case OpKind::Alu: return "Alu";
        case OpKind::FpOp: return "FpOp";
        case OpKind::LoadGlobal: return "LoadGlobal";
        case OpKind::StoreGlobal: return "StoreGlobal";
        case OpKind::LoadShared: return "LoadShared";
        case OpKind::StoreShared: return "StoreShared";
        case OpKind::HmmaSetStep: return "HmmaSetStep";
        case OpKind::WgmmaInit: return "WgmmaInit";
        case OpKind::WgmmaWait: return "WgmmaWait";
        case OpKind::MmioWrite: return "MmioWrite";
        case OpKind::MmioRead: return "MmioRead";
        case OpKind::Barrier: return "Barrier";
        case OpKind::Nop: return "Nop";
    }
    return "?";
}

const char* to_string(OpTag t) {
    switch (t) {
        case OpTag::None: return "none";
        case OpTag::Producer: return "producer";
        case OpTag::Consumer: return "consumer";
        case OpTag::Softmax: return "softmax";
        case OpTag::Epilogue: return "epilogue";
        case OpTag::Sync: return "sync";
    }
    return "?";
}

namespace {

uint32_t fp_sources(FpFunc f) {
    switch (f) {
        case FpFunc::Fma: return 3;
        case FpFunc::Mov: return 1;
        case FpFunc::MovImm: return 0;
        default: return 2;
    }
}

}  // namespace

RfTraffic rf_traffic(const MicroOp& op, uint32_t lanes, uint32_t elem_bytes, uint32_t tile_k) {
    RfTraffic t;
    const uint32_t reg = 4 * lanes;
    switch (op.kind) {
        case OpKind::Alu:
            t.scalar_read = 2 * reg;
            t.scalar_write = reg;
            break;
        case OpKind::FpOp:
            t.scalar_read = fp_sources(op.fp) * reg;
            t.scalar_write = reg;
            break;
        case OpKind::LoadGlobal:
        case OpKind::LoadShared:
            t.scalar_read = reg;
            if (op.flags & kFlagOperandData) t.operand_write = reg;
            else if (op.flags & kFlagAccumData) t.accum_write = reg;
            else t.scalar_write = reg;
            break;
        case OpKind::StoreGlobal:
        case OpKind::StoreShared:
            t.scalar_read = reg;
            if (op.flags & kFlagOperandData) t.operand_read = reg;
            else if (op.flags & kFlagAccumData) t.accum_read = reg;
            else t.scalar_read += reg;
            break;
        case OpKind::HmmaSetStep: {
            // One k-index outer product of the 8x8 tile: an A column and a B row.
            t.operand_read = 16 * elem_bytes;
            const uint32_t k = tile_k ? tile_k : 1;
            t.accum_read = 256 / k;
            t.accum_write = 256 / k;
            break;
        }
        case OpKind::WgmmaInit:
            t.scalar_read = 2 * reg;
            if (op.flags & kFlagAccumulate) t.accum_read = 16 * 16 * 4;
            t.accum_write = 16 * 16 * 4;
            break;
        case OpKind::MmioWrite:
            t.scalar_read = 2 * reg;
            break;
        case OpKind::MmioRead:
            t.scalar_read = reg;
            t.scalar_write = reg;
            break;
        case OpKind::Barrier:
            t.scalar_read = reg;
            break;
        case OpKind::WgmmaWait:
        case OpKind::Nop:
            break;
    }
    return t;
}

void annotate_rf(MicroOp& op, uint32_t lanes, uint32_t elem_bytes, uint32_t tile_k) {
    const RfTraffic t = rf_traffic(op, lanes, elem_bytes, tile_k);
    op.rf_read_bytes = static_cast<uint16_t>(t.read());
    op.rf_write_bytes = static_cast<uint16_t>(t.write());
}

RegUse reg_use(const MicroOp& op, Precision p) {
    RegUse u;
    auto rd = [&](uint8_t r) {
        if (r != kNoReg) u.reads[u.n_reads++] = r;
    };
    auto wr = [&](uint8_t r) {
        if (r != kNoReg) u.writes[u.n_writes++] = r;
    };
    switch (op.kind) {
        case OpKind::Alu:
            rd(op.src_a);
            rd(op.src_b);
            wr(op.dst);
            break;
        case OpKind::FpOp: {
            const uint32_t n = fp_sources(op.fp);
            if (n >= 1) rd(op.src_a);
            if (n >= 2) rd(op.src_b);
            if (n >= 3) rd(op.src_c);
            wr(op.dst);
            break;
        }
        case OpKind::LoadGlobal:
        case OpKind::LoadShared:
        case OpKind::MmioRead:
            wr(op.dst);
            break;
        case OpKind::StoreGlobal:
        case OpKind::StoreShared:
            rd(op.src_a);
            break;
        case OpKind::HmmaSetStep: {
            for (uint8_t r = 0; r < 8; ++r) rd(static_cast<uint8_t>(op.src_a + r));
            const uint32_t breg = p == Precision::FP16in_FP32acc ? op.imm / 2 : op.imm;
            rd(static_cast<uint8_t>(op.src_b + breg));
            for (uint8_t r = 0; r < 8; ++r) {
                rd(static_cast<uint8_t>(op.src_c + r));
                wr(static_cast<uint8_t>(op.src_c + r));
            }
            break;
        }
        case OpKind::WgmmaInit:
            for (uint8_t r = 0; r < 32; ++r) {
                rd(static_cast<uint8_t>(op.dst + r));
                wr(static_cast<uint8_t>(op.dst + r));
            }
            break;
        default:
            break;
    }
    return u;
}

const MatrixDesc* KernelImage::layout(const std::string& name) const {
    for (const auto& d : expected_layouts)
        if (d.name == name) return &d;
    return nullptr;
}

WarpProgram materialize(const KernelImage& img, uint32_t warp, uint32_t warps_per_core) {
    WarpProgram wp;
    wp.core = warp / warps_per_core;
    wp.warp = warp % warps_per_core;
    if (warp >= img.program->num_warps()) return wp;
    const size_t n = img.program->num_chunks(warp);
    for (size_t c = 0; c < n; ++c) img.program->emit_chunk(warp, c, wp.ops);
    return wp;
}

size_t total_ops(const KernelImage& img) {
    size_t total = 0;
    std::vector<MicroOp> buf;
    for (uint32_t w = 0; w < img.program->num_warps(); ++w) {
        const size_t n = img.program->num_chunks(w);
        for (size_t c = 0; c < n; ++c) {
            buf.clear();
            img.program->emit_chunk(w, c, buf);
            total += buf.size();
        }
    }
    return total;
}

std::vector<std::string> check_barriers(const KernelImage& img) {
    std::vector<std::string> problems;
    // barrier id -> (mask index seen, per-warp arrival count)
    std::map<uint32_t, std::map<uint32_t, uint64_t>> arrivals;
    std::map<uint32_t, uint32_t> mask_of;
    std::vector<MicroOp> buf;
    for (uint32_t w = 0; w < img.program->num_warps(); ++w) {
        const size_t n = img.program->num_chunks(w);
        for (size_t c = 0; c < n; ++c) {
            buf.clear();
            img.program->emit_chunk(w, c, buf);
            for (const auto& op : buf) {
                if (op.kind != OpKind::Barrier) continue;
                if (op.value >= img.barrier_masks.size()) {
                    problems.push_back("warp " + std::to_string(w) + ": barrier " + std::to_string(op.imm) +
                                       " references unknown mask " + std::to_string(op.value));
                    continue;
                }
                auto [it, fresh] = mask_of.emplace(op.imm, op.value);
                if (!fresh && img.barrier_masks[it->second] != img.barrier_masks[op.value])
                    problems.push_back("barrier " + std::to_string(op.imm) + " used with differing masks");
                if (!img.barrier_masks[op.value].test(w))
                    problems.push_back("warp " + std::to_string(w) + " reaches barrier " + std::to_string(op.imm) +
                                       " but is not in its mask");
                arrivals[op.imm][w]++;
            }
        }
    }
    for (const auto& [id, per_warp] : arrivals) {
        const WarpMask& mask = img.barrier_masks[mask_of[id]];
        uint64_t expect = 0;
        bool first = true;
        for (size_t w = 0; w < kMaxWarps; ++w) {
            if (!mask.test(w)) continue;
            const auto it = per_warp.find(static_cast<uint32_t>(w));
            const uint64_t cnt = it == per_warp.end() ? 0 : it->second;
            if (first) {
                expect = cnt;
                first = false;
            } else if (cnt != expect) {
                problems.push_back("barrier " + std::to_string(id) + ": warp " + std::to_string(w) + " arrives " +
                                   std::to_string(cnt) + " times, expected " + std::to_string(expect));
            }
        }
    }
    return problems;
}

void write_kernel_image(const KernelImage& img, const std::string& dir, uint32_t warps_per_core) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    nlohmann::json man;
    man["format"] = "csim-kernel-1";
    man["workload"] = img.workload;
    man["variant"] = to_string(img.variant);
    man["precision"] = to_string(img.precision);
    man["dims"] = {img.m, img.n, img.k};
    man["seed"] = img.seed;
    man["expected_macs"] = img.expected_macs;
    man["op_record_bytes"] = sizeof(MicroOp);
    man["num_thread_blocks"] = img.num_thread_blocks;
    man["warp_thread_block"] = img.warp_thread_block;
    for (const auto& d : img.expected_layouts)
        man["layouts"].push_back({{"name", d.name},
                                  {"base", d.base},
                                  {"rows", d.rows},
                                  {"cols", d.cols},
                                  {"elem_bytes", d.elem_bytes},
                                  {"row_stride", d.row_stride},
                                  {"output", d.output}});
    for (const auto& m : img.barrier_masks) man["barrier_masks"].push_back(m.to_string());

    std::ofstream ops(fs::path(dir) / "ops.bin", std::ios::binary);
    if (!ops) throw std::runtime_error("cannot write " + (fs::path(dir) / "ops.bin").string());
    uint64_t offset = 0;
    for (uint32_t w = 0; w < img.program->num_warps(); ++w) {
        const WarpProgram wp = materialize(img, w, warps_per_core);
        ops.write(reinterpret_cast<const char*>(wp.ops.data()),
                  static_cast<std::streamsize>(wp.ops.size() * sizeof(MicroOp)));
        man["warps"].push_back({{"warp", w}, {"core", wp.core}, {"offset", offset}, {"count", wp.ops.size()}});
        offset += wp.ops.size();
    }
    std::ofstream glob(fs::path(dir) / "global.bin", std::ios::binary);
    glob.write(reinterpret_cast<const char*>(img.initial_global_memory.data()),
               static_cast<std::streamsize>(img.initial_global_memory.size()));
    std::ofstream(fs::path(dir) / "manifest.json") << man.dump(2) << "\n";
}

}  // namespace csim
