#include <csim/experiment.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

namespace csim {

namespace fs = std::filesystem;

const char* to_string(Workload w) { return w == Workload::Gemm ? "gemm" : "flash"; }

Workload parse_workload(const std::string& s) {
    if (s == "gemm") return Workload::Gemm;
    if (s == "flash") return Workload::Flash;
    throw MappingError("unknown workload '" + s + "' (expected gemm or flash)");
}

std::string CellSpec::size_label() const {
    if (workload == Workload::Gemm)
        return std::to_string(m) + "x" + std::to_string(n) + "x" + std::to_string(k);
    return std::to_string(seq_len) + "x" + std::to_string(head_dim);
}

Precision default_precision(Workload w) {
    return w == Workload::Gemm ? Precision::FP16in_FP32acc : Precision::FP32in_FP32acc;
}

SoCConfig config_for(ArchVariant variant, Precision precision, const std::optional<SoCConfig>& base) {
    if (!base) return preset(variant, precision);
    if (base->arch_variant != variant)
        throw ConfigError("soc.arch_variant", "the config file describes " + to_string(base->arch_variant) +
                                                  " but " + to_string(variant) + " was requested");
    return *base;
}

CellOutcome run_cell(const SoCConfig& cfg, const CellSpec& spec, const RunOptions& opt) {
    CellOutcome out;
    out.spec = spec;
    out.cfg = cfg;
    KernelImage img = spec.workload == Workload::Gemm
                          ? build_gemm_kernel(cfg, spec.m, spec.n, spec.k, spec.seed)
                          : build_flash_attention_kernel(cfg, spec.seq_len, spec.head_dim, spec.seed);
    out.expected_macs = img.expected_macs;

    Matrix want;
    std::string out_name;
    if (spec.workload == Workload::Gemm) {
        const GemmInputs in = gemm_inputs(spec.m, spec.n, spec.k, spec.seed, cfg.precision == Precision::FP16in_FP32acc);
        want = reference_gemm(in.a, in.b);
        out_name = "C";
        out.tolerance = kGemmTolerance;
    } else {
        const AttentionInputs in = attention_inputs(spec.seq_len, spec.head_dim, spec.seed);
        want = reference_attention(in.q, in.k, in.v, ExpMode::Taylor2, img.attn_block);
        out_name = "O";
        out.tolerance = kFlashTolerance;
    }

    Cluster cl(cfg, img);
    out.run = cl.run(opt);
    if (out.run.deadlock)
        throw SimError(to_string(cfg.arch_variant) + " " + to_string(spec.workload) + " " + spec.size_label() +
                       ": simulation stopped (" + out.run.deadlock_reason + ")");

    out.error = compare_matrices(extract_matrix(out.run.global_memory, *img.layout(out_name)), want);
    out.macs_match = out.run.ledger.macs == out.expected_macs;
    out.oracle_pass = out.error.max_rel_err <= out.tolerance && out.macs_match;
    out.row = make_row(short_name(cfg.arch_variant), to_string(spec.workload), spec.size_label(), spec.seed,
                       out.run.ledger, cfg.cluster_mac_capacity(), cfg.energy_weights, out.error.max_rel_err,
                       out.oracle_pass);
    return out;
}

namespace {

uint64_t unit_end(const UnitStats& u) { return u.commands ? u.last_active + 1 : 0; }

double energy_total(const EventLedger& l, const SoCConfig& cfg) { return energy(l, cfg.energy_weights).total; }

}  // namespace

MultiUnitOutcome run_multiunit(const SoCConfig& cfg, const MultiUnitShape& shape, uint64_t seed,
                               const RunOptions& opt) {
    MultiUnitOutcome out;
    const GemmInputs li = gemm_inputs(shape.large_m, shape.large_n, shape.large_k, seed, true);
    const GemmInputs si = gemm_inputs(shape.small_m, shape.small_n, shape.small_k, seed + 1, true);
    const Matrix want[2] = {reference_gemm(li.a, li.b), reference_gemm(si.a, si.b)};
    const uint64_t macs[2] = {uint64_t(shape.large_m) * shape.large_n * shape.large_k,
                              uint64_t(shape.small_m) * shape.small_n * shape.small_k};
    const char* names[2] = {"C0", "C1"};

    auto simulate = [&](unsigned active) {
        const KernelImage img = build_multiunit_kernel(cfg, shape, seed, active);
        Cluster cl(cfg, img);
        RunResult r = cl.run(opt);
        if (r.deadlock) throw SimError("multi-unit run stopped (" + r.deadlock_reason + ")");
        return std::make_pair(std::move(r), img);
    };

    auto [par, par_img] = simulate(3);
    out.parallel = std::move(par);
    out.oracle_pass = out.parallel.ledger.macs == macs[0] + macs[1];
    double par_err[2];
    for (int i = 0; i < 2; ++i) {
        auto [ser, ser_img] = simulate(1u << i);
        out.serial[i] = std::move(ser);
        // Each GEMM is checked in both schedules; the report carries the worse error.
        const ErrorReport ep = compare_matrices(extract_matrix(out.parallel.global_memory, *par_img.layout(names[i])), want[i]);
        const ErrorReport es = compare_matrices(extract_matrix(out.serial[i].global_memory, *ser_img.layout(names[i])), want[i]);
        par_err[i] = ep.max_rel_err;
        out.error[i] = ep.max_rel_err >= es.max_rel_err ? ep : es;
        out.oracle_pass = out.oracle_pass && out.error[i].max_rel_err <= kGemmTolerance &&
                          out.serial[i].ledger.macs == macs[i];
    }

    const UnitStats& pl = out.parallel.units.at(0);
    const UnitStats& ps = out.parallel.units.at(1);
    const UnitStats& sl = out.serial[0].units.at(0);
    const UnitStats& ss = out.serial[1].units.at(1);
    const double total = static_cast<double>(macs[0] + macs[1]);
    out.util_parallel = 100.0 * total / (double(pl.capacity) * unit_end(pl) + double(ps.capacity) * unit_end(ps));
    out.util_serial = 100.0 * total / (double(sl.capacity) * unit_end(sl) + double(ss.capacity) * unit_end(ss));
    out.util_delta_rel_pct = 100.0 * (out.util_parallel - out.util_serial) / out.util_serial;

    out.energy_per_mac_parallel = energy_total(out.parallel.ledger, cfg) / total;
    out.energy_per_mac_serial =
        (energy_total(out.serial[0].ledger, cfg) + energy_total(out.serial[1].ledger, cfg)) / total;
    out.energy_overhead_pct = 100.0 * (out.energy_per_mac_parallel / out.energy_per_mac_serial - 1.0);

    const std::string large = std::to_string(shape.large_m) + "x" + std::to_string(shape.large_n) + "x" +
                              std::to_string(shape.large_k);
    const std::string small = std::to_string(shape.small_m) + "x" + std::to_string(shape.small_n) + "x" +
                              std::to_string(shape.small_k);
    const uint64_t cap = cfg.cluster_mac_capacity();
    out.rows.push_back(make_row("disagg", "multiunit-parallel", large + "+" + small, seed, out.parallel.ledger, cap,
                                cfg.energy_weights, std::max(par_err[0], par_err[1]), out.oracle_pass));
    out.rows.push_back(make_row("disagg", "multiunit-serial-large", large, seed, out.serial[0].ledger, pl.capacity,
                                cfg.energy_weights, out.error[0].max_rel_err, out.oracle_pass));
    out.rows.push_back(make_row("disagg", "multiunit-serial-small", small, seed + 1, out.serial[1].ledger, ps.capacity,
                                cfg.energy_weights, out.error[1].max_rel_err, out.oracle_pass));
    return out;
}

std::string ledger_csv(const std::vector<std::pair<std::string, EventLedger>>& cells) {
    std::ostringstream os;
    os << "cell,cycles,issued,retired_total";
    for (size_t i = 0; i < kNumOpKinds; ++i) os << ",retired_" << to_string(static_cast<OpKind>(i));
    for (size_t i = 0; i < kNumOpTags; ++i) os << ",retired_tag_" << to_string(static_cast<OpTag>(i));
    os << ",alu_lane_ops,fpu_lane_ops,macs";
    for (const char* p : {"operand", "accumulator", "scalar"}) os << ",rf_read_" << p << ",rf_write_" << p;
    for (size_t i = 0; i < kNumReqClasses; ++i) {
        const char* c = to_string(static_cast<ReqClass>(i));
        os << ",smem_read_" << c << ",smem_write_" << c;
    }
    for (size_t i = 0; i < kNumDmaDirs; ++i) os << ",dma_" << to_string(static_cast<DmaDir>(i));
    os << ",smem_operand_load_bytes,issue_stalls,fence_poll_cycles,fence_instances,fencing_warps,"
          "barrier_wait_cycles,fabric_defer_cycles,accumulator_access_count,matrix_stall_cycles,mmio_accesses,"
          "mmio_rejects,dma_errors,l1_accesses,l2_accesses,dram_accesses\n";
    for (const auto& [name, l] : cells) {
        os << name << ',' << l.cycles << ',' << l.issued << ',' << l.retired_total();
        for (auto v : l.retired) os << ',' << v;
        for (auto v : l.retired_by_tag) os << ',' << v;
        os << ',' << l.alu_lane_ops << ',' << l.fpu_lane_ops << ',' << l.macs;
        for (size_t p = 0; p < 3; ++p) os << ',' << l.rf_read_bytes[p] << ',' << l.rf_write_bytes[p];
        for (size_t i = 0; i < kNumReqClasses; ++i) os << ',' << l.smem_read_bytes[i] << ',' << l.smem_write_bytes[i];
        for (auto v : l.dma_bytes) os << ',' << v;
        os << ',' << l.smem_operand_load_bytes << ',' << l.issue_stalls << ',' << l.fence_poll_cycles << ','
           << l.fence_instances << ',' << l.fencing_warps << ',' << l.barrier_wait_cycles << ','
           << l.fabric_defer_cycles << ',' << l.accumulator_access_count << ',' << l.matrix_stall_cycles << ','
           << l.mmio_accesses << ',' << l.mmio_rejects << ',' << l.dma_errors << ',' << l.l1_accesses << ','
           << l.l2_accesses << ',' << l.dram_accesses << '\n';
    }
    return os.str();
}

void ensure_writable_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir))
        throw std::runtime_error("output directory '" + dir + "' cannot be created: " + ec.message());
    const fs::path probe = fs::path(dir) / ".csim_probe";
    {
        std::ofstream f(probe);
        if (!f) throw std::runtime_error("output directory '" + dir + "' is not writable");
    }
    fs::remove(probe, ec);
}

void write_outputs(const std::string& dir, const std::vector<std::pair<std::string, std::string>>& files) {
    std::vector<fs::path> tmps;
    auto cleanup = [&] {
        std::error_code ec;
        for (const auto& t : tmps) fs::remove(t, ec);
    };
    for (const auto& [name, content] : files) {
        const fs::path tmp = fs::path(dir) / (name + ".tmp");
        tmps.push_back(tmp);
        std::ofstream f(tmp, std::ios::binary);
        f << content;
        f.close();
        if (!f) {
            cleanup();
            throw std::runtime_error("failed to write '" + tmp.string() + "'");
        }
    }
    for (size_t i = 0; i < files.size(); ++i) fs::rename(tmps[i], fs::path(dir) / files[i].first);
}

}  // namespace csim
