/// @file acceptance.cpp
/// @brief Acceptance run: one PASS/FAIL line per criterion.
///
/// Exit status: 0 when every criterion passes, 77 when the only failures are
/// criteria pinned in kKnownRed, 1 otherwise.

#include "checks.hpp"

#include <csim/experiment.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <string>
#include <vector>

using namespace csim;

namespace {

// Tolerances and thresholds.
constexpr double kMaxSecondsPerVariant = 300.0;
constexpr double kInstrRatioVsVolta = 0.02;
constexpr double kInstrRatioVsHopper = 0.15;
constexpr double kFootprintTcOverDisagg = 2.0;
constexpr double kFootprintOdOverDisagg = 1.4;
constexpr double kFlashSpeedupVsAmpere = 1.5;
constexpr double kFenceOverheadPct = 10.0;
constexpr uint64_t kFabricStreams = 100000;
constexpr double kMultiUnitUtilRelPct = 5.0;
constexpr double kMultiUnitEnergyPct = 10.0;
constexpr double kCalibrationPp = 15.0;
constexpr uint32_t kInstrRatioSize = 1024;
constexpr uint32_t kFlashSeqLen = 1024, kFlashHeadDim = 64;

/// Criteria known to fail with the current model; see README.
const std::set<std::string> kKnownRed = {"5c"};

/// Published utilization (percent) at 256^3 and 512^3.
const std::map<ArchVariant, std::pair<double, double>> kPublishedUtil = {
    {ArchVariant::TightlyCoupled, {25.6, 30.3}},
    {ArchVariant::TightlyCoupledDma, {37.5, 45.6}},
    {ArchVariant::OperandDecoupled, {60.5, 72.8}},
    {ArchVariant::Disaggregated, {66.1, 77.9}},
};

struct Verdict {
    std::string id;
    bool pass;
};
std::vector<Verdict> verdicts;

void report(const std::string& id, bool pass, const std::string& what) {
    std::printf("[%s] %-3s %s\n", pass ? "PASS" : "FAIL", id.c_str(), what.c_str());
    std::fflush(stdout);
    verdicts.push_back({id, pass});
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

struct Timed {
    CellOutcome out;
    double seconds;
};

Timed run(ArchVariant v, Workload w, uint32_t m, uint32_t n, uint32_t k, uint64_t seed = 1) {
    CellSpec s;
    s.variant = v;
    s.workload = w;
    s.m = m;
    s.n = n;
    s.k = k;
    s.seq_len = kFlashSeqLen;
    s.head_dim = kFlashHeadDim;
    s.seed = seed;
    const auto t0 = std::chrono::steady_clock::now();
    CellOutcome o = run_cell(preset(v, default_precision(w)), s);
    const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("  ran %-6s %s %s: %llu cycles, util %.2f%%, err %.2e, %.1fs\n", short_name(v).c_str(),
                to_string(w), s.size_label().c_str(), static_cast<unsigned long long>(o.row.cycles),
                o.row.utilization_pct, o.error.max_rel_err, sec);
    std::fflush(stdout);
    return {std::move(o), sec};
}

using Cells = std::map<ArchVariant, Timed>;

Cells run_all(uint32_t size) {
    Cells c;
    for (ArchVariant v : all_variants()) c.emplace(v, run(v, Workload::Gemm, size, size, size));
    return c;
}

double util(const Cells& c, ArchVariant v) { return c.at(v).out.row.utilization_pct; }

}  // namespace

int main() {
    constexpr auto V = ArchVariant::TightlyCoupled, A = ArchVariant::TightlyCoupledDma,
                   H = ArchVariant::OperandDecoupled, D = ArchVariant::Disaggregated;
    std::vector<const CellOutcome*> all_gemm;

    const Cells g256 = run_all(256);
    const Cells g512 = run_all(512);
    for (const Cells* c : {&g256, &g512})
        for (const auto& [v, t] : *c) all_gemm.push_back(&t.out);

    // 1: correctness and runtime at 256^3.
    {
        bool ok = true;
        std::string d;
        for (const auto& [v, t] : g256) {
            ok = ok && t.out.oracle_pass && t.out.error.max_rel_err <= 1e-3 && t.seconds < kMaxSecondsPerVariant;
            d += fmt("%s err %.1e %.1fs; ", short_name(v).c_str(), t.out.error.max_rel_err, t.seconds);
        }
        report("1", ok, "GEMM 256^3 within 1e-3 and < 5 min per variant: " + d);
    }

    // 2: utilization ordering, plus the non-blocking calibration report.
    for (const auto& [size, cells] : {std::pair{256, &g256}, std::pair{512, &g512}}) {
        const Cells& c = *cells;
        const bool ok = util(c, D) > util(c, H) && util(c, H) > util(c, A) && util(c, A) > util(c, V);
        report("2", ok,
               fmt("utilization at %d^3: Disagg %.2f > Hopper %.2f > Ampere %.2f > Volta %.2f", size, util(c, D),
                   util(c, H), util(c, A), util(c, V)));
        for (ArchVariant v : all_variants()) {
            const double want = size == 256 ? kPublishedUtil.at(v).first : kPublishedUtil.at(v).second;
            const double got = util(c, v);
            std::printf("  calibration %-6s %d^3: %.1f%% vs published %.1f%% (%+.1f pp, %s)\n", short_name(v).c_str(),
                        size, got, want, got - want, std::abs(got - want) <= kCalibrationPp ? "within 15 pp" : "outside 15 pp");
        }
    }

    // 3: instruction ratios.
    {
        std::map<ArchVariant, Timed> big;
        for (ArchVariant v : {V, H, D})
            big.emplace(v, run(v, Workload::Gemm, kInstrRatioSize, kInstrRatioSize, kInstrRatioSize));
        for (const auto& [v, t] : big) all_gemm.push_back(&t.out);
        const double rv = instruction_ratio(big.at(D).out.run.ledger, big.at(V).out.run.ledger);
        const double rh = instruction_ratio(big.at(D).out.run.ledger, big.at(H).out.run.ledger);
        report("3", rv < kInstrRatioVsVolta && rh < kInstrRatioVsHopper &&
                        big.at(D).out.oracle_pass && big.at(V).out.oracle_pass && big.at(H).out.oracle_pass,
               fmt("instructions at %u^3: Disagg/Volta %.4f (< %.2f), Disagg/Hopper %.4f (< %.2f)", kInstrRatioSize, rv,
                   kInstrRatioVsVolta, rh, kInstrRatioVsHopper));

        // 6 is evaluated over every GEMM run in this binary, so it runs while the 1024^3 cells are alive.
        bool ok = true;
        for (const CellOutcome* o : all_gemm) ok = ok && o->run.ledger.macs == uint64_t(o->spec.m) * o->spec.n * o->spec.k;
        report("6", ok, fmt("ledger MACs == M*N*K on all %zu GEMM runs", all_gemm.size()));
        all_gemm.resize(all_gemm.size() - big.size());
    }

    // 4: footprint at 256^3.
    {
        const double fd = double(g256.at(D).out.row.smem_footprint_bytes);
        const double tc = g256.at(V).out.row.smem_footprint_bytes / fd;
        const double od = g256.at(H).out.row.smem_footprint_bytes / fd;
        bool disagg_min = true;
        for (const auto& [v, t] : g256) disagg_min = disagg_min && t.out.row.smem_footprint_bytes >= fd;
        report("4", tc >= kFootprintTcOverDisagg && od >= kFootprintOdOverDisagg && disagg_min,
               fmt("footprint at 256^3: TC/Disagg %.2f (>= %.1f), OD/Disagg %.2f (>= %.1f), Disagg minimal", tc,
                   kFootprintTcOverDisagg, od, kFootprintOdOverDisagg));
    }

    // 5: flash attention.
    {
        const Timed fd = run(D, Workload::Flash, 0, 0, 0);
        const Timed fa = run(A, Workload::Flash, 0, 0, 0);
        report("5a", fd.out.error.max_rel_err <= 1e-4 && fa.out.error.max_rel_err <= 1e-4 && fd.out.oracle_pass &&
                         fa.out.oracle_pass,
               fmt("flash %ux%u vs taylor2 reference: Disagg %.2e, Ampere %.2e (<= 1e-4)", kFlashSeqLen,
                   kFlashHeadDim, fd.out.error.max_rel_err, fa.out.error.max_rel_err));
        const double speedup = fd.out.row.utilization_pct / fa.out.row.utilization_pct;
        report("5b", speedup >= kFlashSpeedupVsAmpere,
               fmt("flash utilization Disagg %.2f%% / Ampere %.2f%% = %.2fx (>= %.1fx)", fd.out.row.utilization_pct,
                   fa.out.row.utilization_pct, speedup, kFlashSpeedupVsAmpere));
        report("5c", fd.out.row.fence_overhead_pct <= kFenceOverheadPct,
               fmt("flash fence-poll overhead %.2f%% of runtime (<= %.0f%%), mean fence %.0f cycles",
                   fd.out.row.fence_overhead_pct, kFenceOverheadPct, fd.out.row.fence_mean_cycles));
    }

    // 7: register-file placement at 256^3.
    {
        bool ok = true;
        std::string d;
        for (const auto& [v, t] : g256) {
            const uint64_t op = t.out.row.rf_operand_bytes, acc = t.out.row.rf_accumulator_bytes;
            const bool tc = v == V || v == A;
            ok = ok && (tc ? op > 0 : op == 0) && (v == D ? acc == 0 : acc > 0);
            d += fmt("%s %llu/%llu; ", short_name(v).c_str(), static_cast<unsigned long long>(op),
                     static_cast<unsigned long long>(acc));
        }
        report("7", ok, "RF operand/accumulator bytes (TC both > 0, OD operand 0, Disagg both 0): " + d);
    }

    // 8: fabric properties.
    {
        const check::Summary s = check::fuzz_fabric(kFabricStreams, 20240601);
        std::string d;
        for (const auto& p : check::fabric_properties()) d += fmt("%s=%llu ", p.c_str(),
                                                                  static_cast<unsigned long long>(s.violations.at(p)));
        report("8", s.cases >= kFabricStreams && s.total_violations() == 0,
               fmt("fabric fuzz: %llu streams, %llu requests, violations: ", static_cast<unsigned long long>(s.cases),
                   static_cast<unsigned long long>(s.events)) + d);
        for (const auto& e : s.examples) std::printf("  %s\n", e.c_str());
    }

    // 9: barrier and fence model check.
    {
        const check::Summary s = check::model_check_sync();
        std::string d;
        for (const auto& p : check::sync_properties()) d += fmt("%s=%llu ", p.c_str(),
                                                                static_cast<unsigned long long>(s.violations.at(p)));
        report("9", s.total_violations() == 0,
               fmt("sync model check: %llu kernels (<= 4 warps), violations: ", static_cast<unsigned long long>(s.cases)) + d);
        for (const auto& e : s.examples) std::printf("  %s\n", e.c_str());
    }

    // 10: two matrix units.
    {
        const MultiUnitOutcome m = run_multiunit(multiunit_config(), MultiUnitShape{}, 1);
        report("10", m.oracle_pass && std::abs(m.util_delta_rel_pct) <= kMultiUnitUtilRelPct &&
                         m.energy_overhead_pct <= kMultiUnitEnergyPct,
               fmt("multi-unit: parallel %.2f%% vs serial %.2f%% (%+.2f%% rel, <= 5%%), energy/MAC %+.2f%% (<= 10%%)",
                   m.util_parallel, m.util_serial, m.util_delta_rel_pct, m.energy_overhead_pct));
    }

    // 11: determinism.
    {
        std::vector<ReportRow> first, second;
        for (const auto& [v, t] : g256) first.push_back(t.out.row);
        for (ArchVariant v : all_variants()) second.push_back(run(v, Workload::Gemm, 256, 256, 256).out.row);
        const std::string a = emit_report(first, ReportFormat::Csv), b = emit_report(second, ReportFormat::Csv);
        report("11", a == b, fmt("two identical 256^3 runs: CSV reports %s (%zu bytes)",
                                 a == b ? "byte-identical" : "differ", a.size()));
    }

    bool hard_fail = false, red = false;
    for (const auto& v : verdicts) {
        if (v.pass) continue;
        if (kKnownRed.count(v.id)) red = true;
        else hard_fail = true;
    }
    std::printf("%s\n", hard_fail ? "RESULT: FAIL" : red ? "RESULT: PASS except known-red criteria" : "RESULT: PASS");
    return hard_fail ? 1 : red ? 77 : 0;
}
