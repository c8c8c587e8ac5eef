#pragma once

/// @file experiment.hpp
/// @brief Experiment cells: build, simulate, check against the oracle, report.

#include <csim/cluster.hpp>
#include <csim/config.hpp>
#include <csim/metrics.hpp>
#include <csim/workloads.hpp>

#include <optional>
#include <string>
#include <vector>

namespace csim {

enum class Workload { Gemm, Flash };
const char* to_string(Workload w);
Workload parse_workload(const std::string& s);

struct CellSpec {
    ArchVariant variant = ArchVariant::Disaggregated;
    Workload workload = Workload::Gemm;
    uint32_t m = 256, n = 256, k = 256;
    uint32_t seq_len = 1024, head_dim = 64;
    uint64_t seed = 1;

    /// "MxNxK" for GEMM, "LxD" for attention.
    std::string size_label() const;
};

/// Oracle tolerances (max elementwise relative error).
constexpr double kGemmTolerance = 1e-3;
constexpr double kFlashTolerance = 1e-4;

struct CellOutcome {
    CellSpec spec;
    SoCConfig cfg;
    ReportRow row;
    RunResult run;
    ErrorReport error;
    double tolerance = 0.0;
    uint64_t expected_macs = 0;
    bool macs_match = false;
    bool oracle_pass = false;
};

/// Precision each workload runs at unless a config file says otherwise.
Precision default_precision(Workload w);

/// Config for `variant`: the preset, or `base` when it describes that variant.
/// Throws ConfigError when `base` names a different variant.
SoCConfig config_for(ArchVariant variant, Precision precision, const std::optional<SoCConfig>& base);

/// Builds, simulates and checks one cell. Throws SimError on deadlock.
CellOutcome run_cell(const SoCConfig& cfg, const CellSpec& spec, const RunOptions& opt = {});

struct MultiUnitOutcome {
    RunResult parallel;
    RunResult serial[2];   // large unit alone, small unit alone
    ErrorReport error[2];
    bool oracle_pass = false;
    /// sum(macs) / sum(capacity_i * T_i), T_i = cycle unit i finished its last command.
    double util_parallel = 0.0, util_serial = 0.0;
    double util_delta_rel_pct = 0.0;   // 100 * (parallel - serial) / serial
    double energy_per_mac_parallel = 0.0, energy_per_mac_serial = 0.0;
    double energy_overhead_pct = 0.0;   // per-MAC energy, parallel vs serial
    std::vector<ReportRow> rows;        // parallel, serial-large, serial-small
};

MultiUnitOutcome run_multiunit(const SoCConfig& cfg, const MultiUnitShape& shape, uint64_t seed,
                               const RunOptions& opt = {});

/// One row per ledger, every EventLedger field as a column.
std::string ledger_csv(const std::vector<std::pair<std::string, EventLedger>>& cells);

/// Fails early (before any simulation) when `dir` cannot be created or written.
void ensure_writable_dir(const std::string& dir);

/// Writes `files` (name -> content) into `dir`. Each file is written to a
/// temporary name and renamed, so a failure leaves no partial file behind.
void write_outputs(const std::string& dir, const std::vector<std::pair<std::string, std::string>>& files);

}  // namespace csim
