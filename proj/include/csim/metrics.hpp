#pragma once

/// @file metrics.hpp
/// @brief Event ledger, derived metrics and the weight-parameterized energy proxy.

#include <csim/config.hpp>
#include <csim/isa.hpp>
#include <csim/smem_fabric.hpp>

#include <array>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace csim {

enum class RfPurpose : uint8_t { Operand, Accumulator, Scalar };
enum class DmaDir : uint8_t { GlobalToSmem, SmemToGlobal, AccumToGlobal, GlobalToAccum };
constexpr size_t kNumDmaDirs = 4;
const char* to_string(DmaDir d);

class MetricsError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct EventLedger {
    uint64_t cycles = 0;
    std::array<uint64_t, kNumOpKinds> retired{};
    std::array<uint64_t, kNumOpTags> retired_by_tag{};
    uint64_t issued = 0;
    uint64_t alu_lane_ops = 0;
    uint64_t fpu_lane_ops = 0;
    uint64_t macs = 0;
    std::array<uint64_t, 3> rf_read_bytes{};    // by RfPurpose
    std::array<uint64_t, 3> rf_write_bytes{};
    std::array<uint64_t, kNumReqClasses> smem_read_bytes{};
    std::array<uint64_t, kNumReqClasses> smem_write_bytes{};
    std::array<uint64_t, kNumDmaDirs> dma_bytes{};
    uint64_t smem_operand_load_bytes = 0;   // core loads that stage tensor-core fragments
    uint64_t issue_stalls = 0;
    uint64_t fence_poll_cycles = 0;   // summed over warps
    uint64_t fence_instances = 0;
    uint64_t fencing_warps = 0;
    uint64_t barrier_wait_cycles = 0;
    uint64_t fabric_defer_cycles = 0;
    uint64_t accumulator_access_count = 0;
    uint64_t matrix_stall_cycles = 0;
    uint64_t mmio_accesses = 0;
    uint64_t mmio_rejects = 0;
    uint64_t dma_errors = 0;
    uint64_t l1_accesses = 0;
    uint64_t l2_accesses = 0;
    uint64_t dram_accesses = 0;

    uint64_t retired_total() const;
    uint64_t rf_bytes(RfPurpose p) const {
        return rf_read_bytes[static_cast<size_t>(p)] + rf_write_bytes[static_cast<size_t>(p)];
    }
    uint64_t smem_read_total() const;
    uint64_t smem_write_total() const;
    uint64_t dma_total() const;

    /// Associative, commutative aggregation (cycles add as well).
    void merge(const EventLedger& o);
    bool operator==(const EventLedger&) const = default;
};

/// 100 * macs / (capacity * cycles).
double utilization(const EventLedger& l, const SoCConfig& cfg);
double utilization(uint64_t macs, uint64_t capacity, uint64_t cycles);
/// Shared-memory bytes read to feed the matrix unit: wide matrix-unit reads
/// plus core fragment loads on the tightly-coupled designs.
uint64_t footprint(const EventLedger& l);
/// Retired(a) / retired(b).
double instruction_ratio(const EventLedger& a, const EventLedger& b);
/// Percentage of runtime the fencing warps spend waiting in fences (mean over those warps).
double fence_overhead_pct(const EventLedger& l);
double fence_mean_cycles(const EventLedger& l);

/// Event classes the energy proxy is defined over.
std::map<std::string, uint64_t> event_counts(const EventLedger& l);

struct EnergyReport {
    static const std::vector<std::string>& categories();
    std::map<std::string, double> by_category;
    std::map<std::string, double> weights;   // echo of the table used
    double total = 0.0;
};

EnergyReport energy(const EventLedger& l, const std::map<std::string, double>& weights);

struct ReportRow {
    std::string variant;
    std::string workload;
    std::string size;
    uint64_t seed = 0;
    uint64_t cycles = 0;
    uint64_t macs = 0;
    uint64_t capacity = 0;
    double utilization_pct = 0.0;
    uint64_t retired_instructions = 0;
    uint64_t smem_footprint_bytes = 0;
    double fence_overhead_pct = 0.0;
    double fence_mean_cycles = 0.0;
    uint64_t rf_operand_bytes = 0;
    uint64_t rf_accumulator_bytes = 0;
    uint64_t smem_read_bytes = 0;
    uint64_t smem_write_bytes = 0;
    uint64_t dma_bytes = 0;
    std::map<std::string, double> energy;   // by category
    double energy_total = 0.0;
    double oracle_max_rel_err = 0.0;
    bool oracle_pass = false;
};

ReportRow make_row(const std::string& variant, const std::string& workload, const std::string& size, uint64_t seed,
                   const EventLedger& l, uint64_t capacity, const std::map<std::string, double>& weights,
                   double max_rel_err, bool pass);

enum class ReportFormat { Csv, Markdown };
const std::vector<std::string>& report_columns();
std::string emit_report(const std::vector<ReportRow>& rows, ReportFormat fmt);
std::vector<ReportRow> parse_report_csv(const std::string& text);

/// Normalized comparison over rows sharing (workload, size): utilization,
/// instruction ratio vs `baseline` and footprint normalized to the
/// Disaggregated row.
std::string compare_reports(const std::vector<ReportRow>& rows, const std::string& baseline, ReportFormat fmt);

}  // namespace csim
