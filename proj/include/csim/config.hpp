#pragma once

/// @file config.hpp
/// @brief Hardware configuration space for the simulated SIMT cluster.

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace csim {

enum class ArchVariant { TightlyCoupled, TightlyCoupledDma, OperandDecoupled, Disaggregated };
enum class Precision { FP16in_FP32acc, FP32in_FP32acc };
enum class UnitScope { PerCore, PerCluster };

class ConfigError : public std::runtime_error {
public:
    ConfigError(const std::string& field, const std::string& what)
        : std::runtime_error(field + ": " + what), field_(field) {}
    const std::string& field() const { return field_; }

private:
    std::string field_;
};

struct MatrixUnitConfig {
    uint32_t units_per_scope = 1;
    UnitScope scope = UnitScope::PerCluster;
    uint32_t macs_per_unit_per_cycle = 256;
    uint32_t tile_m = 128, tile_n = 64, tile_k = 128;
    uint32_t accumulator_bytes = 32768;   // Disaggregated only
    uint32_t systolic_rows = 16, systolic_cols = 16;
    uint32_t fifo_depth = 4;              // OperandDecoupled access/response FIFOs
    uint32_t command_queue_depth = 2;     // Disaggregated MMIO command queue

    bool operator==(const MatrixUnitConfig&) const = default;
};

struct LatencyConfig {
    uint32_t l1_hit = 4;
    uint32_t l2_hit = 20;
    uint32_t dram = 100;
    uint32_t smem_access = 2;
    uint32_t mmio_access = 2;
    uint32_t dma_bytes_per_cycle = 64;
    uint32_t issue_width_per_core = 1;
    uint32_t alu = 1;
    uint32_t fpu = 4;
    uint32_t fence_poll_interval = 64;

    bool operator==(const LatencyConfig&) const = default;
};

struct SoCConfig {
    uint32_t clusters = 1;
    uint32_t cores_per_cluster = 8;
    uint32_t warps_per_core = 8;
    uint32_t lanes_per_warp = 8;
    uint32_t alus_per_lane = 2;
    uint32_t fpus_per_lane = 1;
    uint32_t lsq_entries = 32;
    uint32_t rf_bytes_int = 8192;
    uint32_t rf_bytes_fp = 8192;
    uint32_t smem_bytes = 128 * 1024;
    uint32_t smem_banks = 4;
    uint32_t smem_subbanks_per_bank = 8;
    uint32_t smem_queue_depth = 32;
    uint32_t l1i_bytes = 16 * 1024;
    uint32_t l1d_bytes = 16 * 1024;
    uint32_t l2_bytes = 512 * 1024;
    uint32_t l1_line_bytes = 64;
    uint32_t l1_ways = 4;
    uint32_t l2_ways = 8;
    ArchVariant arch_variant = ArchVariant::Disaggregated;
    Precision precision = Precision::FP16in_FP32acc;
    MatrixUnitConfig matrix_cfg;
    std::optional<MatrixUnitConfig> second_unit;   // heterogeneous multi-unit cluster
    bool enforce_mac_parity = true;
    LatencyConfig latency_cfg;
    std::map<std::string, double> energy_weights;

    bool operator==(const SoCConfig&) const = default;

    uint32_t total_warps() const { return cores_per_cluster * warps_per_core; }
    uint32_t rf_bytes_per_warp() const { return rf_bytes_fp / warps_per_core; }
    uint32_t element_bytes() const { return precision == Precision::FP16in_FP32acc ? 2 : 4; }
    uint32_t matrix_units_in_cluster() const;
    /// Peak MACs per cycle summed over every matrix unit in the cluster.
    uint64_t cluster_mac_capacity() const;
    /// Capacity of the primary unit set only (the parity invariant applies to it).
    uint64_t primary_mac_capacity() const;
};

struct Violation {
    std::string field;
    std::string rule;
};

SoCConfig preset(ArchVariant variant, Precision precision);
std::vector<Violation> validate(const SoCConfig& cfg);
/// Throws ConfigError naming the first violated field.
void require_valid(const SoCConfig& cfg);

/// Flat `key = value` document; see README for the grammar.
SoCConfig load_config(const std::string& text);
SoCConfig load_config_file(const std::string& path);
std::string render(const SoCConfig& cfg);

std::map<std::string, double> default_energy_weights();

std::string to_string(ArchVariant v);
std::string short_name(ArchVariant v);
std::string to_string(Precision p);
ArchVariant parse_variant(const std::string& s);
Precision parse_precision(const std::string& s);
std::vector<ArchVariant> all_variants();

}  // namespace csim
