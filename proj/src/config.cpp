#include <csim/config.hpp>

#include <algorithm>
#include <fstream>
#include <functional>
#include <iomanip>
#include <set>
#include <sstream>

namespace csim {

namespace {

bool is_pow2(uint64_t v) { return v != 0 && (v & (v - 1)) == 0; }

MatrixUnitConfig tc_unit(Precision p) {
    MatrixUnitConfig m;
    m.units_per_scope = 1;
    m.scope = UnitScope::PerCore;
    m.macs_per_unit_per_cycle = p == Precision::FP16in_FP32acc ? 32 : 16;
    m.tile_m = 8;
    m.tile_n = 8;
    m.tile_k = p == Precision::FP16in_FP32acc ? 16 : 8;
    m.accumulator_bytes = 0;
    m.systolic_rows = 0;
    m.systolic_cols = 0;
    return m;
}

MatrixUnitConfig od_unit(Precision p) {
    MatrixUnitConfig m;
    m.units_per_scope = 1;
    m.scope = UnitScope::PerCore;
    m.macs_per_unit_per_cycle = p == Precision::FP16in_FP32acc ? 64 : 32;
    m.tile_m = 16;
    m.tile_n = 16;
    m.tile_k = p == Precision::FP16in_FP32acc ? 32 : 16;
    m.accumulator_bytes = 0;
    m.systolic_rows = 0;
    m.systolic_cols = 0;
    m.fifo_depth = 4;
    return m;
}

MatrixUnitConfig disagg_unit(Precision p) {
    MatrixUnitConfig m;
    m.units_per_scope = 1;
    m.scope = UnitScope::PerCluster;
    const uint32_t dim = p == Precision::FP16in_FP32acc ? 16 : 8;
    m.systolic_rows = dim;
    m.systolic_cols = dim;
    m.macs_per_unit_per_cycle = dim * dim;
    m.tile_m = 128;
    m.tile_n = 64;
    m.tile_k = 128;
    m.accumulator_bytes = 32768;
    m.command_queue_depth = 2;
    return m;
}

}  // namespace

uint32_t SoCConfig::matrix_units_in_cluster() const {
    uint32_t n = matrix_cfg.scope == UnitScope::PerCore ? matrix_cfg.units_per_scope * cores_per_cluster
                                                         : matrix_cfg.units_per_scope;
    if (second_unit) n += second_unit->units_per_scope;
    return n;
}

uint64_t SoCConfig::primary_mac_capacity() const {
    const uint64_t units = matrix_cfg.scope == UnitScope::PerCore
                               ? uint64_t(matrix_cfg.units_per_scope) * cores_per_cluster
                               : matrix_cfg.units_per_scope;
    return units * matrix_cfg.macs_per_unit_per_cycle;
}

uint64_t SoCConfig::cluster_mac_capacity() const {
    uint64_t cap = primary_mac_capacity();
    if (second_unit) cap += uint64_t(second_unit->units_per_scope) * second_unit->macs_per_unit_per_cycle;
    return cap;
}

std::map<std::string, double> default_energy_weights() {
    // Placeholder magnitudes, not calibrated against any technology.
    return {
        {"issue", 1.0},      {"alu", 0.5},         {"fpu", 1.0},        {"rf_byte", 0.05},
        {"smem_byte", 0.12}, {"mac", 0.25},        {"acc_access", 2.0}, {"dma_byte", 0.04},
        {"l1_access", 4.0},  {"l2_access", 16.0},  {"dram_access", 160.0}, {"mmio", 1.0},
    };
}

SoCConfig preset(ArchVariant variant, Precision precision) {
    SoCConfig c;
    c.arch_variant = variant;
    c.precision = precision;
    c.energy_weights = default_energy_weights();
    switch (variant) {
        case ArchVariant::TightlyCoupled:
        case ArchVariant::TightlyCoupledDma:
            c.cores_per_cluster = 8;
            c.smem_subbanks_per_bank = 16;
            c.matrix_cfg = tc_unit(precision);
            break;
        case ArchVariant::OperandDecoupled:
            c.cores_per_cluster = 4;
            c.smem_subbanks_per_bank = 8;
            c.matrix_cfg = od_unit(precision);
            break;
        case ArchVariant::Disaggregated:
            c.cores_per_cluster = 8;
            c.smem_subbanks_per_bank = 8;
            c.matrix_cfg = disagg_unit(precision);
            break;
        default:
            throw ConfigError("soc.arch_variant", "unsupported variant");
    }
    return c;
}

std::vector<Violation> validate(const SoCConfig& c) {
    std::vector<Violation> v;
    auto bad = [&](const std::string& f, const std::string& r) { v.push_back({f, r}); };

    if (c.clusters != 1) bad("soc.clusters", "only a single cluster is simulated (must be 1)");
    if (c.cores_per_cluster < 1) bad("soc.cores_per_cluster", "must be >= 1");
    if (c.warps_per_core < 1) bad("soc.warps_per_core", "must be >= 1");
    if (c.lanes_per_warp < 1 || c.lanes_per_warp > 32) bad("soc.lanes_per_warp", "must be in [1, 32]");
    if (c.total_warps() > 256) bad("soc.warps_per_core", "cluster warp count must be <= 256");
    if (c.alus_per_lane < 1) bad("soc.alus_per_lane", "must be >= 1");
    if (c.fpus_per_lane < 1) bad("soc.fpus_per_lane", "must be >= 1");
    if (c.lsq_entries < 1) bad("soc.lsq_entries", "must be >= 1");
    if (c.warps_per_core >= 1 && c.rf_bytes_fp % c.warps_per_core != 0)
        bad("soc.rf_bytes_fp", "must divide evenly across warps");
    if (c.warps_per_core >= 1 && c.rf_bytes_fp / std::max(1u, c.warps_per_core) < 32u * 4 * c.lanes_per_warp)
        bad("soc.rf_bytes_fp", "must hold 32 FP registers per warp");

    if (c.smem_banks < 1) bad("smem.banks", "must be >= 1");
    if (c.smem_subbanks_per_bank < 1) bad("smem.subbanks_per_bank", "must be >= 1");
    if (c.smem_banks >= 1 && c.smem_subbanks_per_bank >= 1 &&
        c.smem_bytes % (uint64_t(c.smem_banks) * c.smem_subbanks_per_bank * 4) != 0)
        bad("smem.bytes", "must be divisible by banks * subbanks * 4");
    if (c.smem_subbanks_per_bank * 4 < 32)
        bad("smem.subbanks_per_bank", "a bank row must hold at least 32 bytes");
    if (c.smem_queue_depth < c.lanes_per_warp) bad("smem.queue_depth", "must hold one full warp access");

    if (!is_pow2(c.l1_line_bytes)) bad("cache.l1_line_bytes", "must be a power of two");
    if (uint64_t(c.lanes_per_warp) * 4 > c.l1_line_bytes)
        bad("cache.l1_line_bytes", "lanes_per_warp * 4 must fit in one line");
    if (c.l1_ways < 1 || c.l1d_bytes % (uint64_t(c.l1_line_bytes) * std::max(1u, c.l1_ways)) != 0)
        bad("cache.l1d_bytes", "must be divisible by line * ways");
    if (c.l2_ways < 1 || c.l2_bytes % (uint64_t(c.l1_line_bytes) * std::max(1u, c.l2_ways)) != 0)
        bad("cache.l2_bytes", "must be divisible by line * ways");

    const auto& m = c.matrix_cfg;
    const uint32_t es = c.element_bytes();
    const bool disagg = c.arch_variant == ArchVariant::Disaggregated;
    if (m.units_per_scope < 1) bad("matrix.units_per_scope", "must be >= 1");
    if (m.macs_per_unit_per_cycle < 1) bad("matrix.macs_per_unit_per_cycle", "must be >= 1");
    if (disagg != (m.scope == UnitScope::PerCluster))
        bad("matrix.scope", disagg ? "disaggregated units are per-cluster" : "core-coupled units are per-core");
    switch (c.arch_variant) {
        case ArchVariant::TightlyCoupled:
        case ArchVariant::TightlyCoupledDma: {
            if (m.tile_m != 8 || m.tile_n != 8) bad("matrix.tile_m", "tightly-coupled fragments are 8x8");
            if (m.tile_k * es != 32) bad("matrix.tile_k", "tile_k * element bytes must equal 32");
            if (m.macs_per_unit_per_cycle > 64 || 64 % std::max(1u, m.macs_per_unit_per_cycle) != 0)
                bad("matrix.macs_per_unit_per_cycle", "must divide the 64-MAC step");
            const uint64_t frag = uint64_t(m.tile_m) * m.tile_k * es + uint64_t(m.tile_k) * m.tile_n * es +
                                  uint64_t(m.tile_m) * m.tile_n * 4;
            if (frag > c.rf_bytes_per_warp())
                bad("soc.rf_bytes_fp", "per-warp register file cannot hold A, B and C fragments");
            break;
        }
        case ArchVariant::OperandDecoupled: {
            if (m.tile_m != 16 || m.tile_n != 16) bad("matrix.tile_m", "operand-decoupled tile is 16x16");
            if ((m.tile_k * es) % 32 != 0) bad("matrix.tile_k", "tile_k * element bytes must be a multiple of 32");
            if (m.fifo_depth < 1) bad("matrix.fifo_depth", "must be >= 1");
            if (uint64_t(m.tile_m) * m.tile_n * 4 > c.rf_bytes_per_warp())
                bad("soc.rf_bytes_fp", "per-warp register file cannot hold the accumulator fragment");
            const uint32_t kc = 32 / es;
            if (m.macs_per_unit_per_cycle == 0 || (16u * kc) % m.macs_per_unit_per_cycle != 0)
                bad("matrix.macs_per_unit_per_cycle", "must divide one 16-row MAC group");
            break;
        }
        case ArchVariant::Disaggregated:
            break;
    }
    auto check_systolic = [&](const MatrixUnitConfig& u, const std::string& pfx) {
        if (u.systolic_rows < 1 || u.systolic_cols < 1) {
            bad(pfx + ".systolic_rows", "systolic array must be non-empty");
            return;
        }
        if (u.macs_per_unit_per_cycle != u.systolic_rows * u.systolic_cols)
            bad(pfx + ".macs_per_unit_per_cycle", "must equal systolic_rows * systolic_cols");
        if (u.accumulator_bytes < uint64_t(u.tile_m) * u.tile_n * 4)
            bad(pfx + ".accumulator_bytes", "must hold a tile_m x tile_n FP32 accumulator tile");
        const uint32_t row_bytes = c.smem_subbanks_per_bank * 4;
        if (u.systolic_rows * es > row_bytes || row_bytes % (u.systolic_rows * es) != 0)
            bad(pfx + ".systolic_rows", "operand row segment must tile one bank row");
        if (u.systolic_cols * es > row_bytes || row_bytes % (u.systolic_cols * es) != 0)
            bad(pfx + ".systolic_cols", "operand row segment must tile one bank row");
        if (u.tile_m % u.systolic_rows != 0 && u.tile_m % u.systolic_cols != 0)
            bad(pfx + ".tile_m", "must be a multiple of the array size");
        if (u.tile_n % u.systolic_cols != 0) bad(pfx + ".tile_n", "must be a multiple of systolic_cols");
        if (u.tile_k % u.systolic_rows != 0) bad(pfx + ".tile_k", "must be a multiple of systolic_rows");
        if (u.command_queue_depth < 1) bad(pfx + ".command_queue_depth", "must be >= 1");
    };
    if (disagg) check_systolic(m, "matrix");
    if (c.second_unit) {
        if (!disagg) bad("matrix2", "a second matrix unit requires the Disaggregated variant");
        else {
            if (c.second_unit->scope != UnitScope::PerCluster) bad("matrix2.scope", "must be per-cluster");
            check_systolic(*c.second_unit, "matrix2");
        }
    }

    if (c.enforce_mac_parity && c.precision == Precision::FP16in_FP32acc && c.primary_mac_capacity() != 256)
        bad("matrix.macs_per_unit_per_cycle",
            "FP16 cluster MAC capacity must equal 256 (parity across variants); got " +
                std::to_string(c.primary_mac_capacity()));

    const auto& l = c.latency_cfg;
    auto pos = [&](uint32_t x, const char* f) {
        if (x < 1) bad(std::string("latency.") + f, "must be >= 1");
    };
    pos(l.l1_hit, "l1_hit");
    pos(l.l2_hit, "l2_hit");
    pos(l.dram, "dram");
    pos(l.smem_access, "smem_access");
    pos(l.mmio_access, "mmio_access");
    pos(l.issue_width_per_core, "issue_width_per_core");
    pos(l.alu, "alu");
    pos(l.fpu, "fpu");
    pos(l.fence_poll_interval, "fence_poll_interval");
    if (l.dma_bytes_per_cycle < 4 || l.dma_bytes_per_cycle % 4 != 0)
        bad("latency.dma_bytes_per_cycle", "must be >= 4 and a multiple of 4");

    for (const auto& [k, w] : c.energy_weights)
        if (!(w >= 0.0)) bad("energy." + k, "weight must be non-negative");
    return v;
}

void require_valid(const SoCConfig& cfg) {
    auto v = validate(cfg);
    if (!v.empty()) throw ConfigError(v.front().field, v.front().rule);
}

// ============================================================================
// Key-value document
// ============================================================================

namespace {

struct Field {
    std::function<void(SoCConfig&, const std::string&)> set;
    std::function<std::string(const SoCConfig&)> get;
};

uint32_t parse_u32(const std::string& key, const std::string& s) {
    try {
        size_t used = 0;
        unsigned long long v = std::stoull(s, &used, 0);
        if (used != s.size() || v > 0xFFFFFFFFull) throw std::invalid_argument("range");
        return static_cast<uint32_t>(v);
    } catch (const std::exception&) {
        throw ConfigError(key, "expected an unsigned integer, got '" + s + "'");
    }
}

bool parse_bool(const std::string& key, const std::string& s) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw ConfigError(key, "expected true or false, got '" + s + "'");
}

std::string scope_name(UnitScope s) { return s == UnitScope::PerCore ? "per-core" : "per-cluster"; }

UnitScope parse_scope(const std::string& key, const std::string& s) {
    if (s == "per-core") return UnitScope::PerCore;
    if (s == "per-cluster") return UnitScope::PerCluster;
    throw ConfigError(key, "expected per-core or per-cluster, got '" + s + "'");
}

std::string fmt_double(double d) {
    std::ostringstream os;
    os << std::setprecision(17) << d;
    return os.str();
}

#define U32(KEY, EXPR)                                                                         \
    {KEY, Field{[](SoCConfig& c, const std::string& v) { EXPR = parse_u32(KEY, v); },           \
                [](const SoCConfig& c) { return std::to_string(EXPR); }}}

const std::vector<std::pair<std::string, Field>>& soc_fields() {
    static const std::vector<std::pair<std::string, Field>> f = {
        U32("soc.clusters", c.clusters),
        U32("soc.cores_per_cluster", c.cores_per_cluster),
        U32("soc.warps_per_core", c.warps_per_core),
        U32("soc.lanes_per_warp", c.lanes_per_warp),
        U32("soc.alus_per_lane", c.alus_per_lane),
        U32("soc.fpus_per_lane", c.fpus_per_lane),
        U32("soc.lsq_entries", c.lsq_entries),
        U32("soc.rf_bytes_int", c.rf_bytes_int),
        U32("soc.rf_bytes_fp", c.rf_bytes_fp),
        {"soc.enforce_mac_parity",
         Field{[](SoCConfig& c, const std::string& v) { c.enforce_mac_parity = parse_bool("soc.enforce_mac_parity", v); },
               [](const SoCConfig& c) { return std::string(c.enforce_mac_parity ? "true" : "false"); }}},
        U32("smem.bytes", c.smem_bytes),
        U32("smem.banks", c.smem_banks),
        U32("smem.subbanks_per_bank", c.smem_subbanks_per_bank),
        U32("smem.queue_depth", c.smem_queue_depth),
        U32("cache.l1i_bytes", c.l1i_bytes),
        U32("cache.l1d_bytes", c.l1d_bytes),
        U32("cache.l2_bytes", c.l2_bytes),
        U32("cache.l1_line_bytes", c.l1_line_bytes),
        U32("cache.l1_ways", c.l1_ways),
        U32("cache.l2_ways", c.l2_ways),
        U32("latency.l1_hit", c.latency_cfg.l1_hit),
        U32("latency.l2_hit", c.latency_cfg.l2_hit),
        U32("latency.dram", c.latency_cfg.dram),
        U32("latency.smem_access", c.latency_cfg.smem_access),
        U32("latency.mmio_access", c.latency_cfg.mmio_access),
        U32("latency.dma_bytes_per_cycle", c.latency_cfg.dma_bytes_per_cycle),
        U32("latency.issue_width_per_core", c.latency_cfg.issue_width_per_core),
        U32("latency.alu", c.latency_cfg.alu),
        U32("latency.fpu", c.latency_cfg.fpu),
        U32("latency.fence_poll_interval", c.latency_cfg.fence_poll_interval),
    };
    return f;
}
#undef U32

using UnitField = std::pair<std::string, std::pair<std::function<void(MatrixUnitConfig&, const std::string&, const std::string&)>,
                                                   std::function<std::string(const MatrixUnitConfig&)>>>;

const std::vector<UnitField>& unit_fields() {
#define UF(NAME, MEMBER)                                                                              \
    UnitField{NAME,                                                                                   \
              {[](MatrixUnitConfig& m, const std::string& key, const std::string& v) { m.MEMBER = parse_u32(key, v); }, \
               [](const MatrixUnitConfig& m) { return std::to_string(m.MEMBER); }}}
    static const std::vector<UnitField> f = {
        UF("units_per_scope", units_per_scope),
        UnitField{"scope",
                  {[](MatrixUnitConfig& m, const std::string& key, const std::string& v) { m.scope = parse_scope(key, v); },
                   [](const MatrixUnitConfig& m) { return scope_name(m.scope); }}},
        UF("macs_per_unit_per_cycle", macs_per_unit_per_cycle),
        UF("tile_m", tile_m),
        UF("tile_n", tile_n),
        UF("tile_k", tile_k),
        UF("accumulator_bytes", accumulator_bytes),
        UF("systolic_rows", systolic_rows),
        UF("systolic_cols", systolic_cols),
        UF("fifo_depth", fifo_depth),
        UF("command_queue_depth", command_queue_depth),
    };
#undef UF
    return f;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

SoCConfig load_config(const std::string& text) {
    struct Entry {
        std::string key, value;
        int line;
    };
    std::vector<Entry> entries;
    std::set<std::string> seen;
    std::istringstream is(text);
    std::string raw;
    int lineno = 0;
    while (std::getline(is, raw)) {
        ++lineno;
        const auto hash = raw.find('#');
        const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(lineno), "expected 'key = value'");
        Entry e{trim(line.substr(0, eq)), trim(line.substr(eq + 1)), lineno};
        if (e.key.empty()) throw ConfigError("line " + std::to_string(lineno), "empty key");
        if (!seen.insert(e.key).second)
            throw ConfigError(e.key, "duplicate key at line " + std::to_string(lineno));
        entries.push_back(std::move(e));
    }

    ArchVariant variant = ArchVariant::Disaggregated;
    Precision precision = Precision::FP16in_FP32acc;
    for (const auto& e : entries) {
        if (e.key == "soc.arch_variant") variant = parse_variant(e.value);
        if (e.key == "soc.precision") precision = parse_precision(e.value);
    }
    SoCConfig cfg = preset(variant, precision);

    for (const auto& e : entries) {
        if (e.key == "soc.arch_variant" || e.key == "soc.precision") continue;
        const std::string where = " (line " + std::to_string(e.line) + ")";
        bool handled = false;
        for (const auto& [k, f] : soc_fields()) {
            if (k == e.key) {
                f.set(cfg, e.value);
                handled = true;
                break;
            }
        }
        if (handled) continue;
        if (e.key.rfind("energy.", 0) == 0) {
            try {
                size_t used = 0;
                double w = std::stod(e.value, &used);
                if (used != e.value.size()) throw std::invalid_argument("trailing");
                cfg.energy_weights[e.key.substr(7)] = w;
            } catch (const std::exception&) {
                throw ConfigError(e.key, "expected a number" + where);
            }
            continue;
        }
        for (const std::string pfx : {"matrix.", "matrix2."}) {
            if (e.key.rfind(pfx, 0) != 0) continue;
            const std::string name = e.key.substr(pfx.size());
            MatrixUnitConfig* unit = &cfg.matrix_cfg;
            if (pfx == "matrix2.") {
                if (!cfg.second_unit) cfg.second_unit = cfg.matrix_cfg;
                unit = &*cfg.second_unit;
            }
            for (const auto& [n, f] : unit_fields()) {
                if (n == name) {
                    f.first(*unit, e.key, e.value);
                    handled = true;
                    break;
                }
            }
        }
        if (!handled) throw ConfigError(e.key, "unknown key" + where);
    }
    require_valid(cfg);
    return cfg;
}

SoCConfig load_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("--config", "cannot open '" + path + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return load_config(ss.str());
}

std::string render(const SoCConfig& cfg) {
    std::ostringstream os;
    os << "soc.arch_variant = " << to_string(cfg.arch_variant) << "\n";
    os << "soc.precision = " << to_string(cfg.precision) << "\n";
    for (const auto& [k, f] : soc_fields()) os << k << " = " << f.get(cfg) << "\n";
    for (const auto& [n, f] : unit_fields()) os << "matrix." << n << " = " << f.second(cfg.matrix_cfg) << "\n";
    if (cfg.second_unit)
        for (const auto& [n, f] : unit_fields()) os << "matrix2." << n << " = " << f.second(*cfg.second_unit) << "\n";
    for (const auto& [k, w] : cfg.energy_weights) os << "energy." << k << " = " << fmt_double(w) << "\n";
    return os.str();
}

// ============================================================================
// Names
// ============================================================================

std::string to_string(ArchVariant v) {
    switch (v) {
        case ArchVariant::TightlyCoupled: return "TightlyCoupled";
        case ArchVariant::TightlyCoupledDma: return "TightlyCoupledDma";
        case ArchVariant::OperandDecoupled: return "OperandDecoupled";
        case ArchVariant::Disaggregated: return "Disaggregated";
    }
    return "?";
}

std::string short_name(ArchVariant v) {
    switch (v) {
        case ArchVariant::TightlyCoupled: return "volta";
        case ArchVariant::TightlyCoupledDma: return "ampere";
        case ArchVariant::OperandDecoupled: return "hopper";
        case ArchVariant::Disaggregated: return "disagg";
    }
    return "?";
}

std::string to_string(Precision p) {
    return p == Precision::FP16in_FP32acc ? "FP16in_FP32acc" : "FP32in_FP32acc";
}

ArchVariant parse_variant(const std::string& s) {
    std::string l;
    for (char ch : s) l += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    if (l == "tightlycoupled" || l == "volta" || l == "tc") return ArchVariant::TightlyCoupled;
    if (l == "tightlycoupleddma" || l == "ampere" || l == "tcdma") return ArchVariant::TightlyCoupledDma;
    if (l == "operanddecoupled" || l == "hopper" || l == "od") return ArchVariant::OperandDecoupled;
    if (l == "disaggregated" || l == "disagg" || l == "cluster") return ArchVariant::Disaggregated;
    throw ConfigError("soc.arch_variant", "unknown variant '" + s + "'");
}

Precision parse_precision(const std::string& s) {
    std::string l;
    for (char ch : s) l += static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    if (l == "fp16in_fp32acc" || l == "fp16") return Precision::FP16in_FP32acc;
    if (l == "fp32in_fp32acc" || l == "fp32") return Precision::FP32in_FP32acc;
    throw ConfigError("soc.precision", "unknown precision '" + s + "'");
}

std::vector<ArchVariant> all_variants() {
    return {ArchVariant::TightlyCoupled, ArchVariant::TightlyCoupledDma, ArchVariant::OperandDecoupled,
            ArchVariant::Disaggregated};
}

}  // namespace csim
