#include <csim/metrics.hpp>

#include <cstdio>
#include <numeric>
#include <sstream>

namespace csim {

const char* to_string(DmaDir d) {
    switch (d) {
        case DmaDir::GlobalToSmem: return "global_to_smem";
        case DmaDir::SmemToGlobal: return "smem_to_global";
        case DmaDir::AccumToGlobal: return "accum_to_global";
        case DmaDir::GlobalToAccum: return "global_to_accum";
    }
    return "?";
}

uint64_t EventLedger::retired_total() const { return std::accumulate(retired.begin(), retired.end(), uint64_t(0)); }
uint64_t EventLedger::smem_read_total() const {
    return std::accumulate(smem_read_bytes.begin(), smem_read_bytes.end(), uint64_t(0));
}
uint64_t EventLedger::smem_write_total() const {
    return std::accumulate(smem_write_bytes.begin(), smem_write_bytes.end(), uint64_t(0));
}
uint64_t EventLedger::dma_total() const { return std::accumulate(dma_bytes.begin(), dma_bytes.end(), uint64_t(0)); }

void EventLedger::merge(const EventLedger& o) {
    auto add = [](auto& a, const auto& b) {
        for (size_t i = 0; i < a.size(); ++i) a[i] += b[i];
    };
    cycles += o.cycles;
    add(retired, o.retired);
    add(retired_by_tag, o.retired_by_tag);
    issued += o.issued;
    alu_lane_ops += o.alu_lane_ops;
    fpu_lane_ops += o.fpu_lane_ops;
    macs += o.macs;
    add(rf_read_bytes, o.rf_read_bytes);
    add(rf_write_bytes, o.rf_write_bytes);
    add(smem_read_bytes, o.smem_read_bytes);
    add(smem_write_bytes, o.smem_write_bytes);
    add(dma_bytes, o.dma_bytes);
    smem_operand_load_bytes += o.smem_operand_load_bytes;
    issue_stalls += o.issue_stalls;
    fence_poll_cycles += o.fence_poll_cycles;
    fence_instances += o.fence_instances;
    fencing_warps += o.fencing_warps;
    barrier_wait_cycles += o.barrier_wait_cycles;
    fabric_defer_cycles += o.fabric_defer_cycles;
    accumulator_access_count += o.accumulator_access_count;
    matrix_stall_cycles += o.matrix_stall_cycles;
    mmio_accesses += o.mmio_accesses;
    mmio_rejects += o.mmio_rejects;
    dma_errors += o.dma_errors;
    l1_accesses += o.l1_accesses;
    l2_accesses += o.l2_accesses;
    dram_accesses += o.dram_accesses;
}

double utilization(uint64_t macs, uint64_t capacity, uint64_t cycles) {
    if (cycles == 0) throw MetricsError("utilization: zero cycles");
    if (capacity == 0) throw MetricsError("utilization: zero MAC capacity");
    return 100.0 * static_cast<double>(macs) / (static_cast<double>(capacity) * static_cast<double>(cycles));
}

double utilization(const EventLedger& l, const SoCConfig& cfg) {
    return utilization(l.macs, cfg.cluster_mac_capacity(), l.cycles);
}

uint64_t footprint(const EventLedger& l) {
    return l.smem_read_bytes[static_cast<size_t>(ReqClass::Matrix)] + l.smem_operand_load_bytes;
}

double instruction_ratio(const EventLedger& a, const EventLedger& b) {
    const uint64_t rb = b.retired_total();
    if (rb == 0) throw MetricsError("instruction_ratio: denominator ledger retired no instructions");
    return static_cast<double>(a.retired_total()) / static_cast<double>(rb);
}

double fence_overhead_pct(const EventLedger& l) {
    if (l.fencing_warps == 0 || l.cycles == 0) return 0.0;
    return 100.0 * static_cast<double>(l.fence_poll_cycles) /
           (static_cast<double>(l.fencing_warps) * static_cast<double>(l.cycles));
}

double fence_mean_cycles(const EventLedger& l) {
    if (l.fence_instances == 0) return 0.0;
    return static_cast<double>(l.fence_poll_cycles) / static_cast<double>(l.fence_instances);
}

std::map<std::string, uint64_t> event_counts(const EventLedger& l) {
    const uint64_t rf = std::accumulate(l.rf_read_bytes.begin(), l.rf_read_bytes.end(), uint64_t(0)) +
                        std::accumulate(l.rf_write_bytes.begin(), l.rf_write_bytes.end(), uint64_t(0));
    return {
        {"issue", l.issued},
        {"mmio", l.mmio_accesses},
        {"alu", l.alu_lane_ops},
        {"fpu", l.fpu_lane_ops},
        {"rf_byte", rf},
        {"smem_byte", l.smem_read_total() + l.smem_write_total()},
        {"mac", l.macs},
        {"acc_access", l.accumulator_access_count},
        {"dma_byte", l.dma_total()},
        {"l1_access", l.l1_accesses},
        {"l2_access", l.l2_accesses},
        {"dram_access", l.dram_accesses},
    };
}

namespace {

const std::map<std::string, std::string>& category_of() {
    static const std::map<std::string, std::string> m = {
        {"issue", "core-issue"},         {"mmio", "core-issue"},     {"alu", "core-alu/fpu"},
        {"fpu", "core-alu/fpu"},         {"rf_byte", "register-file"}, {"smem_byte", "shared-memory"},
        {"mac", "matrix-unit"},          {"acc_access", "matrix-unit"}, {"dma_byte", "dma"},
        {"l1_access", "cache"},          {"l2_access", "cache"},     {"dram_access", "cache"},
    };
    return m;
}

std::string fmt(double v, int prec) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", prec, v);
    return buf;
}

std::string column_name(const std::string& category) {
    std::string s = "energy_";
    for (char c : category) s += (c == '-' || c == '/') ? '_' : c;
    return s;
}

}  // namespace

const std::vector<std::string>& EnergyReport::categories() {
    static const std::vector<std::string> c = {"core-issue", "core-alu/fpu", "register-file", "shared-memory",
                                               "matrix-unit", "dma", "cache"};
    return c;
}

EnergyReport energy(const EventLedger& l, const std::map<std::string, double>& weights) {
    EnergyReport r;
    for (const auto& c : EnergyReport::categories()) r.by_category[c] = 0.0;
    std::string missing;
    const auto counts = event_counts(l);
    for (const auto& [ev, n] : counts) {
        const auto it = weights.find(ev);
        if (it == weights.end()) {
            if (n != 0) missing += (missing.empty() ? "" : ", ") + ev;
            continue;
        }
        r.weights[ev] = it->second;
        r.by_category[category_of().at(ev)] += it->second * static_cast<double>(n);
    }
    if (!missing.empty()) throw MetricsError("energy: missing weight for event class(es): " + missing);
    for (const auto& c : EnergyReport::categories()) r.total += r.by_category[c];
    return r;
}

ReportRow make_row(const std::string& variant, const std::string& workload, const std::string& size, uint64_t seed,
                   const EventLedger& l, uint64_t capacity, const std::map<std::string, double>& weights,
                   double max_rel_err, bool pass) {
    ReportRow r;
    r.variant = variant;
    r.workload = workload;
    r.size = size;
    r.seed = seed;
    r.cycles = l.cycles;
    r.macs = l.macs;
    r.capacity = capacity;
    r.utilization_pct = l.cycles ? utilization(l.macs, capacity, l.cycles) : 0.0;
    r.retired_instructions = l.retired_total();
    r.smem_footprint_bytes = footprint(l);
    r.fence_overhead_pct = fence_overhead_pct(l);
    r.fence_mean_cycles = fence_mean_cycles(l);
    r.rf_operand_bytes = l.rf_bytes(RfPurpose::Operand);
    r.rf_accumulator_bytes = l.rf_bytes(RfPurpose::Accumulator);
    r.smem_read_bytes = l.smem_read_total();
    r.smem_write_bytes = l.smem_write_total();
    r.dma_bytes = l.dma_total();
    const EnergyReport e = energy(l, weights);
    r.energy = e.by_category;
    r.energy_total = e.total;
    r.oracle_max_rel_err = max_rel_err;
    r.oracle_pass = pass;
    return r;
}

const std::vector<std::string>& report_columns() {
    static const std::vector<std::string> cols = [] {
        std::vector<std::string> c = {"variant",
                                      "workload",
                                      "size",
                                      "seed",
                                      "cycles",
                                      "macs",
                                      "capacity",
                                      "utilization_pct",
                                      "retired_instructions",
                                      "smem_footprint_bytes",
                                      "fence_overhead_pct",
                                      "fence_mean_cycles",
                                      "rf_operand_bytes",
                                      "rf_accumulator_bytes",
                                      "smem_read_bytes",
                                      "smem_write_bytes",
                                      "dma_bytes"};
        for (const auto& cat : EnergyReport::categories()) c.push_back(column_name(cat));
        c.push_back("energy_total");
        c.push_back("oracle_max_rel_err");
        c.push_back("oracle_pass");
        return c;
    }();
    return cols;
}

namespace {

std::vector<std::string> row_cells(const ReportRow& r) {
    std::vector<std::string> c = {r.variant,
                                  r.workload,
                                  r.size,
                                  std::to_string(r.seed),
                                  std::to_string(r.cycles),
                                  std::to_string(r.macs),
                                  std::to_string(r.capacity),
                                  fmt(r.utilization_pct, 4),
                                  std::to_string(r.retired_instructions),
                                  std::to_string(r.smem_footprint_bytes),
                                  fmt(r.fence_overhead_pct, 4),
                                  fmt(r.fence_mean_cycles, 2),
                                  std::to_string(r.rf_operand_bytes),
                                  std::to_string(r.rf_accumulator_bytes),
                                  std::to_string(r.smem_read_bytes),
                                  std::to_string(r.smem_write_bytes),
                                  std::to_string(r.dma_bytes)};
    for (const auto& cat : EnergyReport::categories()) {
        const auto it = r.energy.find(cat);
        c.push_back(fmt(it == r.energy.end() ? 0.0 : it->second, 3));
    }
    c.push_back(fmt(r.energy_total, 3));
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.3e", r.oracle_max_rel_err);
    c.push_back(buf);
    c.push_back(r.oracle_pass ? "1" : "0");
    return c;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur += ch;
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace

std::string emit_report(const std::vector<ReportRow>& rows, ReportFormat fmt_) {
    if (rows.empty()) throw MetricsError("emit_report: no rows");
    std::ostringstream os;
    const auto& cols = report_columns();
    if (fmt_ == ReportFormat::Csv) {
        for (size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i];
        os << "\n";
        for (const auto& r : rows) {
            const auto cells = row_cells(r);
            for (size_t i = 0; i < cells.size(); ++i) os << (i ? "," : "") << cells[i];
            os << "\n";
        }
    } else {
        os << "|";
        for (const auto& c : cols) os << " " << c << " |";
        os << "\n|";
        for (size_t i = 0; i < cols.size(); ++i) os << " --- |";
        os << "\n";
        for (const auto& r : rows) {
            os << "|";
            for (const auto& c : row_cells(r)) os << " " << c << " |";
            os << "\n";
        }
    }
    return os.str();
}

std::vector<ReportRow> parse_report_csv(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    if (!std::getline(is, line)) throw MetricsError("report: empty document");
    const auto header = split_csv_line(line);
    if (header != report_columns()) throw MetricsError("report: unrecognized CSV header");
    std::vector<ReportRow> rows;
    int lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto c = split_csv_line(line);
        if (c.size() != header.size())
            throw MetricsError("report line " + std::to_string(lineno) + ": expected " +
                               std::to_string(header.size()) + " fields");
        try {
            ReportRow r;
            size_t i = 0;
            r.variant = c[i++];
            r.workload = c[i++];
            r.size = c[i++];
            r.seed = std::stoull(c[i++]);
            r.cycles = std::stoull(c[i++]);
            r.macs = std::stoull(c[i++]);
            r.capacity = std::stoull(c[i++]);
            r.utilization_pct = std::stod(c[i++]);
            r.retired_instructions = std::stoull(c[i++]);
            r.smem_footprint_bytes = std::stoull(c[i++]);
            r.fence_overhead_pct = std::stod(c[i++]);
            r.fence_mean_cycles = std::stod(c[i++]);
            r.rf_operand_bytes = std::stoull(c[i++]);
            r.rf_accumulator_bytes = std::stoull(c[i++]);
            r.smem_read_bytes = std::stoull(c[i++]);
            r.smem_write_bytes = std::stoull(c[i++]);
            r.dma_bytes = std::stoull(c[i++]);
            for (const auto& cat : EnergyReport::categories()) r.energy[cat] = std::stod(c[i++]);
            r.energy_total = std::stod(c[i++]);
            r.oracle_max_rel_err = std::stod(c[i++]);
            r.oracle_pass = c[i++] == "1";
            rows.push_back(std::move(r));
        } catch (const std::invalid_argument&) {
            throw MetricsError("report line " + std::to_string(lineno) + ": malformed number");
        }
    }
    return rows;
}

namespace {

/// Variant names compare by identity, so "disagg" matches "Disaggregated".
bool same_variant(const std::string& a, const std::string& b) {
    try {
        return parse_variant(a) == parse_variant(b);
    } catch (const ConfigError&) {
        return a == b;
    }
}

}  // namespace

std::string compare_reports(const std::vector<ReportRow>& rows, const std::string& baseline, ReportFormat fmt_) {
    std::map<std::pair<std::string, std::string>, std::vector<const ReportRow*>> cells;
    for (const auto& r : rows) cells[{r.workload, r.size}].push_back(&r);
    const std::vector<std::string> cols = {"workload", "size", "variant", "utilization_pct", "instr_ratio_vs_" + baseline,
                                           "footprint_norm"};
    std::vector<std::vector<std::string>> out;
    for (const auto& [key, group] : cells) {
        if (group.size() < 2) continue;
        const ReportRow* base = nullptr;
        const ReportRow* disagg = nullptr;
        for (const auto* r : group) {
            if (same_variant(r->variant, baseline)) base = r;
            if (same_variant(r->variant, "disagg")) disagg = r;
        }
        for (const auto* r : group) {
            std::string ratio = "n/a", foot = "n/a";
            if (base && base->retired_instructions > 0)
                ratio = fmt(static_cast<double>(r->retired_instructions) / base->retired_instructions, 4);
            if (disagg && disagg->smem_footprint_bytes > 0)
                foot = fmt(static_cast<double>(r->smem_footprint_bytes) / disagg->smem_footprint_bytes, 2);
            out.push_back({key.first, key.second, r->variant, fmt(r->utilization_pct, 2), ratio, foot});
        }
    }
    if (out.empty()) throw MetricsError("compare: reports share no (workload, size) cell");
    std::ostringstream os;
    if (fmt_ == ReportFormat::Csv) {
        for (size_t i = 0; i < cols.size(); ++i) os << (i ? "," : "") << cols[i];
        os << "\n";
        for (const auto& row : out) {
            for (size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << row[i];
            os << "\n";
        }
    } else {
        os << "|";
        for (const auto& c : cols) os << " " << c << " |";
        os << "\n|";
        for (size_t i = 0; i < cols.size(); ++i) os << " --- |";
        os << "\n";
        for (const auto& row : out) {
            os << "|";
            for (const auto& c : row) os << " " << c << " |";
            os << "\n";
        }
    }
    return os.str();
}

}  // namespace csim
