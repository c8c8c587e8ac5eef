/// @file csim_main.cpp
/// @brief Command-line front end: run, compare, multiunit and sweep.

#include <csim/experiment.hpp>

#include "CLI11.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

using namespace csim;

namespace {

struct CommonOpts {
    std::string config_path;
    std::string variants;
    std::string workload = "gemm";
    std::string size = "256x256x256";
    uint32_t seq_len = 1024;
    uint32_t head_dim = 64;
    uint64_t seed = 1;
    std::string out = "csim_out";
    std::string trace = "none";
    std::string precision;
};

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep))
        if (!item.empty()) out.push_back(item);
    return out;
}

void parse_size(const std::string& s, uint32_t& m, uint32_t& n, uint32_t& k) {
    const auto parts = split(s, 'x');
    if (parts.size() != 3) throw CLI::ValidationError("--size", "expected MxNxK, got '" + s + "'");
    try {
        m = static_cast<uint32_t>(std::stoul(parts[0]));
        n = static_cast<uint32_t>(std::stoul(parts[1]));
        k = static_cast<uint32_t>(std::stoul(parts[2]));
    } catch (const std::exception&) {
        throw CLI::ValidationError("--size", "expected MxNxK, got '" + s + "'");
    }
}

TraceMode parse_trace(const std::string& s) {
    if (s == "none") return TraceMode::None;
    if (s == "events") return TraceMode::Events;
    if (s == "fabric") return TraceMode::Fabric;
    throw CLI::ValidationError("--trace", "expected none, events or fabric");
}

std::optional<SoCConfig> load_base_config(const CommonOpts& o) {
    std::string path = o.config_path;
    if (path.empty())
        if (const char* env = std::getenv("CSIM_CONFIG")) path = env;
    if (path.empty()) return std::nullopt;
    return load_config_file(path);
}

std::vector<ArchVariant> pick_variants(const CommonOpts& o, Workload w, const std::optional<SoCConfig>& base) {
    if (!o.variants.empty()) {
        std::vector<ArchVariant> v;
        for (const auto& name : split(o.variants, ',')) v.push_back(parse_variant(name));
        return v;
    }
    if (base) return {base->arch_variant};
    if (w == Workload::Flash) return {ArchVariant::Disaggregated, ArchVariant::TightlyCoupledDma};
    return all_variants();
}

void add_common(CLI::App* app, CommonOpts& o, bool sizes) {
    app->add_option("--config", o.config_path, "Hardware config file (default: $CSIM_CONFIG, else presets)");
    app->add_option("--variant", o.variants, "Variant(s): volta, ampere, hopper, disagg (comma separated)");
    app->add_option("--workload", o.workload, "gemm or flash")->check(CLI::IsMember({"gemm", "flash"}));
    if (sizes) app->add_option("--size", o.size, "GEMM extents MxNxK");
    app->add_option("--seqlen", o.seq_len, "Attention sequence length");
    app->add_option("--headdim", o.head_dim, "Attention head dimension");
    app->add_option("--seed", o.seed, "Input seed");
    app->add_option("--out", o.out, "Output directory");
    app->add_option("--trace", o.trace, "none, events or fabric")->check(CLI::IsMember({"none", "events", "fabric"}));
    app->add_option("--precision", o.precision, "fp16 or fp32 (presets only; default per workload)");
}

std::string fmt_err(const CellOutcome& c) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "max rel err %.3e at (%u, %u): got %.7g want %.7g (tolerance %.0e)",
                  c.error.max_rel_err, c.error.row, c.error.col, c.error.got, c.error.want, c.tolerance);
    return buf;
}

/// Runs every cell, writes the outputs, returns the exit status.
int run_cells(const CommonOpts& o, const std::vector<CellSpec>& cells) {
    const auto base = load_base_config(o);
    const TraceMode trace = parse_trace(o.trace);
    ensure_writable_dir(o.out);

    RunOptions ro;
    ro.trace = trace;
    std::vector<ReportRow> rows;
    std::vector<std::pair<std::string, EventLedger>> ledgers;
    std::vector<std::pair<std::string, std::string>> files;
    bool all_pass = true;
    for (const CellSpec& spec : cells) {
        const Precision p = o.precision.empty() ? (base ? base->precision : default_precision(spec.workload))
                                                : parse_precision(o.precision);
        const SoCConfig cfg = config_for(spec.variant, p, base);
        const std::string key = short_name(spec.variant) + "_" + to_string(spec.workload) + "_" + spec.size_label();
        std::cerr << "[csim] " << key << " ..." << std::flush;
        const CellOutcome c = run_cell(cfg, spec, ro);
        std::cerr << " " << c.run.ledger.cycles << " cycles, util " << c.row.utilization_pct << "%, "
                  << (c.oracle_pass ? "oracle ok" : "ORACLE FAILED") << "\n";
        if (!c.oracle_pass) {
            all_pass = false;
            std::cerr << "[csim]   " << fmt_err(c) << "\n";
            if (!c.macs_match)
                std::cerr << "[csim]   ledger MACs " << c.run.ledger.macs << " != expected " << c.expected_macs << "\n";
        }
        rows.push_back(c.row);
        ledgers.emplace_back(key, c.run.ledger);
        if (trace == TraceMode::Events) {
            std::string t;
            for (const auto& line : c.run.trace) t += line + "\n";
            files.emplace_back("trace_" + key + ".txt", t);
        } else if (trace == TraceMode::Fabric) {
            std::ostringstream t;
            t << "cycle,id,submit_cycle,queue_len,class,requester,bank,addr,width,write\n";
            for (const auto& r : c.run.fabric_log)
                t << r.cycle << ',' << r.id << ',' << r.submit_cycle << ',' << r.queue_len_at_submit << ','
                  << to_string(r.cls) << ',' << r.requester << ',' << r.bank << ',' << r.addr << ',' << r.width << ','
                  << (r.write ? 1 : 0) << '\n';
            files.emplace_back("fabric_" + key + ".csv", t.str());
        }
    }
    files.emplace_back("report.csv", emit_report(rows, ReportFormat::Csv));
    files.emplace_back("report.md", emit_report(rows, ReportFormat::Markdown));
    files.emplace_back("ledger.csv", ledger_csv(ledgers));
    write_outputs(o.out, files);
    std::cout << emit_report(rows, ReportFormat::Markdown);
    return all_pass ? 0 : 1;
}

std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cycle-approximate SIMT cluster simulator with four matrix-unit designs"};
    app.require_subcommand(1);

    CommonOpts run_o;
    auto* run = app.add_subcommand("run", "Simulate one workload on one or more variants");
    add_common(run, run_o, true);

    CommonOpts sweep_o;
    std::string sweep_sizes = "256x256x256,512x512x512";
    auto* sweep = app.add_subcommand("sweep", "Cartesian product of sizes and variants");
    add_common(sweep, sweep_o, false);
    sweep->add_option("--sizes", sweep_sizes, "Comma-separated MxNxK list (gemm) or L list (flash)");

    std::vector<std::string> cmp_files;
    std::string cmp_baseline = "volta", cmp_format = "md";
    auto* compare = app.add_subcommand("compare", "Normalized comparison of report CSV files");
    compare->add_option("reports", cmp_files, "report.csv files")->required();
    compare->add_option("--baseline", cmp_baseline, "Variant the instruction ratio is taken against");
    compare->add_option("--format", cmp_format, "md or csv")->check(CLI::IsMember({"md", "csv"}));

    uint64_t mu_seed = 1;
    std::string mu_out = "csim_out";
    auto* multi = app.add_subcommand("multiunit", "Two GEMMs on two matrix units, parallel vs serial");
    multi->add_option("--seed", mu_seed, "Input seed");
    multi->add_option("--out", mu_out, "Output directory");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) {
            const Workload w = parse_workload(run_o.workload);
            std::vector<CellSpec> cells;
            for (ArchVariant v : pick_variants(run_o, w, load_base_config(run_o))) {
                CellSpec s;
                s.variant = v;
                s.workload = w;
                parse_size(run_o.size, s.m, s.n, s.k);
                s.seq_len = run_o.seq_len;
                s.head_dim = run_o.head_dim;
                s.seed = run_o.seed;
                cells.push_back(s);
            }
            return run_cells(run_o, cells);
        }
        if (*sweep) {
            const Workload w = parse_workload(sweep_o.workload);
            std::vector<CellSpec> cells;
            const auto variants = pick_variants(sweep_o, w, load_base_config(sweep_o));
            for (const auto& sz : split(sweep_sizes, ','))
                for (ArchVariant v : variants) {
                    CellSpec s;
                    s.variant = v;
                    s.workload = w;
                    s.seed = sweep_o.seed;
                    s.head_dim = sweep_o.head_dim;
                    if (w == Workload::Gemm) parse_size(sz, s.m, s.n, s.k);
                    else s.seq_len = static_cast<uint32_t>(std::stoul(sz));
                    cells.push_back(s);
                }
            return run_cells(sweep_o, cells);
        }
        if (*compare) {
            std::vector<ReportRow> rows;
            for (const auto& f : cmp_files) {
                auto r = parse_report_csv(read_file(f));
                rows.insert(rows.end(), r.begin(), r.end());
            }
            std::cout << compare_reports(rows, cmp_baseline, cmp_format == "csv" ? ReportFormat::Csv : ReportFormat::Markdown);
            return 0;
        }
        if (*multi) {
            ensure_writable_dir(mu_out);
            std::cerr << "[csim] multi-unit: parallel and two serial runs ...\n";
            const MultiUnitOutcome m = run_multiunit(multiunit_config(), MultiUnitShape{}, mu_seed);
            std::printf("combined utilization: parallel %.2f%%, serial %.2f%% (delta %+.2f%% relative)\n",
                        m.util_parallel, m.util_serial, m.util_delta_rel_pct);
            std::printf("unit finish cycles: parallel %llu / %llu, serial %llu / %llu\n",
                        static_cast<unsigned long long>(m.parallel.units[0].last_active + 1),
                        static_cast<unsigned long long>(m.parallel.units[1].last_active + 1),
                        static_cast<unsigned long long>(m.serial[0].units[0].last_active + 1),
                        static_cast<unsigned long long>(m.serial[1].units[1].last_active + 1));
            std::printf("energy per MAC: parallel %.4f, serial %.4f (overhead %+.2f%%)\n", m.energy_per_mac_parallel,
                        m.energy_per_mac_serial, m.energy_overhead_pct);
            std::printf("oracle: %s (large %.3e, small %.3e)\n", m.oracle_pass ? "ok" : "FAILED",
                        m.error[0].max_rel_err, m.error[1].max_rel_err);
            write_outputs(mu_out, {{"multiunit.csv", emit_report(m.rows, ReportFormat::Csv)},
                                   {"multiunit.md", emit_report(m.rows, ReportFormat::Markdown)}});
            return m.oracle_pass ? 0 : 1;
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const MappingError& e) {
        std::cerr << "mapping error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
