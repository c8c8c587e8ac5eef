#include "doctest.h"

#include <csim/experiment.hpp>

using namespace csim;

TEST_SUITE("config") {

TEST_CASE("every preset validates and names its variant") {
    for (ArchVariant v : all_variants())
        for (Precision p : {Precision::FP16in_FP32acc, Precision::FP32in_FP32acc}) {
            const SoCConfig c = preset(v, p);
            CAPTURE(to_string(v));
            CHECK(validate(c).empty());
            CHECK(c.arch_variant == v);
            CHECK(c.precision == p);
        }
}

TEST_CASE("peak MAC capacity per cluster") {
    // [TRIVIAL] FP16: every variant offers 256 MACs/cycle. FP32 keeps the published
    // 8x8 Disaggregated array, so it has half the baselines' capacity.
    for (ArchVariant v : all_variants()) CHECK(preset(v, Precision::FP16in_FP32acc).cluster_mac_capacity() == 256);
    for (ArchVariant v : all_variants())
        CHECK(preset(v, Precision::FP32in_FP32acc).cluster_mac_capacity() ==
              (v == ArchVariant::Disaggregated ? 64u : 128u));
}

TEST_CASE("variant and precision names round-trip") {
    for (ArchVariant v : all_variants()) {
        CHECK(parse_variant(to_string(v)) == v);
        CHECK(parse_variant(short_name(v)) == v);
    }
    CHECK(parse_precision(to_string(Precision::FP32in_FP32acc)) == Precision::FP32in_FP32acc);
    CHECK_THROWS_AS(parse_variant("turing"), ConfigError);
}

TEST_CASE("render and load are inverse") {
    for (ArchVariant v : all_variants())
        for (Precision p : {Precision::FP16in_FP32acc, Precision::FP32in_FP32acc}) {
            const SoCConfig c = preset(v, p);
            CHECK(load_config(render(c)) == c);
        }
    SoCConfig m = multiunit_config();
    CHECK(load_config(render(m)) == m);
}

TEST_CASE("config errors name the offending field") {
    auto field_of = [](const std::string& text) {
        try {
            load_config(text);
        } catch (const ConfigError& e) {
            return e.field();
        }
        return std::string("<accepted>");
    };
    CHECK(field_of("soc.lanes_per_warp = 0\n") == "soc.lanes_per_warp");
    CHECK(field_of("smem.banks = 4\nsmem.banks = 8\n") == "smem.banks");
    CHECK(field_of("latency.dma_bytes_per_cycle = 6\n") == "latency.dma_bytes_per_cycle");
    CHECK(field_of("soc.clusters = 2\n") == "soc.clusters");
    CHECK(field_of("no equals sign\n") == "line 1");
    CHECK(field_of("# comment only\n\nsoc.arch_variant = hopper\n") == "<accepted>");
}

TEST_CASE("a config file for another variant is rejected") {
    const SoCConfig hopper = preset(ArchVariant::OperandDecoupled, Precision::FP16in_FP32acc);
    CHECK_THROWS_AS(config_for(ArchVariant::Disaggregated, Precision::FP16in_FP32acc, hopper), ConfigError);
    CHECK(config_for(ArchVariant::OperandDecoupled, Precision::FP32in_FP32acc, hopper) == hopper);
    CHECK(config_for(ArchVariant::Disaggregated, Precision::FP32in_FP32acc, std::nullopt) ==
          preset(ArchVariant::Disaggregated, Precision::FP32in_FP32acc));
}

}  // TEST_SUITE
