#include "doctest.h"

#include <csim/fp16.hpp>
#include <csim/workloads.hpp>

#include <Eigen/Dense>

#include <cmath>
#include <filesystem>
#include <random>

using namespace csim;

namespace {

/// binary16 decode straight from the format definition.
double decode_half(uint16_t h) {
    const int sign = (h >> 15) ? -1 : 1;
    const int e = (h >> 10) & 0x1F, m = h & 0x3FF;
    if (e == 0) return sign * std::ldexp(double(m), -24);
    if (e == 31) return m ? NAN : sign * INFINITY;
    return sign * std::ldexp(1.0 + m / 1024.0, e - 15);
}

Eigen::MatrixXd to_eigen(const Matrix& m) {
    Eigen::MatrixXd e(m.rows, m.cols);
    for (uint32_t r = 0; r < m.rows; ++r)
        for (uint32_t c = 0; c < m.cols; ++c) e(r, c) = m.at(r, c);
    return e;
}

double max_rel(const Matrix& got, const Eigen::MatrixXd& want) {
    const double floor = 1e-2 * want.cwiseAbs().maxCoeff();
    double worst = 0.0;
    for (uint32_t r = 0; r < got.rows; ++r)
        for (uint32_t c = 0; c < got.cols; ++c)
            worst = std::max(worst, std::abs(got.at(r, c) - want(r, c)) / std::max(std::abs(want(r, c)), floor));
    return worst;
}

/// Softmax attention in double, one full row at a time (no tiling).
Eigen::MatrixXd attention_exact(const Matrix& q, const Matrix& k, const Matrix& v) {
    const Eigen::MatrixXd s = to_eigen(q) * to_eigen(k).transpose();
    Eigen::MatrixXd p(s.rows(), s.cols());
    for (Eigen::Index r = 0; r < s.rows(); ++r) {
        const Eigen::RowVectorXd e = (s.row(r).array() - s.row(r).maxCoeff()).exp();
        p.row(r) = e / e.sum();
    }
    return p * to_eigen(v);
}

/// Tiled online softmax in double with the second-order exp polynomial.
Eigen::MatrixXd attention_taylor2(const Matrix& q, const Matrix& k, const Matrix& v, uint32_t block) {
    auto t2 = [](double x) { return 1.0 + x + 0.5 * x * x; };
    const Eigen::MatrixXd s = to_eigen(q) * to_eigen(k).transpose();
    const Eigen::MatrixXd vv = to_eigen(v);
    Eigen::MatrixXd o = Eigen::MatrixXd::Zero(q.rows, v.cols);
    for (Eigen::Index r = 0; r < s.rows(); ++r) {
        double m = 0.0, l = 0.0;
        Eigen::RowVectorXd acc = Eigen::RowVectorXd::Zero(v.cols);
        for (Eigen::Index j0 = 0; j0 < s.cols(); j0 += block) {
            const auto tile = s.row(r).segment(j0, block);
            const double mt = tile.maxCoeff();
            const double m_new = j0 == 0 ? mt : std::max(m, mt);
            const double alpha = j0 == 0 ? 0.0 : t2(m - m_new);
            Eigen::RowVectorXd p(block);
            for (Eigen::Index c = 0; c < block; ++c) p(c) = t2(tile(c) - m_new);
            l = alpha * l + p.sum();
            acc = alpha * acc + p * vv.middleRows(j0, block);
            m = m_new;
        }
        o.row(r) = acc / l;
    }
    return o;
}

}  // namespace

TEST_SUITE("numeric") {

TEST_CASE("binary16 known encodings") {
    // [TRIVIAL] values fixed by the IEEE format.
    CHECK(float_to_half(1.0f) == 0x3C00);
    CHECK(float_to_half(-2.0f) == 0xC000);
    CHECK(float_to_half(65504.0f) == 0x7BFF);
    CHECK(float_to_half(std::ldexp(1.0f, -24)) == 0x0001);
    CHECK(float_to_half(65520.0f) == 0x7C00);
    CHECK(float_to_half(1.0f + std::ldexp(1.0f, -11)) == 0x3C00);        // tie to even
    CHECK(float_to_half(1.0f + 3 * std::ldexp(1.0f, -11)) == 0x3C02);    // tie to even
}

TEST_CASE("binary16 decode matches the format definition for every pattern") {
    for (uint32_t h = 0; h < 0x10000; ++h) {
        const double want = decode_half(static_cast<uint16_t>(h));
        if (std::isnan(want)) continue;
        REQUIRE(double(half_to_float(static_cast<uint16_t>(h))) == want);
        if (h != 0x8000) REQUIRE(float_to_half(half_to_float(static_cast<uint16_t>(h))) == h);
    }
}

TEST_CASE("binary16 encode rounds to nearest, ties to even") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<float> dist(-70000.0f, 70000.0f);
    for (int i = 0; i < 200000; ++i) {
        const float x = i % 2 ? dist(rng) : dist(rng) * 1e-4f;
        const uint16_t h = float_to_half(x);
        const double got = decode_half(h);
        if (std::isinf(got)) {
            CHECK(std::abs(x) >= 65520.0f);
            continue;
        }
        // Neighbours in magnitude never lie closer to x.
        const uint16_t mag = h & 0x7FFF, sign = h & 0x8000;
        for (int d : {-1, 1}) {
            const int nm = int(mag) + d;
            if (nm < 0 || nm >= 0x7C00) continue;
            const double other = decode_half(static_cast<uint16_t>(sign | nm));
            const double eg = std::abs(x - got), eo = std::abs(x - other);
            REQUIRE(eg <= eo);
            if (eg == eo) REQUIRE((mag & 1) == 0);
        }
    }
}

TEST_CASE("taylor2 exponential") {
    // [TRIVIAL] 1 + x + x^2/2.
    CHECK(taylor2_exp(0.0f) == 1.0f);
    CHECK(taylor2_exp(-1.0f) == 0.5f);
    CHECK(taylor2_exp(1.0f) == 2.5f);
    CHECK(taylor2_exp(-2.0f) == 1.0f);
    CHECK(to_string(parse_exp_mode("taylor2")) == std::string("taylor2"));
}

TEST_CASE("reference GEMM against a double-precision product") {
    // [DERIVED] Eigen product in double.
    std::mt19937_64 rng(3);
    for (auto [m, n, k] : {std::tuple{16u, 24u, 8u}, std::tuple{64u, 32u, 128u}, std::tuple{1u, 1u, 1u}}) {
        const Matrix a = random_matrix(m, k, rng, true), b = random_matrix(k, n, rng, true);
        CHECK(max_rel(reference_gemm(a, b), to_eigen(a) * to_eigen(b)) < 1e-5);
    }
}

TEST_CASE("reference attention against independent formulations") {
    const AttentionInputs in = attention_inputs(128, 32, 5);
    // FP32 rounding in the reference, magnified by the 1%-of-max relative-error floor.
    constexpr double tol = 1e-4;
    // [DERIVED] tiling with exact exp equals the untiled softmax.
    for (uint32_t block : {16u, 64u, 128u})
        CHECK(max_rel(reference_attention(in.q, in.k, in.v, ExpMode::Exact, block),
                      attention_exact(in.q, in.k, in.v)) < tol);
    // [DERIVED] the taylor2 streaming recurrence evaluated in double.
    for (uint32_t block : {32u, 64u})
        CHECK(max_rel(reference_attention(in.q, in.k, in.v, ExpMode::Taylor2, block),
                      attention_taylor2(in.q, in.k, in.v, block)) < tol);
    CHECK_THROWS_AS(reference_attention(in.q, in.k, in.v, ExpMode::Exact, 0), MappingError);
}

TEST_CASE("inputs are seeded, bounded and representable") {
    const GemmInputs a = gemm_inputs(64, 32, 16, 9, true), b = gemm_inputs(64, 32, 16, 9, true);
    const GemmInputs c = gemm_inputs(64, 32, 16, 10, true);
    CHECK(a.a.v == b.a.v);
    CHECK(a.b.v == b.b.v);
    CHECK(a.a.v != c.a.v);
    for (float x : a.a.v) {
        REQUIRE(std::abs(x) <= 1.0f);
        REQUIRE(round_to_half(x) == x);
    }
}

TEST_CASE("error report and matrix files") {
    Matrix w(4, 4, 1.0f), g = w;
    CHECK(compare_matrices(g, w).max_rel_err == 0.0);
    g.at(2, 3) = 1.5f;
    const ErrorReport e = compare_matrices(g, w);
    CHECK(e.max_rel_err == doctest::Approx(0.5));
    CHECK(e.row == 2);
    CHECK(e.col == 3);
    CHECK_THROWS_AS(compare_matrices(Matrix(2, 2), w), MappingError);

    const auto path = std::filesystem::temp_directory_path() / "csim_test_matrix.bin";
    write_matrix_file(path.string(), g);
    const Matrix r = read_matrix_file(path.string());
    CHECK(r.rows == 4);
    CHECK(r.v == g.v);
    std::filesystem::remove(path);
}

}  // TEST_SUITE
