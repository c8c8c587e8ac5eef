#pragma once

/// @file workloads.hpp
/// @brief Input generation, functional oracles and per-variant kernel builders.

#include <csim/config.hpp>
#include <csim/isa.hpp>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace csim {

class MappingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Dense row-major FP32 matrix.
struct Matrix {
    uint32_t rows = 0, cols = 0;
    std::vector<float> v;

    Matrix() = default;
    Matrix(uint32_t r, uint32_t c, float fill = 0.0f) : rows(r), cols(c), v(size_t(r) * c, fill) {}
    float& at(uint32_t r, uint32_t c) { return v[size_t(r) * cols + c]; }
    float at(uint32_t r, uint32_t c) const { return v[size_t(r) * cols + c]; }
    static Matrix identity(uint32_t n);
};

/// Uniform values in [-1, 1] from a seeded 64-bit Mersenne twister, rounded to
/// storage precision (FP16 when `fp16`).
Matrix random_matrix(uint32_t rows, uint32_t cols, std::mt19937_64& rng, bool fp16);

/// C = A * B with FP32 accumulation in natural k order.
Matrix reference_gemm(const Matrix& a, const Matrix& b);

enum class ExpMode { Exact, Taylor2 };
const char* to_string(ExpMode m);
ExpMode parse_exp_mode(const std::string& s);

/// 1 + x + x^2/2, evaluated as fma(x, fma(x, 0.5, 1), 1) like the kernels.
float taylor2_exp(float x);

/// Row-streaming online softmax over key tiles of `block` columns:
/// O = softmax(Q K^T) V, with e^x replaced by taylor2_exp in taylor2 mode.
Matrix reference_attention(const Matrix& q, const Matrix& k, const Matrix& v, ExpMode mode, uint32_t block = 64);

/// Max over elements of |x - y| / max(|y|, floor_frac * max|y|).
struct ErrorReport {
    double max_rel_err = 0.0;
    uint32_t row = 0, col = 0;
    float got = 0.0f, want = 0.0f;
};
ErrorReport compare_matrices(const Matrix& got, const Matrix& want, double floor_frac = 1e-2);

/// Reads a matrix described by `d` out of a global-memory image.
Matrix extract_matrix(const std::vector<uint8_t>& mem, const MatrixDesc& d);

/// Operands of a built kernel, regenerated from its seed.
struct GemmInputs {
    Matrix a, b;
};
GemmInputs gemm_inputs(uint32_t m, uint32_t n, uint32_t k, uint64_t seed, bool fp16);
struct AttentionInputs {
    Matrix q, k, v;
};
AttentionInputs attention_inputs(uint32_t seq_len, uint32_t head_dim, uint64_t seed);

/// Thread-block tile (M, N, K) required by the variant's GEMM mapping.
struct TileShape {
    uint32_t m, n, k;
};
TileShape gemm_block_tile(const SoCConfig& cfg);

KernelImage build_gemm_kernel(const SoCConfig& cfg, uint32_t m, uint32_t n, uint32_t k, uint64_t seed);
KernelImage build_flash_attention_kernel(const SoCConfig& cfg, uint32_t seq_len, uint32_t head_dim, uint64_t seed);

/// Two independent GEMMs driven by two thread blocks on a Disaggregated
/// cluster with a second, smaller matrix unit. `active` selects which thread
/// blocks do work (bit 0: large unit, bit 1: small unit).
struct MultiUnitShape {
    uint32_t large_m = 256, large_n = 256, large_k = 256;
    uint32_t small_m = 128, small_n = 128, small_k = 128;
};
SoCConfig multiunit_config();
/// Large operands are generated from `seed`, small ones from `seed + 1`.
KernelImage build_multiunit_kernel(const SoCConfig& cfg, const MultiUnitShape& shape, uint64_t seed, unsigned active);

/// Wraps hand-written per-warp op lists (tests and micro-benchmarks). All
/// warps form one thread block; barrier mask 0 is every warp.
KernelImage make_list_image(const SoCConfig& cfg, std::vector<std::vector<MicroOp>> per_warp,
                            std::vector<uint8_t> global_image);

/// Binary matrix file: "CSMX" magic, u32 rows, u32 cols, then FP32 row-major.
void write_matrix_file(const std::string& path, const Matrix& m);
Matrix read_matrix_file(const std::string& path);

}  // namespace csim
