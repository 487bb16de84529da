#pragma once

#include <cstddef>

namespace mea::nn {

/// Strided read-only float matrix; (i, j) lives at data[i * row_stride + j * col_stride].
struct MatView {
    const float* data = nullptr;
    std::ptrdiff_t row_stride = 0;
    std::ptrdiff_t col_stride = 1;
};

/// True when the CPU has AMX bf16 tiles and the kernel granted tile state to this process.
bool bf16_matmul_available();

/// c (m x n, contiguous row-major) = a (m x k) * b (k x n).
/// Operands are rounded to bfloat16 (nearest-even, subnormals flushed), products
/// accumulate in fp32 in a fixed order: deterministic, but not an fp32 product.
/// Throws std::runtime_error when bf16_matmul_available() is false.
void matmul_bf16(int m, int n, int k, MatView a, MatView b, float* c);

/// The rounding applied to every operand, as a float.
float round_to_bf16(float x);

}  // namespace mea::nn
