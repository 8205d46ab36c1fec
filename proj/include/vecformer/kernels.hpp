#pragma once

// Dense double-precision inner-loop kernels. Every primitive has a scalar
// reference implementation and, on x86-64, an AVX2 variant; the active
// variant is chosen once at runtime (cpuid, overridable via the
// VECFORMER_KERNELS environment variable: "scalar" or "avx2").
//
// The scalar versions are the semantic reference; SIMD variants must agree
// with them to tight tolerances (see tests/test_kernels.cpp). Accumulation
// order differs between backends, so agreement is near-ulp, not bit-exact.
// Within one backend all kernels are sequential and bit-deterministic.

#include <cstddef>

namespace vecformer::kernels {

enum class Backend { scalar, avx2 };

// Active backend for this process. Resolved on first call and cached.
Backend active_backend();
const char* backend_name(Backend b);
bool avx2_available();

// ---- primitives (dispatch on active_backend) ----
double dot(const double* a, const double* b, std::size_t n);
void axpy(double alpha, const double* x, double* y, std::size_t n);  // y += alpha * x
void add(const double* a, const double* b, double* out, std::size_t n);
void sub(const double* a, const double* b, double* out, std::size_t n);
void mul(const double* a, const double* b, double* out, std::size_t n);
void scale(const double* a, double c, double* out, std::size_t n);
double sum(const double* a, std::size_t n);
double max(const double* a, std::size_t n);           // n >= 1
double sqdist(const double* a, const double* b, std::size_t n);  // sum (a-b)^2

// ---- composite ----
// C[p x r] = op(A) * op(B), row-major, C overwritten. op = transpose when the
// corresponding flag is set; A is then stored q x p (resp. B r x q).
void matmul(const double* A, const double* B, double* C, std::size_t p, std::size_t q,
            std::size_t r, bool trans_a, bool trans_b);

// Per-backend entry points, exposed for equivalence tests.
namespace detail {
double dot_scalar(const double* a, const double* b, std::size_t n);
void axpy_scalar(double alpha, const double* x, double* y, std::size_t n);
void add_scalar(const double* a, const double* b, double* out, std::size_t n);
void sub_scalar(const double* a, const double* b, double* out, std::size_t n);
void mul_scalar(const double* a, const double* b, double* out, std::size_t n);
void scale_scalar(const double* a, double c, double* out, std::size_t n);
double sum_scalar(const double* a, std::size_t n);
double max_scalar(const double* a, std::size_t n);
double sqdist_scalar(const double* a, const double* b, std::size_t n);

#if defined(__x86_64__) || defined(_M_X64)
double dot_avx2(const double* a, const double* b, std::size_t n);
void axpy_avx2(double alpha, const double* x, double* y, std::size_t n);
void add_avx2(const double* a, const double* b, double* out, std::size_t n);
void sub_avx2(const double* a, const double* b, double* out, std::size_t n);
void mul_avx2(const double* a, const double* b, double* out, std::size_t n);
void scale_avx2(const double* a, double c, double* out, std::size_t n);
double sum_avx2(const double* a, std::size_t n);
double max_avx2(const double* a, std::size_t n);
double sqdist_avx2(const double* a, const double* b, std::size_t n);
#endif
}  // namespace detail

}  // namespace vecformer::kernels
