#include "vecformer/kernels.hpp"

#include <cstdlib>
#include <cstring>
#include <string>

#if defined(__x86_64__) || defined(_M_X64)
#include <immintrin.h>
#define VF_X86 1
#else
#define VF_X86 0
#endif

namespace vecformer::kernels {

namespace detail {

// ---------------------------------------------------------------------------
// Scalar reference kernels
// ---------------------------------------------------------------------------

double dot_scalar(const double* a, const double* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void add_scalar(const double* a, const double* b, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] + b[i];
}

void sub_scalar(const double* a, const double* b, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] - b[i];
}

void mul_scalar(const double* a, const double* b, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * b[i];
}

void scale_scalar(const double* a, double c, double* out, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) out[i] = a[i] * c;
}

double sum_scalar(const double* a, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += a[i];
    return acc;
}

double max_scalar(const double* a, std::size_t n) {
    double m = a[0];
    for (std::size_t i = 1; i < n; ++i)
        if (a[i] > m) m = a[i];
    return m;
}

double sqdist_scalar(const double* a, const double* b, std::size_t n) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = a[i] - b[i];
        acc += d * d;
    }
    return acc;
}

// ---------------------------------------------------------------------------
// AVX2 kernels. Compiled with per-function target attributes so the TU itself
// needs no special flags; only reachable after the runtime cpuid check.
// ---------------------------------------------------------------------------

#if VF_X86

__attribute__((target("avx2"))) static double hsum256(__m256d v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    __m128d s2 = _mm_add_pd(lo, hi);
    __m128d sh = _mm_unpackhi_pd(s2, s2);
    return _mm_cvtsd_f64(_mm_add_sd(s2, sh));
}

__attribute__((target("avx2"))) double dot_avx2(const double* a, const double* b, std::size_t n) {
    __m256d acc0 = _mm256_setzero_pd();
    __m256d acc1 = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 8 <= n; i += 8) {
        acc0 = _mm256_add_pd(acc0, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
        acc1 = _mm256_add_pd(acc1, _mm256_mul_pd(_mm256_loadu_pd(a + i + 4), _mm256_loadu_pd(b + i + 4)));
    }
    for (; i + 4 <= n; i += 4)
        acc0 = _mm256_add_pd(acc0, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    double acc = hsum256(_mm256_add_pd(acc0, acc1));
    for (; i < n; ++i) acc += a[i] * b[i];
    return acc;
}

__attribute__((target("avx2"))) void axpy_avx2(double alpha, const double* x, double* y, std::size_t n) {
    const __m256d va = _mm256_set1_pd(alpha);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d vy = _mm256_loadu_pd(y + i);
        vy = _mm256_add_pd(vy, _mm256_mul_pd(va, _mm256_loadu_pd(x + i)));
        _mm256_storeu_pd(y + i, vy);
    }
    for (; i < n; ++i) y[i] += alpha * x[i];
}

__attribute__((target("avx2"))) void add_avx2(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_add_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) out[i] = a[i] + b[i];
}

__attribute__((target("avx2"))) void sub_avx2(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) out[i] = a[i] - b[i];
}

__attribute__((target("avx2"))) void mul_avx2(const double* a, const double* b, double* out, std::size_t n) {
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i)));
    for (; i < n; ++i) out[i] = a[i] * b[i];
}

__attribute__((target("avx2"))) void scale_avx2(const double* a, double c, double* out, std::size_t n) {
    const __m256d vc = _mm256_set1_pd(c);
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4)
        _mm256_storeu_pd(out + i, _mm256_mul_pd(_mm256_loadu_pd(a + i), vc));
    for (; i < n; ++i) out[i] = a[i] * c;
}

__attribute__((target("avx2"))) double sum_avx2(const double* a, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) acc = _mm256_add_pd(acc, _mm256_loadu_pd(a + i));
    double r = hsum256(acc);
    for (; i < n; ++i) r += a[i];
    return r;
}

__attribute__((target("avx2"))) double max_avx2(const double* a, std::size_t n) {
    if (n < 4) return max_scalar(a, n);
    __m256d vm = _mm256_loadu_pd(a);
    std::size_t i = 4;
    for (; i + 4 <= n; i += 4) vm = _mm256_max_pd(vm, _mm256_loadu_pd(a + i));
    __m128d lo = _mm256_castpd256_pd128(vm);
    __m128d hi = _mm256_extractf128_pd(vm, 1);
    __m128d m2 = _mm_max_pd(lo, hi);
    __m128d sh = _mm_unpackhi_pd(m2, m2);
    double m = _mm_cvtsd_f64(_mm_max_sd(m2, sh));
    for (; i < n; ++i)
        if (a[i] > m) m = a[i];
    return m;
}

__attribute__((target("avx2"))) double sqdist_avx2(const double* a, const double* b, std::size_t n) {
    __m256d acc = _mm256_setzero_pd();
    std::size_t i = 0;
    for (; i + 4 <= n; i += 4) {
        __m256d d = _mm256_sub_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
        acc = _mm256_add_pd(acc, _mm256_mul_pd(d, d));
    }
    double r = hsum256(acc);
    for (; i < n; ++i) {
        const double d = a[i] - b[i];
        r += d * d;
    }
    return r;
}

#endif  // VF_X86

}  // namespace detail

// ---------------------------------------------------------------------------
// Dispatch
// ---------------------------------------------------------------------------

bool avx2_available() {
#if VF_X86
    return __builtin_cpu_supports("avx2") != 0;
#else
    return false;
#endif
}

static Backend resolve_backend() {
    if (const char* env = std::getenv("VECFORMER_KERNELS")) {
        if (std::strcmp(env, "scalar") == 0) return Backend::scalar;
        if (std::strcmp(env, "avx2") == 0 && avx2_available()) return Backend::avx2;
    }
    return avx2_available() ? Backend::avx2 : Backend::scalar;
}

Backend active_backend() {
    static const Backend b = resolve_backend();
    return b;
}

const char* backend_name(Backend b) {
    switch (b) {
        case Backend::scalar: return "scalar";
        case Backend::avx2: return "avx2";
    }
    return "?";
}

#if VF_X86
#define VF_DISPATCH(fn, ...) \
    return active_backend() == Backend::avx2 ? detail::fn##_avx2(__VA_ARGS__) : detail::fn##_scalar(__VA_ARGS__)
#else
#define VF_DISPATCH(fn, ...) return detail::fn##_scalar(__VA_ARGS__)
#endif

double dot(const double* a, const double* b, std::size_t n) { VF_DISPATCH(dot, a, b, n); }
void axpy(double alpha, const double* x, double* y, std::size_t n) { VF_DISPATCH(axpy, alpha, x, y, n); }
void add(const double* a, const double* b, double* out, std::size_t n) { VF_DISPATCH(add, a, b, out, n); }
void sub(const double* a, const double* b, double* out, std::size_t n) { VF_DISPATCH(sub, a, b, out, n); }
void mul(const double* a, const double* b, double* out, std::size_t n) { VF_DISPATCH(mul, a, b, out, n); }
void scale(const double* a, double c, double* out, std::size_t n) { VF_DISPATCH(scale, a, c, out, n); }
double sum(const double* a, std::size_t n) { VF_DISPATCH(sum, a, n); }
double max(const double* a, std::size_t n) { VF_DISPATCH(max, a, n); }
double sqdist(const double* a, const double* b, std::size_t n) { VF_DISPATCH(sqdist, a, b, n); }

#undef VF_DISPATCH

void matmul(const double* A, const double* B, double* C, std::size_t p, std::size_t q, std::size_t r,
            bool trans_a, bool trans_b) {
    for (std::size_t i = 0; i < p * r; ++i) C[i] = 0.0;
    if (!trans_a && !trans_b) {
        // C[i,:] += A[i,k] * B[k,:]  -- axpy over contiguous rows of B
        for (std::size_t i = 0; i < p; ++i) {
            double* c = C + i * r;
            const double* a = A + i * q;
            for (std::size_t k = 0; k < q; ++k) axpy(a[k], B + k * r, c, r);
        }
    } else if (!trans_a && trans_b) {
        // C[i,j] = dot(A row i, B row j); B stored r x q
        for (std::size_t i = 0; i < p; ++i) {
            const double* a = A + i * q;
            double* c = C + i * r;
            for (std::size_t j = 0; j < r; ++j) c[j] = dot(a, B + j * q, q);
        }
    } else if (trans_a && !trans_b) {
        // A stored q x p: C[i,:] += A[k,i] * B[k,:]
        for (std::size_t k = 0; k < q; ++k) {
            const double* arow = A + k * p;
            const double* brow = B + k * r;
            for (std::size_t i = 0; i < p; ++i) axpy(arow[i], brow, C + i * r, r);
        }
    } else {
        // A stored q x p, B stored r x q
        for (std::size_t i = 0; i < p; ++i) {
            double* c = C + i * r;
            for (std::size_t k = 0; k < q; ++k) {
                const double aki = A[k * p + i];
                if (aki == 0.0) continue;
                for (std::size_t j = 0; j < r; ++j) c[j] += aki * B[j * q + k];
            }
        }
    }
}

}  // namespace vecformer::kernels
