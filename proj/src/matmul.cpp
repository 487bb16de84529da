#include "mea/matmul.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <mutex>
#include <stdexcept>
#include <vector>

#if defined(__x86_64__)
#include <cpuid.h>
#include <immintrin.h>
#include <sys/syscall.h>
#include <unistd.h>
#define MEA_HAVE_AMX 1
#endif

namespace mea::nn {

namespace {

std::uint16_t to_bf16(float f) {
    std::uint32_t u = std::bit_cast<std::uint32_t>(f);
    if ((u & 0x7f800000u) == 0) return static_cast<std::uint16_t>((u >> 16) & 0x8000u);  // zero / subnormal
    if ((u & 0x7f800000u) == 0x7f800000u && (u & 0x7fffffu)) return static_cast<std::uint16_t>((u >> 16) | 0x40u);
    u += 0x7fffu + ((u >> 16) & 1u);
    return static_cast<std::uint16_t>(u >> 16);
}

}  // namespace

float round_to_bf16(float x) { return std::bit_cast<float>(static_cast<std::uint32_t>(to_bf16(x)) << 16); }

#ifdef MEA_HAVE_AMX

namespace {

constexpr int kArchReqXcompPerm = 0x1023;
constexpr int kXfeatureXtiledata = 18;
constexpr int kChunkK = 1024;  // bf16 elements of K per accumulation pass

bool probe_amx() {
    unsigned a, b, c, d;
    if (!__get_cpuid_count(7, 0, &a, &b, &c, &d)) return false;
    const bool avx512 = (b >> 16 & 1u) && (b >> 30 & 1u);
    const bool tiles = (d >> 24 & 1u) && (d >> 22 & 1u);
    if (!avx512 || !tiles) return false;
    if (!__get_cpuid_count(7, 1, &a, &b, &c, &d) || !(a >> 5 & 1u)) return false;  // avx512_bf16
    return syscall(SYS_arch_prctl, kArchReqXcompPerm, kXfeatureXtiledata) == 0;
}

struct alignas(64) TileConfig {
    std::uint8_t palette = 1;
    std::uint8_t start_row = 0;
    std::uint8_t reserved[14] = {};
    std::uint16_t colsb[16] = {};
    std::uint8_t rows[16] = {};
};

// word q of the result holds (lo[q], hi[q]) after _mm512_cvtne2ps_pbh(hi, lo)
__attribute__((target("avx512f,avx512bw"))) __m512i interleave_index() {
    alignas(64) static const std::uint16_t idx[32] = {0,  16, 1,  17, 2,  18, 3,  19, 4,  20, 5,
                                                      21, 6,  22, 7,  23, 8,  24, 9,  25, 10, 26,
                                                      11, 27, 12, 28, 13, 29, 14, 30, 15, 31};
    return _mm512_load_si512(idx);
}

// blocked A layout: block (i / 16, k / 32) holds 16 rows x 32 bf16, 1 KiB each
std::size_t a_offset(int i, int kk, int nkb) {
    return static_cast<std::size_t>((i / 16) * nkb + kk / 32) * 512 + static_cast<std::size_t>(i % 16) * 32 +
           static_cast<std::size_t>(kk % 32);
}

// in-register transpose of a 16x16 block of 32-bit words
__attribute__((target("avx512f"))) void transpose16(__m512i r[16]) {
    __m512i t[16], u[16], v[16];
    for (int i = 0; i < 8; ++i) {
        t[2 * i] = _mm512_unpacklo_epi32(r[2 * i], r[2 * i + 1]);
        t[2 * i + 1] = _mm512_unpackhi_epi32(r[2 * i], r[2 * i + 1]);
    }
    for (int i = 0; i < 4; ++i) {
        u[4 * i] = _mm512_unpacklo_epi64(t[4 * i], t[4 * i + 2]);
        u[4 * i + 1] = _mm512_unpackhi_epi64(t[4 * i], t[4 * i + 2]);
        u[4 * i + 2] = _mm512_unpacklo_epi64(t[4 * i + 1], t[4 * i + 3]);
        u[4 * i + 3] = _mm512_unpackhi_epi64(t[4 * i + 1], t[4 * i + 3]);
    }
    for (int h = 0; h < 16; h += 8) {
        for (int i = 0; i < 4; ++i) {
            v[h + i] = _mm512_shuffle_i32x4(u[h + i], u[h + i + 4], 0x88);
            v[h + i + 4] = _mm512_shuffle_i32x4(u[h + i], u[h + i + 4], 0xdd);
        }
    }
    for (int i = 0; i < 8; ++i) {
        r[i] = _mm512_shuffle_i32x4(v[i], v[i + 8], 0x88);
        r[i + 8] = _mm512_shuffle_i32x4(v[i], v[i + 8], 0xdd);
    }
}

// dst: blocked A layout, pre-zeroed
__attribute__((target("avx512f,avx512bw,avx512bf16"))) void pack_rows(int m, int k, MatView a, std::uint16_t* dst,
                                                                      int nkb) {
    if (a.col_stride == 1) {
        for (int i = 0; i < m; ++i) {
            const float* src = a.data + i * a.row_stride;
            int j = 0;
            for (; j + 32 <= k; j += 32) {
                const __m512bh v = _mm512_cvtne2ps_pbh(_mm512_loadu_ps(src + j + 16), _mm512_loadu_ps(src + j));
                _mm512_storeu_si512(dst + a_offset(i, j, nkb), reinterpret_cast<const __m512i&>(v));
            }
            for (; j < k; ++j) dst[a_offset(i, j, nkb)] = to_bf16(src[j]);
        }
        return;
    }
    if (a.row_stride == 1) {
        // transposed source: 32 source rows x 16 columns become 16 k-pair words
        // per column, then a register transpose turns columns into packed rows
        const __m512i inter = interleave_index();
        const __m512 zero = _mm512_setzero_ps();
        __m512i r[16];
        for (int k0 = 0; k0 < k; k0 += 32) {
            for (int i0 = 0; i0 < m; i0 += 16) {
                const int w = std::min(16, m - i0);
                const __mmask16 mask = static_cast<__mmask16>((1u << w) - 1u);
                for (int p = 0; p < 16; ++p) {
                    const int kk = k0 + 2 * p;
                    const float* r0 = a.data + kk * a.col_stride + i0;
                    const __m512 lo = kk < k ? _mm512_maskz_loadu_ps(mask, r0) : zero;
                    const __m512 hi = kk + 1 < k ? _mm512_maskz_loadu_ps(mask, r0 + a.col_stride) : zero;
                    const __m512bh v = _mm512_cvtne2ps_pbh(hi, lo);
                    r[p] = _mm512_permutexvar_epi16(inter, reinterpret_cast<const __m512i&>(v));
                }
                transpose16(r);
                for (int q = 0; q < w; ++q) _mm512_storeu_si512(dst + a_offset(i0 + q, k0, nkb), r[q]);
            }
        }
        return;
    }
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < k; ++j) dst[a_offset(i, j, nkb)] = to_bf16(a.data[i * a.row_stride + j * a.col_stride]);
    }
}

// VNNI layout: block (nb, kb) holds 16 k-pairs x 16 columns x 2, 1 KiB each
std::size_t vnni_offset(int kk, int nn, int nb, int kb, int nkb) {
    return static_cast<std::size_t>(nb * nkb + kb) * 512 + static_cast<std::size_t>((kk % 32) / 2) * 32 +
           static_cast<std::size_t>(nn % 16) * 2 + static_cast<std::size_t>(kk & 1);
}

__attribute__((target("avx512f,avx512bw,avx512bf16"))) void pack_vnni(int k, int n, MatView b, std::uint16_t* dst,
                                                                      int nkb) {
    if (b.col_stride == 1) {
        const __m512i idx = interleave_index();
        for (int k0 = 0; k0 < k; k0 += 2) {
            const float* r0 = b.data + k0 * b.row_stride;
            const float* r1 = k0 + 1 < k ? r0 + b.row_stride : nullptr;
            for (int n0 = 0; n0 < n; n0 += 16) {
                const int w = std::min(16, n - n0);
                const __mmask16 mask = static_cast<__mmask16>((1u << w) - 1u);
                const __m512 lo = _mm512_maskz_loadu_ps(mask, r0 + n0);
                const __m512 hi = r1 ? _mm512_maskz_loadu_ps(mask, r1 + n0) : _mm512_setzero_ps();
                const __m512bh v = _mm512_cvtne2ps_pbh(hi, lo);
                const __m512i inter = _mm512_permutexvar_epi16(idx, reinterpret_cast<const __m512i&>(v));
                _mm512_storeu_si512(dst + vnni_offset(k0, 0, n0 / 16, k0 / 32, nkb), inter);
            }
        }
        return;
    }
    if (b.row_stride == 1) {
        // transposed source: column nn is contiguous in k, so (k, k+1) pairs are
        // already adjacent; 32 k values fill one word in each of 16 packed rows
        const __m512i rows = _mm512_mullo_epi32(_mm512_set_epi32(15, 14, 13, 12, 11, 10, 9, 8, 7, 6, 5, 4, 3, 2, 1, 0),
                                                _mm512_set1_epi32(16));
        for (int nn = 0; nn < n; ++nn) {
            const float* col = b.data + nn * b.col_stride;
            for (int k0 = 0; k0 < k; k0 += 32) {
                const int w = std::min(32, k - k0);
                const __mmask16 m0 = static_cast<__mmask16>(w >= 16 ? 0xffffu : (1u << w) - 1u);
                const __mmask16 m1 = static_cast<__mmask16>(w >= 32 ? 0xffffu : w > 16 ? (1u << (w - 16)) - 1u : 0u);
                const __m512bh v = _mm512_cvtne2ps_pbh(_mm512_maskz_loadu_ps(m1, col + k0 + 16),
                                                       _mm512_maskz_loadu_ps(m0, col + k0));
                const __mmask16 words = static_cast<__mmask16>((1u << ((w + 1) / 2)) - 1u);
                _mm512_mask_i32scatter_epi32(dst + vnni_offset(k0, nn, nn / 16, k0 / 32, nkb), words, rows,
                                             reinterpret_cast<const __m512i&>(v), 4);
            }
        }
        return;
    }
    for (int nn = 0; nn < n; ++nn) {
        for (int kk = 0; kk < k; ++kk) {
            dst[vnni_offset(kk, nn, nn / 16, kk / 32, nkb)] = to_bf16(b.data[kk * b.row_stride + nn * b.col_stride]);
        }
    }
}

struct Scratch {
    std::vector<std::uint16_t> a, b;
    std::vector<float> c;
};

__attribute__((target("amx-tile,amx-bf16,avx512f"))) void run_tiles(int mp, int np, int kp, const std::uint16_t* a,
                                                                    const std::uint16_t* b, float* c) {
    TileConfig cfg;
    for (int t = 0; t < 8; ++t) {
        cfg.colsb[t] = 64;
        cfg.rows[t] = 16;
    }
    _tile_loadconfig(&cfg);
    const int nkb = kp / 32;
    const std::size_t ldc = static_cast<std::size_t>(np) * 4;
    for (int kc = 0; kc < kp; kc += kChunkK) {
        const int kb0 = kc / 32, kb1 = std::min(kp, kc + kChunkK) / 32;
        for (int mb = 0; mb < mp; mb += 32) {
            const std::uint16_t* a0 = a + static_cast<std::size_t>(mb / 16) * nkb * 512;
            const std::uint16_t* a1 = a0 + static_cast<std::size_t>(nkb) * 512;
            for (int nb = 0; nb < np / 16; nb += 2) {
                float* c00 = c + static_cast<std::size_t>(mb) * np + static_cast<std::size_t>(nb) * 16;
                float* c10 = c00 + static_cast<std::size_t>(16) * np;
                if (kc == 0) {
                    _tile_zero(0);
                    _tile_zero(1);
                    _tile_zero(2);
                    _tile_zero(3);
                } else {
                    _tile_loadd(0, c00, ldc);
                    _tile_loadd(1, c00 + 16, ldc);
                    _tile_loadd(2, c10, ldc);
                    _tile_loadd(3, c10 + 16, ldc);
                }
                const std::uint16_t* b0 = b + static_cast<std::size_t>(nb) * nkb * 512;
                const std::uint16_t* b1 = b0 + static_cast<std::size_t>(nkb) * 512;
                for (int kb = kb0; kb < kb1; ++kb) {
                    _tile_loadd(4, a0 + static_cast<std::size_t>(kb) * 512, 64);
                    _tile_loadd(5, a1 + static_cast<std::size_t>(kb) * 512, 64);
                    _tile_loadd(6, b0 + static_cast<std::size_t>(kb) * 512, 64);
                    _tile_loadd(7, b1 + static_cast<std::size_t>(kb) * 512, 64);
                    _tile_dpbf16ps(0, 4, 6);
                    _tile_dpbf16ps(1, 4, 7);
                    _tile_dpbf16ps(2, 5, 6);
                    _tile_dpbf16ps(3, 5, 7);
                }
                _tile_stored(0, c00, ldc);
                _tile_stored(1, c00 + 16, ldc);
                _tile_stored(2, c10, ldc);
                _tile_stored(3, c10 + 16, ldc);
            }
        }
    }
    _tile_release();
}

}  // namespace

bool bf16_matmul_available() {
    static std::once_flag once;
    static bool ok = false;
    std::call_once(once, [] { ok = probe_amx(); });
    return ok;
}

void matmul_bf16(int m, int n, int k, MatView a, MatView b, float* c) {
    if (!bf16_matmul_available()) throw std::runtime_error("bf16 matmul needs AMX-BF16 support");
    if (m <= 0 || n <= 0) return;
    if (k <= 0) {
        std::fill(c, c + static_cast<std::ptrdiff_t>(m) * n, 0.0f);
        return;
    }
    const int mp = (m + 31) / 32 * 32, np = (n + 31) / 32 * 32, kp = (k + 31) / 32 * 32;
    thread_local Scratch s;
    const int nkb = kp / 32;
    s.a.resize(static_cast<std::size_t>(mp) * kp);
    s.b.resize(static_cast<std::size_t>(kp) * np);
    pack_rows(m, k, a, s.a.data(), nkb);
    pack_vnni(k, n, b, s.b.data(), nkb);
    // the packers only write in-range elements; clear the padding they skip
    for (int i = 0; i < mp; ++i) {
        for (int kk = i < m ? k : 0; kk < kp; ++kk) s.a[a_offset(i, kk, nkb)] = 0;
    }
    for (int kk = 0; kk < kp; ++kk) {
        for (int nn = kk < k ? n : 0; nn < np; ++nn) s.b[vnni_offset(kk, nn, nn / 16, kk / 32, nkb)] = 0;
    }
    const bool direct = mp == m && np == n;
    if (!direct) s.c.resize(static_cast<std::size_t>(mp) * np);
    float* out = direct ? c : s.c.data();
    run_tiles(mp, np, kp, s.a.data(), s.b.data(), out);
    if (!direct) {
        for (int i = 0; i < m; ++i) {
            std::memcpy(c + static_cast<std::ptrdiff_t>(i) * n, out + static_cast<std::ptrdiff_t>(i) * np,
                        sizeof(float) * static_cast<std::size_t>(n));
        }
    }
}

#else

bool bf16_matmul_available() { return false; }

void matmul_bf16(int, int, int, MatView, MatView, float*) {
    throw std::runtime_error("bf16 matmul needs AMX-BF16 support");
}

#endif

}  // namespace mea::nn
