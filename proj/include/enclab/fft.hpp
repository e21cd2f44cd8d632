#pragma once

// Iterative radix-2 FFT over std::complex<double>.  Lengths are restricted
// to powers of two; twiddle tables are cached per length.

#include <complex>
#include <cstddef>
#include <unordered_map>
#include <vector>

#include "enclab/errors.hpp"

namespace enclab {

inline bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

namespace detail {

struct FftPlan {
    std::vector<std::size_t> bitrev;
    std::vector<std::complex<double>> twiddle;  // e^{-2πi k / n}, k < n/2
};

inline const FftPlan& fft_plan(std::size_t n) {
    thread_local std::unordered_map<std::size_t, FftPlan> cache;
    auto it = cache.find(n);
    if (it != cache.end()) return it->second;

    FftPlan plan;
    plan.bitrev.resize(n);
    std::size_t log2n = 0;
    while ((std::size_t{1} << log2n) < n) ++log2n;
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t r = 0;
        for (std::size_t b = 0; b < log2n; ++b)
            if (i & (std::size_t{1} << b)) r |= std::size_t{1} << (log2n - 1 - b);
        plan.bitrev[i] = r;
    }
    plan.twiddle.resize(n / 2);
    const double step = -6.283185307179586476925286766559 / static_cast<double>(n);
    for (std::size_t k = 0; k < n / 2; ++k)
        plan.twiddle[k] = std::polar(1.0, step * static_cast<double>(k));
    return cache.emplace(n, std::move(plan)).first->second;
}

}  // namespace detail

// In-place transform; inverse includes the 1/n scaling.
inline void fft_inplace(std::vector<std::complex<double>>& a, bool inverse) {
    const std::size_t n = a.size();
    if (n == 1) return;
    if (!is_power_of_two(n))
        throw DimensionError("fft: length must be a power of two, got " + std::to_string(n));

    const auto& plan = detail::fft_plan(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t j = plan.bitrev[i];
        if (i < j) std::swap(a[i], a[j]);
    }
    for (std::size_t len = 2; len <= n; len <<= 1) {
        const std::size_t half = len >> 1;
        const std::size_t stride = n / len;
        for (std::size_t start = 0; start < n; start += len) {
            for (std::size_t k = 0; k < half; ++k) {
                std::complex<double> w = plan.twiddle[k * stride];
                if (inverse) w = std::conj(w);
                std::complex<double> u = a[start + k];
                std::complex<double> v = a[start + k + half] * w;
                a[start + k] = u + v;
                a[start + k + half] = u - v;
            }
        }
    }
    if (inverse) {
        const double inv = 1.0 / static_cast<double>(n);
        for (auto& x : a) x *= inv;
    }
}

inline std::vector<std::complex<double>> fft_real(const double* x, std::size_t n) {
    std::vector<std::complex<double>> a(n);
    for (std::size_t i = 0; i < n; ++i) a[i] = {x[i], 0.0};
    fft_inplace(a, false);
    return a;
}

// y[i] = Σ_j u[j] · k[(i−j) mod n], via the frequency domain.
inline std::vector<double> circular_convolve(const std::vector<double>& u,
                                             const std::vector<double>& k) {
    if (u.size() != k.size())
        throw DimensionError("circular_convolve: length mismatch " +
                             std::to_string(u.size()) + " vs " + std::to_string(k.size()));
    const std::size_t n = u.size();
    auto fu = fft_real(u.data(), n);
    auto fk = fft_real(k.data(), n);
    for (std::size_t i = 0; i < n; ++i) fu[i] *= fk[i];
    fft_inplace(fu, true);
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = fu[i].real();
    return y;
}

// y[i] = Σ_j g[j] · k[(j−i) mod n]  (cross-correlation; the adjoint of
// circular convolution, used for gradients).
inline std::vector<double> circular_correlate(const std::vector<double>& g,
                                              const std::vector<double>& k) {
    if (g.size() != k.size())
        throw DimensionError("circular_correlate: length mismatch");
    const std::size_t n = g.size();
    auto fg = fft_real(g.data(), n);
    auto fk = fft_real(k.data(), n);
    for (std::size_t i = 0; i < n; ++i) fg[i] *= std::conj(fk[i]);
    fft_inplace(fg, true);
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) y[i] = fg[i].real();
    return y;
}

}  // namespace enclab
