// Kernel benchmark: serial reference vs OpenMP-parallel variants.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "cprn/kernels.hpp"
#include "cprn/rng.hpp"

using cprn::real;
namespace k = cprn::kernels;

namespace {

std::vector<real> random_buf(long n, cprn::Rng& rng) {
    std::vector<real> out(static_cast<size_t>(n));
    for (auto& v : out) v = static_cast<real>(rng.uniform(-1.0, 1.0));
    return out;
}

template <typename F>
double time_best_ms(F&& fn, int reps) {
    double best = 1e30;
    for (int r = 0; r < reps; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        fn();
        const auto t1 = std::chrono::steady_clock::now();
        best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    return best;
}

void report(const char* name, double serial_ms, double par_ms) {
    std::printf("%-28s %10.3f ms %10.3f ms %8.2fx\n", name, serial_ms, par_ms,
                par_ms > 0 ? serial_ms / par_ms : 0.0);
}

}  // namespace

int main(int argc, char** argv) {
    bool quick = false;
    for (int i = 1; i < argc; ++i) {
        if (std::strcmp(argv[i], "--quick") == 0) quick = true;
    }
    const int reps = quick ? 2 : 5;
    const int scale = quick ? 1 : 4;

#ifdef _OPENMP
    std::printf("threads: %d\n", omp_get_max_threads());
#else
    std::printf("threads: 1 (built without OpenMP)\n");
#endif
    std::printf("%-28s %13s %13s %9s\n", "kernel", "serial", "openmp", "speedup");

    cprn::Rng rng(7);

    {
        const int m = 128 * scale, kk = 128, n = 128;
        auto a = random_buf(static_cast<long>(m) * kk, rng);
        auto b = random_buf(static_cast<long>(kk) * n, rng);
        std::vector<real> c(static_cast<size_t>(m) * n);
        const double s = time_best_ms([&] { k::serial::matmul(a.data(), b.data(), c.data(), m, kk, n); }, reps);
        const double p = time_best_ms([&] { k::par::matmul(a.data(), b.data(), c.data(), m, kk, n); }, reps);
        report("matmul 512x128x128", s, p);
    }
    {
        const int positions = 4096 * scale, cin = 64, cout = 64;
        auto x = random_buf(static_cast<long>(positions) * cin, rng);
        auto w = random_buf(static_cast<long>(cin) * cout, rng);
        auto b = random_buf(cout, rng);
        std::vector<real> y(static_cast<size_t>(positions) * cout);
        const double s = time_best_ms(
            [&] { k::serial::linear(x.data(), w.data(), b.data(), y.data(), positions, cin, cout); }, reps);
        const double p = time_best_ms(
            [&] { k::par::linear(x.data(), w.data(), b.data(), y.data(), positions, cin, cout); }, reps);
        report("linear 16k pos 64->64", s, p);
    }
    {
        const int outer = 8192 * scale, len = 64;
        auto x = random_buf(static_cast<long>(outer) * len, rng);
        std::vector<real> y(x.size());
        const double s = time_best_ms([&] { k::serial::softmax(x.data(), y.data(), outer, len, 1); }, reps);
        const double p = time_best_ms([&] { k::par::softmax(x.data(), y.data(), outer, len, 1); }, reps);
        report("softmax 32k slices of 64", s, p);
    }
    {
        const int h = 64, w = 64, c = 32;
        const int oh = 256, ow = 256;
        auto x = random_buf(static_cast<long>(h) * w * c, rng);
        std::vector<real> y(static_cast<size_t>(oh) * ow * c);
        const double s = time_best_ms([&] { k::serial::bilinear(x.data(), y.data(), h, w, c, oh, ow); }, reps);
        const double p = time_best_ms([&] { k::par::bilinear(x.data(), y.data(), h, w, c, oh, ow); }, reps);
        report("bilinear 64->256 c32", s, p);
    }
    {
        const int h = 256, w = 256, c = 64;
        auto x = random_buf(static_cast<long>(h) * w * c, rng);
        std::vector<real> y(static_cast<size_t>(h) * c);
        const double s = time_best_ms([&] { k::serial::mean_pool_width(x.data(), y.data(), h, w, c); }, reps);
        const double p = time_best_ms([&] { k::par::mean_pool_width(x.data(), y.data(), h, w, c); }, reps);
        report("mean_pool 256x256x64", s, p);
    }

    return 0;
}
