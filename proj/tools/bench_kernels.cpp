// Times the OpenMP kernel set against the serial reference on
// training-shaped workloads and checks the two stay bit-identical.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "fscascade/kernels.hpp"
#include "fscascade/rng.hpp"

using namespace fscascade;
using kernels::Conv2dDims;

namespace {

std::vector<double> random_vec(Rng& rng, int64_t n) {
  std::vector<double> v(static_cast<size_t>(n));
  for (double& x : v) x = rng.normal();
  return v;
}

struct BenchResult {
  double serial_ms = 0.0;
  double omp_ms = 0.0;
  bool bit_identical = false;
};

double time_ms(const std::function<void()>& fn, int reps) {
  fn();  // warm-up
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < reps; ++i) fn();
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

bool same_bits(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

void report(const std::string& name, const BenchResult& r) {
  std::printf("%-18s serial %8.3f ms   omp %8.3f ms   speedup %5.2fx   %s\n",
              name.c_str(), r.serial_ms, r.omp_ms,
              r.omp_ms > 0 ? r.serial_ms / r.omp_ms : 0.0,
              r.bit_identical ? "bit-identical" : "MISMATCH");
}

}  // namespace

int main() {
#ifdef _OPENMP
  std::printf("OpenMP enabled, max threads %d\n", omp_get_max_threads());
#else
  std::printf("OpenMP not available; both columns run the same code\n");
#endif
  Rng rng(42);
  int failures = 0;
  const int reps = 5;

  {  // fully connected, RoI-head shaped: 64 rows of flattened pooled features
    const int64_t n = 64, d_in = 64 * 7 * 7, d_out = 256;
    const auto x = random_vec(rng, n * d_in);
    const auto w = random_vec(rng, d_in * d_out);
    const auto b = random_vec(rng, d_out);
    std::vector<double> ys(static_cast<size_t>(n * d_out));
    std::vector<double> yp = ys;
    BenchResult r;
    r.serial_ms = time_ms(
        [&] {
          kernels::serial::fc_forward(x.data(), w.data(), b.data(), ys.data(),
                                      n, d_in, d_out);
        },
        reps);
    r.omp_ms = time_ms(
        [&] {
          kernels::fc_forward(x.data(), w.data(), b.data(), yp.data(), n, d_in,
                              d_out);
        },
        reps);
    r.bit_identical = same_bits(ys, yp);
    failures += !r.bit_identical;
    report("fc_forward", r);

    const auto gy = random_vec(rng, n * d_out);
    std::vector<double> gws(static_cast<size_t>(d_in * d_out));
    std::vector<double> gwp = gws;
    BenchResult rw;
    rw.serial_ms = time_ms(
        [&] {
          std::fill(gws.begin(), gws.end(), 0.0);
          kernels::serial::fc_backward_w(x.data(), gy.data(), gws.data(), n,
                                         d_in, d_out);
        },
        reps);
    rw.omp_ms = time_ms(
        [&] {
          std::fill(gwp.begin(), gwp.end(), 0.0);
          kernels::fc_backward_w(x.data(), gy.data(), gwp.data(), n, d_in,
                                 d_out);
        },
        reps);
    rw.bit_identical = same_bits(gws, gwp);
    failures += !rw.bit_identical;
    report("fc_backward_w", rw);
  }

  {  // conv2d, backbone shaped: stride-2 block on a 48x48 map
    Conv2dDims d{};
    d.n = 1; d.c_in = 64; d.h = 48; d.w = 48;
    d.c_out = 64; d.kh = 3; d.kw = 3; d.stride = 2; d.pad = 1;
    d.oh = 24; d.ow = 24;
    const auto x = random_vec(rng, d.n * d.c_in * d.h * d.w);
    const auto k = random_vec(rng, d.c_out * d.c_in * 9);
    const auto b = random_vec(rng, d.c_out);
    std::vector<double> ys(static_cast<size_t>(d.n * d.c_out * d.oh * d.ow));
    std::vector<double> yp = ys;
    BenchResult r;
    r.serial_ms = time_ms(
        [&] {
          kernels::serial::conv2d_forward(x.data(), k.data(), b.data(),
                                          ys.data(), d);
        },
        reps);
    r.omp_ms = time_ms(
        [&] { kernels::conv2d_forward(x.data(), k.data(), b.data(), yp.data(), d); },
        reps);
    r.bit_identical = same_bits(ys, yp);
    failures += !r.bit_identical;
    report("conv2d_forward", r);

    const auto gy = random_vec(rng, d.n * d.c_out * d.oh * d.ow);
    std::vector<double> gxs(x.size());
    std::vector<double> gxp = gxs;
    BenchResult rx;
    rx.serial_ms = time_ms(
        [&] {
          std::fill(gxs.begin(), gxs.end(), 0.0);
          kernels::serial::conv2d_backward_x(gy.data(), k.data(), gxs.data(), d);
        },
        reps);
    rx.omp_ms = time_ms(
        [&] {
          std::fill(gxp.begin(), gxp.end(), 0.0);
          kernels::conv2d_backward_x(gy.data(), k.data(), gxp.data(), d);
        },
        reps);
    rx.bit_identical = same_bits(gxs, gxp);
    failures += !rx.bit_identical;
    report("conv2d_backward_x", rx);

    std::vector<double> gks(k.size());
    std::vector<double> gkp = gks;
    BenchResult rk;
    rk.serial_ms = time_ms(
        [&] {
          std::fill(gks.begin(), gks.end(), 0.0);
          kernels::serial::conv2d_backward_k(x.data(), gy.data(), gks.data(), d);
        },
        reps);
    rk.omp_ms = time_ms(
        [&] {
          std::fill(gkp.begin(), gkp.end(), 0.0);
          kernels::conv2d_backward_k(x.data(), gy.data(), gkp.data(), d);
        },
        reps);
    rk.bit_identical = same_bits(gks, gkp);
    failures += !rk.bit_identical;
    report("conv2d_backward_k", rk);
  }

  {  // RoI pooling: 64 boxes on a 12x12 feature map
    const int64_t c = 64, fh = 12, fw = 12, n = 64, out = 7;
    const auto feat = random_vec(rng, c * fh * fw);
    std::vector<double> rois(static_cast<size_t>(n * 4));
    for (int64_t i = 0; i < n; ++i) {
      const double x1 = rng.uniform(0.0, 8.0), y1 = rng.uniform(0.0, 8.0);
      rois[static_cast<size_t>(4 * i) + 0] = x1;
      rois[static_cast<size_t>(4 * i) + 1] = y1;
      rois[static_cast<size_t>(4 * i) + 2] = x1 + rng.uniform(1.0, 4.0);
      rois[static_cast<size_t>(4 * i) + 3] = y1 + rng.uniform(1.0, 4.0);
    }
    std::vector<double> ys(static_cast<size_t>(n * c * out * out));
    std::vector<double> yp = ys;
    BenchResult r;
    r.serial_ms = time_ms(
        [&] {
          kernels::serial::roi_pool_forward(feat.data(), c, fh, fw,
                                            rois.data(), n, out, ys.data());
        },
        reps);
    r.omp_ms = time_ms(
        [&] {
          kernels::roi_pool_forward(feat.data(), c, fh, fw, rois.data(), n,
                                    out, yp.data());
        },
        reps);
    r.bit_identical = same_bits(ys, yp);
    failures += !r.bit_identical;
    report("roi_pool_forward", r);
  }

  {  // relu on a backbone-sized activation
    const int64_t n = 64 * 48 * 48;
    const auto x = random_vec(rng, n);
    std::vector<double> ys(static_cast<size_t>(n));
    std::vector<double> yp = ys;
    BenchResult r;
    r.serial_ms = time_ms(
        [&] { kernels::serial::relu_forward(x.data(), ys.data(), n); }, reps);
    r.omp_ms =
        time_ms([&] { kernels::relu_forward(x.data(), yp.data(), n); }, reps);
    r.bit_identical = same_bits(ys, yp);
    failures += !r.bit_identical;
    report("relu_forward", r);
  }

  if (failures) {
    std::printf("%d kernel(s) diverged from the serial reference\n", failures);
    return 1;
  }
  std::printf("all kernels bit-identical to the serial reference\n");
  return 0;
}
