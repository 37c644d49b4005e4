#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>

// Shared by the serial and OpenMP pooling kernels so both sample with the
// exact same arithmetic.
namespace fscascade::kernels::detail {

// One bilinear sample at feature-grid point (cx, cy); pixel (r, c) has its
// center at (c + 0.5, r + 0.5). Samples outside the border are clamped.
struct BilinearTaps {
  int64_t r0, r1, c0, c1;
  double w00, w01, w10, w11;
};

inline BilinearTaps taps_at(double cx, double cy, int64_t fh, int64_t fw) {
  double u = std::clamp(cx - 0.5, 0.0, static_cast<double>(fw - 1));
  double v = std::clamp(cy - 0.5, 0.0, static_cast<double>(fh - 1));
  BilinearTaps t;
  t.c0 = static_cast<int64_t>(std::floor(u));
  t.r0 = static_cast<int64_t>(std::floor(v));
  t.c0 = std::min(t.c0, fw - 1);
  t.r0 = std::min(t.r0, fh - 1);
  t.c1 = std::min(t.c0 + 1, fw - 1);
  t.r1 = std::min(t.r0 + 1, fh - 1);
  const double au = u - static_cast<double>(t.c0);
  const double av = v - static_cast<double>(t.r0);
  t.w00 = (1.0 - av) * (1.0 - au);
  t.w01 = (1.0 - av) * au;
  t.w10 = av * (1.0 - au);
  t.w11 = av * au;
  return t;
}

}  // namespace fscascade::kernels::detail
