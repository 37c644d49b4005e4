// The OpenMP kernel set must match the serial reference bit-for-bit: every
// parallel loop owns whole output elements and accumulates them in the same
// order as the plain loops.

#include <doctest.h>

#include <array>
#include <cstring>
#include <vector>

#include "fscascade/kernels.hpp"
#include "fscascade/rng.hpp"

using namespace fscascade;
using kernels::Conv2dDims;

namespace {

std::vector<double> rand_vec(Rng& rng, int64_t n) {
  std::vector<double> v(static_cast<size_t>(n));
  for (double& x : v) x = rng.normal();
  return v;
}

bool bits_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() &&
         std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

Conv2dDims make_dims(int64_t n, int64_t c_in, int64_t h, int64_t w,
                     int64_t c_out, int64_t k, int64_t stride, int64_t pad) {
  Conv2dDims d{};
  d.n = n; d.c_in = c_in; d.h = h; d.w = w;
  d.c_out = c_out; d.kh = k; d.kw = k;
  d.stride = stride; d.pad = pad;
  d.oh = (h + 2 * pad - k) / stride + 1;
  d.ow = (w + 2 * pad - k) / stride + 1;
  return d;
}

}  // namespace

TEST_CASE("fc kernels: omp output is bit-identical to serial") {
  Rng rng(11);
  for (const auto [n, d_in, d_out] :
       {std::array<int64_t, 3>{1, 1, 1}, {3, 7, 5}, {16, 49, 33},
        {5, 128, 64}}) {
    const auto x = rand_vec(rng, n * d_in);
    const auto w = rand_vec(rng, d_in * d_out);
    const auto b = rand_vec(rng, d_out);
    std::vector<double> ys(static_cast<size_t>(n * d_out)), yp = ys;
    kernels::serial::fc_forward(x.data(), w.data(), b.data(), ys.data(), n,
                                d_in, d_out);
    kernels::fc_forward(x.data(), w.data(), b.data(), yp.data(), n, d_in,
                        d_out);
    CHECK(bits_equal(ys, yp));

    const auto gy = rand_vec(rng, n * d_out);
    std::vector<double> gxs(x.size(), 0.5), gxp = gxs;  // nonzero: += contract
    kernels::serial::fc_backward_x(gy.data(), w.data(), gxs.data(), n, d_in,
                                   d_out);
    kernels::fc_backward_x(gy.data(), w.data(), gxp.data(), n, d_in, d_out);
    CHECK(bits_equal(gxs, gxp));

    std::vector<double> gws(w.size(), -0.25), gwp = gws;
    kernels::serial::fc_backward_w(x.data(), gy.data(), gws.data(), n, d_in,
                                   d_out);
    kernels::fc_backward_w(x.data(), gy.data(), gwp.data(), n, d_in, d_out);
    CHECK(bits_equal(gws, gwp));

    std::vector<double> gbs(b.size(), 1.0), gbp = gbs;
    kernels::serial::fc_backward_b(gy.data(), gbs.data(), n, d_out);
    kernels::fc_backward_b(gy.data(), gbp.data(), n, d_out);
    CHECK(bits_equal(gbs, gbp));
  }
}

TEST_CASE("conv kernels: omp matches serial over strides, pads, kernel sizes") {
  Rng rng(23);
  const std::vector<Conv2dDims> cases = {
      make_dims(1, 1, 5, 5, 1, 3, 1, 1),  make_dims(2, 3, 8, 6, 4, 3, 1, 1),
      make_dims(1, 4, 9, 9, 5, 3, 2, 1),  make_dims(3, 2, 7, 7, 2, 1, 1, 0),
      make_dims(1, 8, 12, 12, 8, 3, 2, 1), make_dims(2, 5, 4, 4, 3, 3, 1, 0),
  };
  for (const Conv2dDims& d : cases) {
    CAPTURE(d.h); CAPTURE(d.kh); CAPTURE(d.stride); CAPTURE(d.pad);
    const auto x = rand_vec(rng, d.n * d.c_in * d.h * d.w);
    const auto k = rand_vec(rng, d.c_out * d.c_in * d.kh * d.kw);
    const auto b = rand_vec(rng, d.c_out);
    const int64_t ynum = d.n * d.c_out * d.oh * d.ow;

    std::vector<double> ys(static_cast<size_t>(ynum)), yp = ys;
    kernels::serial::conv2d_forward(x.data(), k.data(), b.data(), ys.data(), d);
    kernels::conv2d_forward(x.data(), k.data(), b.data(), yp.data(), d);
    CHECK(bits_equal(ys, yp));

    const auto gy = rand_vec(rng, ynum);
    std::vector<double> gxs(x.size(), 0.125), gxp = gxs;
    kernels::serial::conv2d_backward_x(gy.data(), k.data(), gxs.data(), d);
    kernels::conv2d_backward_x(gy.data(), k.data(), gxp.data(), d);
    CHECK(bits_equal(gxs, gxp));

    std::vector<double> gks(k.size(), -1.5), gkp = gks;
    kernels::serial::conv2d_backward_k(x.data(), gy.data(), gks.data(), d);
    kernels::conv2d_backward_k(x.data(), gy.data(), gkp.data(), d);
    CHECK(bits_equal(gks, gkp));

    std::vector<double> gbs(b.size(), 2.0), gbp = gbs;
    kernels::serial::conv2d_backward_b(gy.data(), gbs.data(), d);
    kernels::conv2d_backward_b(gy.data(), gbp.data(), d);
    CHECK(bits_equal(gbs, gbp));
  }
}

TEST_CASE("roi pooling kernels: omp matches serial, including border clamps") {
  Rng rng(37);
  const int64_t c = 6, fh = 9, fw = 11, out = 7;
  const auto feat = rand_vec(rng, c * fh * fw);
  const int64_t n = 24;
  std::vector<double> rois(static_cast<size_t>(n * 4));
  for (int64_t i = 0; i < n; ++i) {
    // Mix of interior boxes and boxes hanging over the feature border.
    const double x1 = rng.uniform(-2.0, static_cast<double>(fw) - 1.0);
    const double y1 = rng.uniform(-2.0, static_cast<double>(fh) - 1.0);
    rois[static_cast<size_t>(4 * i) + 0] = x1;
    rois[static_cast<size_t>(4 * i) + 1] = y1;
    rois[static_cast<size_t>(4 * i) + 2] = x1 + rng.uniform(0.5, 6.0);
    rois[static_cast<size_t>(4 * i) + 3] = y1 + rng.uniform(0.5, 6.0);
  }
  std::vector<double> ys(static_cast<size_t>(n * c * out * out)), yp = ys;
  kernels::serial::roi_pool_forward(feat.data(), c, fh, fw, rois.data(), n,
                                    out, ys.data());
  kernels::roi_pool_forward(feat.data(), c, fh, fw, rois.data(), n, out,
                            yp.data());
  CHECK(bits_equal(ys, yp));

  const auto gy = rand_vec(rng, n * c * out * out);
  std::vector<double> gfs(feat.size(), 0.0), gfp = gfs;
  kernels::serial::roi_pool_backward(gy.data(), rois.data(), n, out, c, fh, fw,
                                     gfs.data());
  kernels::roi_pool_backward(gy.data(), rois.data(), n, out, c, fh, fw,
                             gfp.data());
  CHECK(bits_equal(gfs, gfp));
}

TEST_CASE("relu kernels: omp matches serial") {
  Rng rng(41);
  const auto x = rand_vec(rng, 1000);
  std::vector<double> ys(x.size()), yp = ys;
  kernels::serial::relu_forward(x.data(), ys.data(), 1000);
  kernels::relu_forward(x.data(), yp.data(), 1000);
  CHECK(bits_equal(ys, yp));

  const auto gy = rand_vec(rng, 1000);
  std::vector<double> gxs(x.size(), 3.0), gxp = gxs;
  kernels::serial::relu_backward(x.data(), gy.data(), gxs.data(), 1000);
  kernels::relu_backward(x.data(), gy.data(), gxp.data(), 1000);
  CHECK(bits_equal(gxs, gxp));
}

TEST_CASE("conv forward agrees with a dumb quadruple-loop evaluation") {
  // Independent of both kernel sets: direct definition of cross-correlation.
  Rng rng(53);
  const Conv2dDims d = make_dims(2, 3, 6, 5, 4, 3, 2, 1);
  const auto x = rand_vec(rng, d.n * d.c_in * d.h * d.w);
  const auto k = rand_vec(rng, d.c_out * d.c_in * 9);
  const auto b = rand_vec(rng, d.c_out);
  std::vector<double> y(static_cast<size_t>(d.n * d.c_out * d.oh * d.ow));
  kernels::conv2d_forward(x.data(), k.data(), b.data(), y.data(), d);

  for (int64_t i = 0; i < d.n; ++i) {
    for (int64_t co = 0; co < d.c_out; ++co) {
      for (int64_t oh = 0; oh < d.oh; ++oh) {
        for (int64_t ow = 0; ow < d.ow; ++ow) {
          double want = b[static_cast<size_t>(co)];
          for (int64_t ci = 0; ci < d.c_in; ++ci) {
            for (int64_t r = 0; r < 3; ++r) {
              for (int64_t s = 0; s < 3; ++s) {
                const int64_t ih = oh * d.stride - d.pad + r;
                const int64_t iw = ow * d.stride - d.pad + s;
                if (ih < 0 || ih >= d.h || iw < 0 || iw >= d.w) continue;
                want += x[static_cast<size_t>(((i * d.c_in + ci) * d.h + ih) *
                                              d.w + iw)] *
                        k[static_cast<size_t>(((co * d.c_in + ci) * 3 + r) * 3 +
                                              s)];
              }
            }
          }
          const double got = y[static_cast<size_t>(
              ((i * d.c_out + co) * d.oh + oh) * d.ow + ow)];
          CHECK(got == doctest::Approx(want).epsilon(1e-12));
        }
      }
    }
  }
}
