#include "fscascade/kernels.hpp"

#include "bilinear_taps.hpp"

// Plain-loop reference kernels. Each output element accumulates its terms
// in the same order as the OpenMP set, so the two are bit-comparable.

namespace fscascade::kernels::serial {

void fc_forward(const double* x, const double* w, const double* b, double* y,
                int64_t n, int64_t d_in, int64_t d_out) {
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = 0; j < d_out; ++j) {
      double acc = b[j];
      for (int64_t k = 0; k < d_in; ++k) acc += x[i * d_in + k] * w[k * d_out + j];
      y[i * d_out + j] = acc;
    }
  }
}

void fc_backward_x(const double* gy, const double* w, double* gx,
                   int64_t n, int64_t d_in, int64_t d_out) {
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t k = 0; k < d_in; ++k) {
      double acc = 0.0;
      for (int64_t j = 0; j < d_out; ++j) acc += gy[i * d_out + j] * w[k * d_out + j];
      gx[i * d_in + k] += acc;
    }
  }
}

void fc_backward_w(const double* x, const double* gy, double* gw,
                   int64_t n, int64_t d_in, int64_t d_out) {
  for (int64_t k = 0; k < d_in; ++k) {
    for (int64_t j = 0; j < d_out; ++j) {
      double acc = 0.0;
      for (int64_t i = 0; i < n; ++i) acc += x[i * d_in + k] * gy[i * d_out + j];
      gw[k * d_out + j] += acc;
    }
  }
}

void fc_backward_b(const double* gy, double* gb, int64_t n, int64_t d_out) {
  for (int64_t j = 0; j < d_out; ++j) {
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) acc += gy[i * d_out + j];
    gb[j] += acc;
  }
}

void conv2d_forward(const double* x, const double* k, const double* b,
                    double* y, const Conv2dDims& d) {
  for (int64_t i = 0; i < d.n; ++i) {
    for (int64_t co = 0; co < d.c_out; ++co) {
      for (int64_t oh = 0; oh < d.oh; ++oh) {
        for (int64_t ow = 0; ow < d.ow; ++ow) {
          double acc = b[co];
          for (int64_t ci = 0; ci < d.c_in; ++ci) {
            for (int64_t r = 0; r < d.kh; ++r) {
              const int64_t ih = oh * d.stride - d.pad + r;
              if (ih < 0 || ih >= d.h) continue;
              for (int64_t s = 0; s < d.kw; ++s) {
                const int64_t iw = ow * d.stride - d.pad + s;
                if (iw < 0 || iw >= d.w) continue;
                acc += x[((i * d.c_in + ci) * d.h + ih) * d.w + iw] *
                       k[((co * d.c_in + ci) * d.kh + r) * d.kw + s];
              }
            }
          }
          y[((i * d.c_out + co) * d.oh + oh) * d.ow + ow] = acc;
        }
      }
    }
  }
}

// Gather form of the input gradient: each input cell sums its own
// contributions, so the parallel set can split cells across threads.
void conv2d_backward_x(const double* gy, const double* k, double* gx,
                       const Conv2dDims& d) {
  for (int64_t i = 0; i < d.n; ++i) {
    for (int64_t ci = 0; ci < d.c_in; ++ci) {
      for (int64_t ih = 0; ih < d.h; ++ih) {
        for (int64_t iw = 0; iw < d.w; ++iw) {
          double acc = 0.0;
          for (int64_t co = 0; co < d.c_out; ++co) {
            for (int64_t r = 0; r < d.kh; ++r) {
              const int64_t th = ih + d.pad - r;
              if (th < 0 || th % d.stride != 0) continue;
              const int64_t oh = th / d.stride;
              if (oh >= d.oh) continue;
              for (int64_t s = 0; s < d.kw; ++s) {
                const int64_t tw = iw + d.pad - s;
                if (tw < 0 || tw % d.stride != 0) continue;
                const int64_t ow = tw / d.stride;
                if (ow >= d.ow) continue;
                acc += gy[((i * d.c_out + co) * d.oh + oh) * d.ow + ow] *
                       k[((co * d.c_in + ci) * d.kh + r) * d.kw + s];
              }
            }
          }
          gx[((i * d.c_in + ci) * d.h + ih) * d.w + iw] += acc;
        }
      }
    }
  }
}

void conv2d_backward_k(const double* x, const double* gy, double* gk,
                       const Conv2dDims& d) {
  for (int64_t co = 0; co < d.c_out; ++co) {
    for (int64_t ci = 0; ci < d.c_in; ++ci) {
      for (int64_t r = 0; r < d.kh; ++r) {
        for (int64_t s = 0; s < d.kw; ++s) {
          double acc = 0.0;
          for (int64_t i = 0; i < d.n; ++i) {
            for (int64_t oh = 0; oh < d.oh; ++oh) {
              const int64_t ih = oh * d.stride - d.pad + r;
              if (ih < 0 || ih >= d.h) continue;
              for (int64_t ow = 0; ow < d.ow; ++ow) {
                const int64_t iw = ow * d.stride - d.pad + s;
                if (iw < 0 || iw >= d.w) continue;
                acc += x[((i * d.c_in + ci) * d.h + ih) * d.w + iw] *
                       gy[((i * d.c_out + co) * d.oh + oh) * d.ow + ow];
              }
            }
          }
          gk[((co * d.c_in + ci) * d.kh + r) * d.kw + s] += acc;
        }
      }
    }
  }
}

void conv2d_backward_b(const double* gy, double* gb, const Conv2dDims& d) {
  for (int64_t co = 0; co < d.c_out; ++co) {
    double acc = 0.0;
    for (int64_t i = 0; i < d.n; ++i) {
      for (int64_t p = 0; p < d.oh * d.ow; ++p) {
        acc += gy[(i * d.c_out + co) * d.oh * d.ow + p];
      }
    }
    gb[co] += acc;
  }
}

using detail::BilinearTaps;
using detail::taps_at;

void roi_pool_forward(const double* feat, int64_t c, int64_t fh, int64_t fw,
                      const double* rois, int64_t n, int64_t out, double* y) {
  for (int64_t i = 0; i < n; ++i) {
    const double x1 = rois[i * 4 + 0], y1 = rois[i * 4 + 1];
    const double x2 = rois[i * 4 + 2], y2 = rois[i * 4 + 3];
    const double bw = (x2 - x1) / static_cast<double>(out);
    const double bh = (y2 - y1) / static_cast<double>(out);
    for (int64_t by = 0; by < out; ++by) {
      for (int64_t bx = 0; bx < out; ++bx) {
        const double cx = x1 + (static_cast<double>(bx) + 0.5) * bw;
        const double cy = y1 + (static_cast<double>(by) + 0.5) * bh;
        const BilinearTaps t = taps_at(cx, cy, fh, fw);
        for (int64_t ch = 0; ch < c; ++ch) {
          const double* f = feat + ch * fh * fw;
          y[((i * c + ch) * out + by) * out + bx] =
              t.w00 * f[t.r0 * fw + t.c0] + t.w01 * f[t.r0 * fw + t.c1] +
              t.w10 * f[t.r1 * fw + t.c0] + t.w11 * f[t.r1 * fw + t.c1];
        }
      }
    }
  }
}

void roi_pool_backward(const double* gy, const double* rois, int64_t n,
                       int64_t out, int64_t c, int64_t fh, int64_t fw,
                       double* gfeat) {
  for (int64_t i = 0; i < n; ++i) {
    const double x1 = rois[i * 4 + 0], y1 = rois[i * 4 + 1];
    const double x2 = rois[i * 4 + 2], y2 = rois[i * 4 + 3];
    const double bw = (x2 - x1) / static_cast<double>(out);
    const double bh = (y2 - y1) / static_cast<double>(out);
    for (int64_t by = 0; by < out; ++by) {
      for (int64_t bx = 0; bx < out; ++bx) {
        const double cx = x1 + (static_cast<double>(bx) + 0.5) * bw;
        const double cy = y1 + (static_cast<double>(by) + 0.5) * bh;
        const BilinearTaps t = taps_at(cx, cy, fh, fw);
        for (int64_t ch = 0; ch < c; ++ch) {
          const double g = gy[((i * c + ch) * out + by) * out + bx];
          double* gf = gfeat + ch * fh * fw;
          gf[t.r0 * fw + t.c0] += t.w00 * g;
          gf[t.r0 * fw + t.c1] += t.w01 * g;
          gf[t.r1 * fw + t.c0] += t.w10 * g;
          gf[t.r1 * fw + t.c1] += t.w11 * g;
        }
      }
    }
  }
}

void relu_forward(const double* x, double* y, int64_t n) {
  for (int64_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward(const double* x, const double* gy, double* gx, int64_t n) {
  for (int64_t i = 0; i < n; ++i) {
    if (x[i] > 0.0) gx[i] += gy[i];
  }
}

}  // namespace fscascade::kernels::serial
