#include "fscascade/kernels.hpp"

#include <vector>

#include "bilinear_taps.hpp"

// OpenMP kernels. Threads own disjoint output elements and every element
// accumulates its terms in the same order as the serial set, so results are
// bit-identical to fscascade::kernels::serial at any thread count.

namespace fscascade::kernels {

void fc_forward(const double* x, const double* w, const double* b, double* y,
                int64_t n, int64_t d_in, int64_t d_out) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) {
    double* yi = y + i * d_out;
    const double* xi = x + i * d_in;
    for (int64_t j = 0; j < d_out; ++j) yi[j] = b[j];
    // k-outer / j-inner walks w contiguously; each yi[j] still sees its
    // terms in ascending-k order.
    for (int64_t k = 0; k < d_in; ++k) {
      const double xk = xi[k];
      const double* wk = w + k * d_out;
      for (int64_t j = 0; j < d_out; ++j) yi[j] += xk * wk[j];
    }
  }
}

void fc_backward_x(const double* gy, const double* w, double* gx,
                   int64_t n, int64_t d_in, int64_t d_out) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) {
    const double* gyi = gy + i * d_out;
    double* gxi = gx + i * d_in;
    for (int64_t k = 0; k < d_in; ++k) {
      const double* wk = w + k * d_out;
      double acc = 0.0;
      for (int64_t j = 0; j < d_out; ++j) acc += gyi[j] * wk[j];
      gxi[k] += acc;
    }
  }
}

void fc_backward_w(const double* x, const double* gy, double* gw,
                   int64_t n, int64_t d_in, int64_t d_out) {
#pragma omp parallel for schedule(static)
  for (int64_t k = 0; k < d_in; ++k) {
    double* gwk = gw + k * d_out;
    std::vector<double> acc(static_cast<size_t>(d_out), 0.0);
    for (int64_t i = 0; i < n; ++i) {
      const double xk = x[i * d_in + k];
      const double* gyi = gy + i * d_out;
      for (int64_t j = 0; j < d_out; ++j) acc[static_cast<size_t>(j)] += xk * gyi[j];
    }
    for (int64_t j = 0; j < d_out; ++j) gwk[j] += acc[static_cast<size_t>(j)];
  }
}

void fc_backward_b(const double* gy, double* gb, int64_t n, int64_t d_out) {
#pragma omp parallel for schedule(static)
  for (int64_t j = 0; j < d_out; ++j) {
    double acc = 0.0;
    for (int64_t i = 0; i < n; ++i) acc += gy[i * d_out + j];
    gb[j] += acc;
  }
}

void conv2d_forward(const double* x, const double* k, const double* b,
                    double* y, const Conv2dDims& d) {
#pragma omp parallel for collapse(2) schedule(static)
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

void conv2d_backward_x(const double* gy, const double* k, double* gx,
                       const Conv2dDims& d) {
  // Tap tables hoist the stride/bounds checks out of the hot loop: for each
  // input row (column) the kernel rows r (columns s) that actually hit an
  // output cell, with the matching output index. The surviving terms keep
  // the serial reference's (co, r, s) accumulation order, so skipping the
  // dead iterations leaves the floating-point result bit-identical.
  std::vector<int64_t> row_r, row_oh, col_s, col_ow;
  std::vector<int64_t> row_start(static_cast<size_t>(d.h) + 1, 0);
  std::vector<int64_t> col_start(static_cast<size_t>(d.w) + 1, 0);
  for (int64_t ih = 0; ih < d.h; ++ih) {
    row_start[static_cast<size_t>(ih)] = static_cast<int64_t>(row_r.size());
    for (int64_t r = 0; r < d.kh; ++r) {
      const int64_t th = ih + d.pad - r;
      if (th < 0 || th % d.stride != 0) continue;
      const int64_t oh = th / d.stride;
      if (oh >= d.oh) continue;
      row_r.push_back(r);
      row_oh.push_back(oh);
    }
  }
  row_start[static_cast<size_t>(d.h)] = static_cast<int64_t>(row_r.size());
  for (int64_t iw = 0; iw < d.w; ++iw) {
    col_start[static_cast<size_t>(iw)] = static_cast<int64_t>(col_s.size());
    for (int64_t s = 0; s < d.kw; ++s) {
      const int64_t tw = iw + d.pad - s;
      if (tw < 0 || tw % d.stride != 0) continue;
      const int64_t ow = tw / d.stride;
      if (ow >= d.ow) continue;
      col_s.push_back(s);
      col_ow.push_back(ow);
    }
  }
  col_start[static_cast<size_t>(d.w)] = static_cast<int64_t>(col_s.size());

#pragma omp parallel for collapse(2) schedule(static)
  for (int64_t i = 0; i < d.n; ++i) {
    for (int64_t ci = 0; ci < d.c_in; ++ci) {
      for (int64_t ih = 0; ih < d.h; ++ih) {
        const int64_t a0 = row_start[static_cast<size_t>(ih)];
        const int64_t a1 = row_start[static_cast<size_t>(ih) + 1];
        for (int64_t iw = 0; iw < d.w; ++iw) {
          const int64_t b0 = col_start[static_cast<size_t>(iw)];
          const int64_t b1 = col_start[static_cast<size_t>(iw) + 1];
          double acc = 0.0;
          for (int64_t co = 0; co < d.c_out; ++co) {
            const double* gy_i = gy + (i * d.c_out + co) * d.oh * d.ow;
            const double* k_c = k + (co * d.c_in + ci) * d.kh * d.kw;
            for (int64_t a = a0; a < a1; ++a) {
              const double* gy_row =
                  gy_i + row_oh[static_cast<size_t>(a)] * d.ow;
              const double* k_row =
                  k_c + row_r[static_cast<size_t>(a)] * d.kw;
              for (int64_t b = b0; b < b1; ++b) {
                acc += gy_row[col_ow[static_cast<size_t>(b)]] *
                       k_row[col_s[static_cast<size_t>(b)]];
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
#pragma omp parallel for collapse(2) schedule(static)
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
#pragma omp parallel for schedule(static)
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

void roi_pool_forward(const double* feat, int64_t c, int64_t fh, int64_t fw,
                      const double* rois, int64_t n, int64_t out, double* y) {
  using detail::BilinearTaps;
  using detail::taps_at;
#pragma omp parallel for schedule(static)
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

// Different rois scatter into overlapping feature cells, so this one stays
// serial; it is a tiny fraction of a training step.
void roi_pool_backward(const double* gy, const double* rois, int64_t n,
                       int64_t out, int64_t c, int64_t fh, int64_t fw,
                       double* gfeat) {
  serial::roi_pool_backward(gy, rois, n, out, c, fh, fw, gfeat);
}

void relu_forward(const double* x, double* y, int64_t n) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward(const double* x, const double* gy, double* gx, int64_t n) {
#pragma omp parallel for schedule(static)
  for (int64_t i = 0; i < n; ++i) {
    if (x[i] > 0.0) gx[i] += gy[i];
  }
}

}  // namespace fscascade::kernels
