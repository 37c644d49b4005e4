#pragma once

#include <cstdint>

// Raw numeric kernels behind the tensor ops. Two builds of the same
// contracts: fscascade::kernels is the OpenMP-parallel set used by the
// library, fscascade::kernels::serial is a plain-loop reference kept for
// testing and benchmarking.
//
// Determinism contract: every parallel loop distributes whole output
// elements across threads and keeps each element's inner accumulation
// order identical to the serial reference, so both sets produce
// bit-identical results for any thread count.
//
// Backward kernels accumulate (+=) into their gradient outputs.

namespace fscascade::kernels {

struct Conv2dDims {
  int64_t n, c_in, h, w;    // input
  int64_t c_out, kh, kw;    // kernel
  int64_t stride, pad;
  int64_t oh, ow;           // output spatial size
};

// y[n,j] = sum_k x[n,k] * w[k,j] + b[j]; x:[n,d_in], w:[d_in,d_out]
void fc_forward(const double* x, const double* w, const double* b, double* y,
                int64_t n, int64_t d_in, int64_t d_out);
void fc_backward_x(const double* gy, const double* w, double* gx,
                   int64_t n, int64_t d_in, int64_t d_out);
void fc_backward_w(const double* x, const double* gy, double* gw,
                   int64_t n, int64_t d_in, int64_t d_out);
void fc_backward_b(const double* gy, double* gb, int64_t n, int64_t d_out);

// cross-correlation; x:[n,c_in,h,w], k:[c_out,c_in,kh,kw], b:[c_out]
void conv2d_forward(const double* x, const double* k, const double* b,
                    double* y, const Conv2dDims& d);
void conv2d_backward_x(const double* gy, const double* k, double* gx,
                       const Conv2dDims& d);
void conv2d_backward_k(const double* x, const double* gy, double* gk,
                       const Conv2dDims& d);
void conv2d_backward_b(const double* gy, double* gb, const Conv2dDims& d);

// Bilinear sampling at bin centers of an out x out grid per RoI.
// rois: [n][4] as (x1,y1,x2,y2) already in feature-grid coordinates.
// Sample positions are clamped to the feature border.
void roi_pool_forward(const double* feat, int64_t c, int64_t fh, int64_t fw,
                      const double* rois, int64_t n, int64_t out, double* y);
// Serial by design: bins of different RoIs scatter into shared cells.
void roi_pool_backward(const double* gy, const double* rois, int64_t n,
                       int64_t out, int64_t c, int64_t fh, int64_t fw,
                       double* gfeat);

void relu_forward(const double* x, double* y, int64_t n);
void relu_backward(const double* x, const double* gy, double* gx, int64_t n);

namespace serial {

void fc_forward(const double* x, const double* w, const double* b, double* y,
                int64_t n, int64_t d_in, int64_t d_out);
void fc_backward_x(const double* gy, const double* w, double* gx,
                   int64_t n, int64_t d_in, int64_t d_out);
void fc_backward_w(const double* x, const double* gy, double* gw,
                   int64_t n, int64_t d_in, int64_t d_out);
void fc_backward_b(const double* gy, double* gb, int64_t n, int64_t d_out);

void conv2d_forward(const double* x, const double* k, const double* b,
                    double* y, const Conv2dDims& d);
void conv2d_backward_x(const double* gy, const double* k, double* gx,
                       const Conv2dDims& d);
void conv2d_backward_k(const double* x, const double* gy, double* gk,
                       const Conv2dDims& d);
void conv2d_backward_b(const double* gy, double* gb, const Conv2dDims& d);

void roi_pool_forward(const double* feat, int64_t c, int64_t fh, int64_t fw,
                      const double* rois, int64_t n, int64_t out, double* y);
void roi_pool_backward(const double* gy, const double* rois, int64_t n,
                       int64_t out, int64_t c, int64_t fh, int64_t fw,
                       double* gfeat);

void relu_forward(const double* x, double* y, int64_t n);
void relu_backward(const double* x, const double* gy, double* gx, int64_t n);

}  // namespace serial

}  // namespace fscascade::kernels
