// Copyright 2026 The MAVL Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// Dense building blocks with hand-written backward passes. Activations are
// row-major matrices with one row per token (or pixel) and one column per
// channel; biases and layer-norm affine terms are 1×n matrices.

#pragma once

#include <cmath>
#include <vector>

#include "mavl/common.hpp"

namespace mavl::nn {

template <typename T>
using Mat = Matrix<T>;

template <typename T>
Mat<T> linear(const Mat<T>& x, const Mat<T>& w, const Mat<T>& b) {
  Mat<T> y = x * w;
  y.rowwise() += b.row(0);
  return y;
}

// Accumulates dw, db; returns dx.
template <typename T>
Mat<T> linear_backward(const Mat<T>& x, const Mat<T>& w, const Mat<T>& dy, Mat<T>& dw, Mat<T>& db) {
  dw.noalias() += x.transpose() * dy;
  db.row(0) += dy.colwise().sum();
  return dy * w.transpose();
}

template <typename T>
struct LayerNormCache {
  Mat<T> xhat;
  std::vector<T> rstd;
};

template <typename T>
Mat<T> layer_norm(const Mat<T>& x, const Mat<T>& g, const Mat<T>& b, LayerNormCache<T>& c,
                  T eps = T(1e-5)) {
  const auto n = x.cols();
  c.xhat.resize(x.rows(), n);
  c.rstd.assign(static_cast<size_t>(x.rows()), T(0));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const T mu = x.row(i).sum() / T(n);
    const T var = (x.row(i).array() - mu).square().sum() / T(n);
    const T r = T(1) / std::sqrt(var + eps);
    c.rstd[static_cast<size_t>(i)] = r;
    c.xhat.row(i) = (x.row(i).array() - mu) * r;
  }
  Mat<T> y = c.xhat.array().rowwise() * g.row(0).array();
  y.rowwise() += b.row(0);
  return y;
}

template <typename T>
Mat<T> layer_norm_backward(const Mat<T>& dy, const Mat<T>& g, const LayerNormCache<T>& c, Mat<T>& dg,
                           Mat<T>& db) {
  dg.row(0) += (dy.array() * c.xhat.array()).colwise().sum().matrix();
  db.row(0) += dy.colwise().sum();
  Mat<T> dxhat = dy.array().rowwise() * g.row(0).array();
  const T n = T(dy.cols());
  Mat<T> dx(dy.rows(), dy.cols());
  for (Eigen::Index i = 0; i < dy.rows(); ++i) {
    const T m1 = dxhat.row(i).sum() / n;
    const T m2 = dxhat.row(i).dot(c.xhat.row(i)) / n;
    dx.row(i) = (dxhat.row(i).array() - m1 - c.xhat.row(i).array() * m2) * c.rstd[static_cast<size_t>(i)];
  }
  return dx;
}

template <typename T>
void softmax_rows(Mat<T>& s) {
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const T mx = s.row(i).maxCoeff();
    s.row(i) = (s.row(i).array() - mx).exp();
    s.row(i) /= s.row(i).sum();
  }
}

// Row-wise L2 normalization of a single row vector.
template <typename T>
Mat<T> l2_normalize(const Mat<T>& x, T& norm) {
  norm = x.norm();
  return x / norm;
}

template <typename T>
Mat<T> l2_normalize_backward(const Mat<T>& y, T norm, const Mat<T>& dy) {
  const T proj = (y.array() * dy.array()).sum();
  return (dy - y * proj) / norm;
}

template <typename T>
struct AttentionCache {
  std::vector<Mat<T>> probs;  // one nq×nk matrix per head
};

// Scaled dot-product attention with `heads` column groups; q is nq×d, k and v
// are nk×d. Every row of every probs matrix sums to one.
template <typename T>
Mat<T> attention(const Mat<T>& q, const Mat<T>& k, const Mat<T>& v, int heads, AttentionCache<T>& c) {
  const auto d = q.cols();
  if (d % heads != 0) throw ShapeMismatch("model dim not divisible by head count");
  const auto dh = d / heads;
  const T scale = T(1) / std::sqrt(T(dh));
  Mat<T> out(q.rows(), d);
  c.probs.resize(static_cast<size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Mat<T> s = (q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose()) * scale;
    softmax_rows(s);
    out.middleCols(h * dh, dh).noalias() = s * v.middleCols(h * dh, dh);
    c.probs[static_cast<size_t>(h)] = std::move(s);
  }
  return out;
}

// Accumulates into dk, dv (shared memories are reused across queries);
// returns dq.
template <typename T>
Mat<T> attention_backward(const Mat<T>& q, const Mat<T>& k, const Mat<T>& v, int heads,
                          const AttentionCache<T>& c, const Mat<T>& dout, Mat<T>& dk, Mat<T>& dv) {
  const auto d = q.cols();
  const auto dh = d / heads;
  const T scale = T(1) / std::sqrt(T(dh));
  Mat<T> dq(q.rows(), d);
  for (int h = 0; h < heads; ++h) {
    const auto& p = c.probs[static_cast<size_t>(h)];
    const Mat<T> dO = dout.middleCols(h * dh, dh);
    dv.middleCols(h * dh, dh).noalias() += p.transpose() * dO;
    Mat<T> dp = dO * v.middleCols(h * dh, dh).transpose();
    for (Eigen::Index i = 0; i < dp.rows(); ++i) {
      const T dotp = dp.row(i).dot(p.row(i));
      dp.row(i) = p.row(i).array() * (dp.row(i).array() - dotp);
    }
    dq.middleCols(h * dh, dh).noalias() = dp * k.middleCols(h * dh, dh) * scale;
    dk.middleCols(h * dh, dh).noalias() += dp.transpose() * q.middleCols(h * dh, dh) * scale;
  }
  return dq;
}

// k×k convolution with even k, stride 2, padding k/2 - 1. Output cell i is
// centred on input coordinate 2i + 0.5, so a stack of blocks stays aligned
// with the pixel grid. Input is (H·W)×Cin with pixel index y·W + x; output is
// (H/2·W/2)×Cout. Column layout of the patch matrix is (ky·k + kx)·Cin + c,
// matching weight rows.
template <typename T>
Mat<T> im2col(const Mat<T>& x, int height, int width, int k) {
  const auto cin = x.cols();
  const int ho = height / 2, wo = width / 2, pad = k / 2 - 1;
  Mat<T> col = Mat<T>::Zero(static_cast<Eigen::Index>(ho) * wo, k * k * cin);
  for (int oy = 0; oy < ho; ++oy)
    for (int ox = 0; ox < wo; ++ox) {
      const Eigen::Index r = static_cast<Eigen::Index>(oy) * wo + ox;
      for (int ky = 0; ky < k; ++ky) {
        const int iy = 2 * oy - pad + ky;
        if (iy < 0 || iy >= height) continue;
        for (int kx = 0; kx < k; ++kx) {
          const int ix = 2 * ox - pad + kx;
          if (ix < 0 || ix >= width) continue;
          col.row(r).segment((ky * k + kx) * cin, cin) = x.row(static_cast<Eigen::Index>(iy) * width + ix);
        }
      }
    }
  return col;
}

template <typename T>
Mat<T> col2im(const Mat<T>& dcol, int height, int width, Eigen::Index cin, int k) {
  const int ho = height / 2, wo = width / 2, pad = k / 2 - 1;
  Mat<T> dx = Mat<T>::Zero(static_cast<Eigen::Index>(height) * width, cin);
  for (int oy = 0; oy < ho; ++oy)
    for (int ox = 0; ox < wo; ++ox) {
      const Eigen::Index r = static_cast<Eigen::Index>(oy) * wo + ox;
      for (int ky = 0; ky < k; ++ky) {
        const int iy = 2 * oy - pad + ky;
        if (iy < 0 || iy >= height) continue;
        for (int kx = 0; kx < k; ++kx) {
          const int ix = 2 * ox - pad + kx;
          if (ix < 0 || ix >= width) continue;
          dx.row(static_cast<Eigen::Index>(iy) * width + ix) += dcol.row(r).segment((ky * k + kx) * cin, cin);
        }
      }
    }
  return dx;
}

template <typename T>
void relu_inplace(Mat<T>& x) {
  x = x.cwiseMax(T(0));
}

// Zeroes dy where the forward output was clipped.
template <typename T>
void relu_backward_inplace(const Mat<T>& out, Mat<T>& dy) {
  dy = (out.array() > T(0)).select(dy, T(0));
}

}  // namespace mavl::nn
