#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "voxcade/error.hpp"
#include "voxcade/parallel.hpp"
#include "voxcade/tensor.hpp"

// Dense kernels for the network engine. All of them parallelize only over
// disjoint output slabs, so results are bit-identical for any worker count.
// Convolutions use the cross-correlation convention (no kernel flip).

namespace voxcade::nn {

enum class Mode { train, eval };

// ---- linear ---------------------------------------------------------------

template <class T>
Tensor<T> linear_fwd(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  require(x.rank() == 2, errc::shape_mismatch, "linear expects [N,D] input, got " + shape_str(x.shape));
  int64_t n = x.dim(0), din = x.dim(1), dout = w.dim(0);
  require(w.rank() == 2 && w.dim(1) == din, errc::shape_mismatch,
          "weight " + shape_str(w.shape) + " does not match input " + shape_str(x.shape));
  require(b.numel() == dout, errc::shape_mismatch, "bias size mismatch");

  Tensor<T> y({n, dout});
  const T* xd = x.data.data();
  const T* wd = w.data.data();
  const T* bd = b.data.data();
  T* yd = y.data.data();
  parallel_for(n, [&](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) {
      const T* xr = xd + i * din;
      T* yr = yd + i * dout;
      for (int64_t o = 0; o < dout; ++o) {
        const T* wr = wd + o * din;
        T acc = bd[o];
        for (int64_t k = 0; k < din; ++k) acc += xr[k] * wr[k];
        yr[o] = acc;
      }
    }
  }, 4);
  return y;
}

template <class T>
Tensor<T> linear_bwd(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& gy,
                     std::vector<T>* gw, std::vector<T>* gb) {
  int64_t n = x.dim(0), din = x.dim(1), dout = w.dim(0);
  Tensor<T> gx({n, din});
  const T* xd = x.data.data();
  const T* wd = w.data.data();
  const T* gyd = gy.data.data();
  T* gxd = gx.data.data();

  parallel_for(n, [&](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) {
      T* gxr = gxd + i * din;
      const T* gyr = gyd + i * dout;
      for (int64_t o = 0; o < dout; ++o) {
        T g = gyr[o];
        const T* wr = wd + o * din;
        for (int64_t k = 0; k < din; ++k) gxr[k] += g * wr[k];
      }
    }
  }, 4);

  if (gw) {
    T* gwd = gw->data();
    parallel_for(dout, [&](int64_t lo, int64_t hi) {
      for (int64_t o = lo; o < hi; ++o) {
        T* gwr = gwd + o * din;
        for (int64_t i = 0; i < n; ++i) {
          T g = gyd[i * dout + o];
          const T* xr = xd + i * din;
          for (int64_t k = 0; k < din; ++k) gwr[k] += g * xr[k];
        }
      }
    }, 4);
  }
  if (gb) {
    T* gbd = gb->data();
    for (int64_t i = 0; i < n; ++i)
      for (int64_t o = 0; o < dout; ++o) gbd[o] += gyd[i * dout + o];
  }
  return gx;
}

// ---- conv3d (stride 1, no padding) -----------------------------------------

template <class T>
Tensor<T> conv3d_fwd(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  require(x.rank() == 5, errc::shape_mismatch, "conv3d expects [N,C,D,H,W], got " + shape_str(x.shape));
  int64_t n = x.dim(0), ci = x.dim(1), D = x.dim(2), H = x.dim(3), W = x.dim(4);
  int64_t co = w.dim(0), k = w.dim(2);
  require(w.rank() == 5 && w.dim(1) == ci && w.dim(3) == k && w.dim(4) == k, errc::shape_mismatch,
          "conv3d weight shape " + shape_str(w.shape));
  require(D >= k && H >= k && W >= k, errc::shape_mismatch, "conv3d input smaller than kernel");
  int64_t Do = D - k + 1, Ho = H - k + 1, Wo = W - k + 1;

  Tensor<T> y({n, co, Do, Ho, Wo});
  const T* xd = x.data.data();
  const T* wd = w.data.data();
  const T* bd = b.data.data();
  T* yd = y.data.data();
  int64_t out_spatial = Do * Ho * Wo;

  parallel_for(n * co, [&](int64_t lo, int64_t hi) {
    for (int64_t slab = lo; slab < hi; ++slab) {
      int64_t i = slab / co, o = slab % co;
      T* ys = yd + slab * out_spatial;
      std::fill(ys, ys + out_spatial, bd[o]);
      for (int64_t c = 0; c < ci; ++c) {
        const T* xs = xd + (i * ci + c) * D * H * W;
        const T* ws = wd + (o * ci + c) * k * k * k;
        for (int64_t kz = 0; kz < k; ++kz)
          for (int64_t ky = 0; ky < k; ++ky)
            for (int64_t kx = 0; kx < k; ++kx) {
              T wv = ws[(kz * k + ky) * k + kx];
              for (int64_t zo = 0; zo < Do; ++zo)
                for (int64_t yo = 0; yo < Ho; ++yo) {
                  const T* xr = xs + ((zo + kz) * H + (yo + ky)) * W + kx;
                  T* yr = ys + (zo * Ho + yo) * Wo;
                  for (int64_t xo = 0; xo < Wo; ++xo) yr[xo] += wv * xr[xo];
                }
            }
      }
    }
  });
  return y;
}

template <class T>
Tensor<T> conv3d_bwd(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& gy,
                     std::vector<T>* gw, std::vector<T>* gb) {
  int64_t n = x.dim(0), ci = x.dim(1), D = x.dim(2), H = x.dim(3), W = x.dim(4);
  int64_t co = w.dim(0), k = w.dim(2);
  int64_t Do = gy.dim(2), Ho = gy.dim(3), Wo = gy.dim(4);

  Tensor<T> gx({n, ci, D, H, W});
  const T* xd = x.data.data();
  const T* wd = w.data.data();
  const T* gyd = gy.data.data();
  T* gxd = gx.data.data();
  int64_t out_spatial = Do * Ho * Wo;

  parallel_for(n, [&](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i) {
      for (int64_t o = 0; o < co; ++o) {
        const T* gys = gyd + (i * co + o) * out_spatial;
        for (int64_t c = 0; c < ci; ++c) {
          T* gxs = gxd + (i * ci + c) * D * H * W;
          const T* ws = wd + (o * ci + c) * k * k * k;
          for (int64_t kz = 0; kz < k; ++kz)
            for (int64_t ky = 0; ky < k; ++ky)
              for (int64_t kx = 0; kx < k; ++kx) {
                T wv = ws[(kz * k + ky) * k + kx];
                for (int64_t zo = 0; zo < Do; ++zo)
                  for (int64_t yo = 0; yo < Ho; ++yo) {
                    const T* gyr = gys + (zo * Ho + yo) * Wo;
                    T* gxr = gxs + ((zo + kz) * H + (yo + ky)) * W + kx;
                    for (int64_t xo = 0; xo < Wo; ++xo) gxr[xo] += wv * gyr[xo];
                  }
              }
        }
      }
    }
  });

  if (gw) {
    T* gwd = gw->data();
    parallel_for(co, [&](int64_t lo, int64_t hi) {
      for (int64_t o = lo; o < hi; ++o) {
        for (int64_t c = 0; c < ci; ++c) {
          T* gws = gwd + (o * ci + c) * k * k * k;
          for (int64_t i = 0; i < n; ++i) {
            const T* gys = gyd + (i * co + o) * out_spatial;
            const T* xs = xd + (i * ci + c) * D * H * W;
            for (int64_t kz = 0; kz < k; ++kz)
              for (int64_t ky = 0; ky < k; ++ky)
                for (int64_t kx = 0; kx < k; ++kx) {
                  T acc = 0;
                  for (int64_t zo = 0; zo < Do; ++zo)
                    for (int64_t yo = 0; yo < Ho; ++yo) {
                      const T* gyr = gys + (zo * Ho + yo) * Wo;
                      const T* xr = xs + ((zo + kz) * H + (yo + ky)) * W + kx;
                      for (int64_t xo = 0; xo < Wo; ++xo) acc += gyr[xo] * xr[xo];
                    }
                  gws[(kz * k + ky) * k + kx] += acc;
                }
          }
        }
      }
    });
  }
  if (gb) {
    T* gbd = gb->data();
    for (int64_t i = 0; i < n; ++i)
      for (int64_t o = 0; o < co; ++o) {
        const T* gys = gyd + (i * co + o) * out_spatial;
        T acc = 0;
        for (int64_t s = 0; s < out_spatial; ++s) acc += gys[s];
        gbd[o] += acc;
      }
  }
  return gx;
}

// ---- conv2d ----------------------------------------------------------------

template <class T>
Tensor<T> conv2d_fwd(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  require(x.rank() == 4, errc::shape_mismatch, "conv2d expects [N,C,H,W], got " + shape_str(x.shape));
  int64_t n = x.dim(0), ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  int64_t co = w.dim(0), k = w.dim(2);
  require(w.rank() == 4 && w.dim(1) == ci && w.dim(3) == k, errc::shape_mismatch,
          "conv2d weight shape " + shape_str(w.shape));
  require(H >= k && W >= k, errc::shape_mismatch, "conv2d input smaller than kernel");
  int64_t Ho = H - k + 1, Wo = W - k + 1;

  Tensor<T> y({n, co, Ho, Wo});
  const T* xd = x.data.data();
  const T* wd = w.data.data();
  const T* bd = b.data.data();
  T* yd = y.data.data();
  int64_t out_spatial = Ho * Wo;

  parallel_for(n * co, [&](int64_t lo, int64_t hi) {
    for (int64_t slab = lo; slab < hi; ++slab) {
      int64_t i = slab / co, o = slab % co;
      T* ys = yd + slab * out_spatial;
      std::fill(ys, ys + out_spatial, bd[o]);
      for (int64_t c = 0; c < ci; ++c) {
        const T* xs = xd + (i * ci + c) * H * W;
        const T* ws = wd + (o * ci + c) * k * k;
        for (int64_t ky = 0; ky < k; ++ky)
          for (int64_t kx = 0; kx < k; ++kx) {
            T wv = ws[ky * k + kx];
            for (int64_t yo = 0; yo < Ho; ++yo) {
              const T* xr = xs + (yo + ky) * W + kx;
              T* yr = ys + yo * Wo;
              for (int64_t xo = 0; xo < Wo; ++xo) yr[xo] += wv * xr[xo];
            }
          }
      }
    }
  });
  return y;
}

template <class T>
Tensor<T> conv2d_bwd(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& gy,
                     std::vector<T>* gw, std::vector<T>* gb) {
  int64_t n = x.dim(0), ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  int64_t co = w.dim(0), k = w.dim(2);
  int64_t Ho = gy.dim(2), Wo = gy.dim(3);

  Tensor<T> gx({n, ci, H, W});
  const T* xd = x.data.data();
  const T* wd = w.data.data();
  const T* gyd = gy.data.data();
  T* gxd = gx.data.data();
  int64_t out_spatial = Ho * Wo;

  parallel_for(n, [&](int64_t lo, int64_t hi) {
    for (int64_t i = lo; i < hi; ++i)
      for (int64_t o = 0; o < co; ++o) {
        const T* gys = gyd + (i * co + o) * out_spatial;
        for (int64_t c = 0; c < ci; ++c) {
          T* gxs = gxd + (i * ci + c) * H * W;
          const T* ws = wd + (o * ci + c) * k * k;
          for (int64_t ky = 0; ky < k; ++ky)
            for (int64_t kx = 0; kx < k; ++kx) {
              T wv = ws[ky * k + kx];
              for (int64_t yo = 0; yo < Ho; ++yo) {
                const T* gyr = gys + yo * Wo;
                T* gxr = gxs + (yo + ky) * W + kx;
                for (int64_t xo = 0; xo < Wo; ++xo) gxr[xo] += wv * gyr[xo];
              }
            }
        }
      }
  });

  if (gw) {
    T* gwd = gw->data();
    parallel_for(co, [&](int64_t lo, int64_t hi) {
      for (int64_t o = lo; o < hi; ++o)
        for (int64_t c = 0; c < ci; ++c) {
          T* gws = gwd + (o * ci + c) * k * k;
          for (int64_t i = 0; i < n; ++i) {
            const T* gys = gyd + (i * co + o) * out_spatial;
            const T* xs = xd + (i * ci + c) * H * W;
            for (int64_t ky = 0; ky < k; ++ky)
              for (int64_t kx = 0; kx < k; ++kx) {
                T acc = 0;
                for (int64_t yo = 0; yo < Ho; ++yo) {
                  const T* gyr = gys + yo * Wo;
                  const T* xr = xs + (yo + ky) * W + kx;
                  for (int64_t xo = 0; xo < Wo; ++xo) acc += gyr[xo] * xr[xo];
                }
                gws[ky * k + kx] += acc;
              }
          }
        }
    });
  }
  if (gb) {
    T* gbd = gb->data();
    for (int64_t i = 0; i < n; ++i)
      for (int64_t o = 0; o < co; ++o) {
        const T* gys = gyd + (i * co + o) * out_spatial;
        T acc = 0;
        for (int64_t s = 0; s < out_spatial; ++s) acc += gys[s];
        gbd[o] += acc;
      }
  }
  return gx;
}

// ---- batch norm ------------------------------------------------------------
// Normalizes per channel (dim 1) over batch + spatial dims. Biased variance.

template <class T>
struct BnCache {
  Tensor<T> xhat;
  std::vector<T> invstd;
  bool eval_path = false;
};

template <class T>
Tensor<T> batchnorm_fwd_train(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                              Tensor<T>& running_mean, Tensor<T>& running_var, T momentum, T eps,
                              BnCache<T>& cache) {
  require(x.rank() >= 2, errc::shape_mismatch, "batchnorm expects [N,C,...]");
  require(x.dim(0) >= 2, errc::batch_too_small, "batchnorm train mode needs batch >= 2");
  int64_t n = x.dim(0), c = x.dim(1);
  int64_t spatial = x.numel() / (n * c);
  int64_t m = n * spatial;

  Tensor<T> y(x.shape);
  cache.xhat = Tensor<T>(x.shape);
  cache.invstd.assign(static_cast<size_t>(c), T{});
  cache.eval_path = false;

  const T* xd = x.data.data();
  T* yd = y.data.data();
  T* xh = cache.xhat.data.data();

  parallel_for(c, [&](int64_t lo, int64_t hi) {
    for (int64_t ch = lo; ch < hi; ++ch) {
      T mean = 0;
      for (int64_t i = 0; i < n; ++i) {
        const T* xs = xd + (i * c + ch) * spatial;
        for (int64_t s = 0; s < spatial; ++s) mean += xs[s];
      }
      mean /= static_cast<T>(m);
      T var = 0;
      for (int64_t i = 0; i < n; ++i) {
        const T* xs = xd + (i * c + ch) * spatial;
        for (int64_t s = 0; s < spatial; ++s) {
          T d = xs[s] - mean;
          var += d * d;
        }
      }
      var /= static_cast<T>(m);
      T invstd = T(1) / std::sqrt(var + eps);
      cache.invstd[static_cast<size_t>(ch)] = invstd;
      T g = gamma.data[static_cast<size_t>(ch)], b = beta.data[static_cast<size_t>(ch)];
      for (int64_t i = 0; i < n; ++i) {
        const T* xs = xd + (i * c + ch) * spatial;
        T* ys = yd + (i * c + ch) * spatial;
        T* xhs = xh + (i * c + ch) * spatial;
        for (int64_t s = 0; s < spatial; ++s) {
          T v = (xs[s] - mean) * invstd;
          xhs[s] = v;
          ys[s] = g * v + b;
        }
      }
      running_mean.data[static_cast<size_t>(ch)] =
          (T(1) - momentum) * running_mean.data[static_cast<size_t>(ch)] + momentum * mean;
      running_var.data[static_cast<size_t>(ch)] =
          (T(1) - momentum) * running_var.data[static_cast<size_t>(ch)] + momentum * var;
    }
  });
  return y;
}

template <class T>
Tensor<T> batchnorm_fwd_eval(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                             const Tensor<T>& running_mean, const Tensor<T>& running_var, T eps) {
  require(x.rank() >= 2, errc::shape_mismatch, "batchnorm expects [N,C,...]");
  int64_t n = x.dim(0), c = x.dim(1);
  int64_t spatial = x.numel() / (n * c);
  Tensor<T> y(x.shape);
  const T* xd = x.data.data();
  T* yd = y.data.data();
  for (int64_t ch = 0; ch < c; ++ch) {
    T invstd = T(1) / std::sqrt(running_var.data[static_cast<size_t>(ch)] + eps);
    T mean = running_mean.data[static_cast<size_t>(ch)];
    T g = gamma.data[static_cast<size_t>(ch)], b = beta.data[static_cast<size_t>(ch)];
    for (int64_t i = 0; i < n; ++i) {
      const T* xs = xd + (i * c + ch) * spatial;
      T* ys = yd + (i * c + ch) * spatial;
      for (int64_t s = 0; s < spatial; ++s) ys[s] = g * (xs[s] - mean) * invstd + b;
    }
  }
  return y;
}

template <class T>
Tensor<T> batchnorm_bwd(const Tensor<T>& gy, const Tensor<T>& gamma, const BnCache<T>& cache,
                        std::vector<T>* ggamma, std::vector<T>* gbeta) {
  int64_t n = gy.dim(0), c = gy.dim(1);
  int64_t spatial = gy.numel() / (n * c);
  int64_t m = n * spatial;
  Tensor<T> gx(gy.shape);
  const T* gyd = gy.data.data();
  const T* xh = cache.xhat.data.data();
  T* gxd = gx.data.data();

  parallel_for(c, [&](int64_t lo, int64_t hi) {
    for (int64_t ch = lo; ch < hi; ++ch) {
      T sum_gy = 0, sum_gy_xhat = 0;
      for (int64_t i = 0; i < n; ++i) {
        const T* gys = gyd + (i * c + ch) * spatial;
        const T* xhs = xh + (i * c + ch) * spatial;
        for (int64_t s = 0; s < spatial; ++s) {
          sum_gy += gys[s];
          sum_gy_xhat += gys[s] * xhs[s];
        }
      }
      if (ggamma) (*ggamma)[static_cast<size_t>(ch)] += sum_gy_xhat;
      if (gbeta) (*gbeta)[static_cast<size_t>(ch)] += sum_gy;
      T g = gamma.data[static_cast<size_t>(ch)];
      T invstd = cache.invstd[static_cast<size_t>(ch)];
      if (cache.eval_path) {
        // running statistics are constants: plain affine backward
        T scale = g * invstd;
        for (int64_t i = 0; i < n; ++i) {
          const T* gys = gyd + (i * c + ch) * spatial;
          T* gxs = gxd + (i * c + ch) * spatial;
          for (int64_t s = 0; s < spatial; ++s) gxs[s] = scale * gys[s];
        }
      } else {
        T scale = g * invstd / static_cast<T>(m);
        for (int64_t i = 0; i < n; ++i) {
          const T* gys = gyd + (i * c + ch) * spatial;
          const T* xhs = xh + (i * c + ch) * spatial;
          T* gxs = gxd + (i * c + ch) * spatial;
          for (int64_t s = 0; s < spatial; ++s)
            gxs[s] = scale * (static_cast<T>(m) * gys[s] - sum_gy - xhs[s] * sum_gy_xhat);
        }
      }
    }
  });
  return gx;
}

// ---- relu -------------------------------------------------------------------

template <class T>
Tensor<T> relu_fwd(const Tensor<T>& x) {
  Tensor<T> y(x.shape);
  for (size_t i = 0; i < x.data.size(); ++i) y.data[i] = x.data[i] > T(0) ? x.data[i] : T(0);
  return y;
}

// subgradient at exactly 0 is defined as 0
template <class T>
Tensor<T> relu_bwd(const Tensor<T>& x, const Tensor<T>& gy) {
  Tensor<T> gx(x.shape);
  for (size_t i = 0; i < x.data.size(); ++i) gx.data[i] = x.data[i] > T(0) ? gy.data[i] : T(0);
  return gx;
}

// ---- max pooling ------------------------------------------------------------
// Window max with floor((dim - s) / t) + 1 outputs per axis; argmax stores the
// flat spatial index inside each (n, c) volume, ties resolved to the lowest
// flat index.

template <class T>
Tensor<T> maxpool3d_fwd(const Tensor<T>& x, int s, int t, std::vector<int32_t>& argmax) {
  require(x.rank() == 5, errc::shape_mismatch, "maxpool3d expects [N,C,D,H,W]");
  int64_t n = x.dim(0), c = x.dim(1), D = x.dim(2), H = x.dim(3), W = x.dim(4);
  require(D >= s && H >= s && W >= s, errc::shape_mismatch, "pool window larger than input");
  int64_t Do = (D - s) / t + 1, Ho = (H - s) / t + 1, Wo = (W - s) / t + 1;
  Tensor<T> y({n, c, Do, Ho, Wo});
  argmax.assign(static_cast<size_t>(y.numel()), 0);
  const T* xd = x.data.data();
  T* yd = y.data.data();
  int32_t* am = argmax.data();
  int64_t in_spatial = D * H * W, out_spatial = Do * Ho * Wo;

  parallel_for(n * c, [&](int64_t lo, int64_t hi) {
    for (int64_t slab = lo; slab < hi; ++slab) {
      const T* xs = xd + slab * in_spatial;
      T* ys = yd + slab * out_spatial;
      int32_t* ams = am + slab * out_spatial;
      int64_t o = 0;
      for (int64_t zo = 0; zo < Do; ++zo)
        for (int64_t yo = 0; yo < Ho; ++yo)
          for (int64_t xo = 0; xo < Wo; ++xo, ++o) {
            T best{};
            int32_t best_idx = -1;
            for (int64_t kz = 0; kz < s; ++kz)
              for (int64_t ky = 0; ky < s; ++ky)
                for (int64_t kx = 0; kx < s; ++kx) {
                  int64_t idx = ((zo * t + kz) * H + (yo * t + ky)) * W + (xo * t + kx);
                  T v = xs[idx];
                  if (best_idx < 0 || v > best) {
                    best = v;
                    best_idx = static_cast<int32_t>(idx);
                  }
                }
            ys[o] = best;
            ams[o] = best_idx;
          }
    }
  });
  return y;
}

template <class T>
Tensor<T> maxpool3d_bwd(const std::vector<int64_t>& in_shape, const Tensor<T>& gy,
                        const std::vector<int32_t>& argmax) {
  Tensor<T> gx(in_shape);
  int64_t n = in_shape[0], c = in_shape[1];
  int64_t in_spatial = gx.numel() / (n * c);
  int64_t out_spatial = gy.numel() / (n * c);
  const T* gyd = gy.data.data();
  T* gxd = gx.data.data();
  parallel_for(n * c, [&](int64_t lo, int64_t hi) {
    for (int64_t slab = lo; slab < hi; ++slab) {
      const T* gys = gyd + slab * out_spatial;
      const int32_t* ams = argmax.data() + slab * out_spatial;
      T* gxs = gxd + slab * in_spatial;
      for (int64_t o = 0; o < out_spatial; ++o) gxs[ams[o]] += gys[o];
    }
  });
  return gx;
}

template <class T>
Tensor<T> maxpool2d_fwd(const Tensor<T>& x, int s, int t, std::vector<int32_t>& argmax) {
  require(x.rank() == 4, errc::shape_mismatch, "maxpool2d expects [N,C,H,W]");
  int64_t n = x.dim(0), c = x.dim(1), H = x.dim(2), W = x.dim(3);
  require(H >= s && W >= s, errc::shape_mismatch, "pool window larger than input");
  int64_t Ho = (H - s) / t + 1, Wo = (W - s) / t + 1;
  Tensor<T> y({n, c, Ho, Wo});
  argmax.assign(static_cast<size_t>(y.numel()), 0);
  const T* xd = x.data.data();
  T* yd = y.data.data();
  int32_t* am = argmax.data();
  int64_t in_spatial = H * W, out_spatial = Ho * Wo;

  parallel_for(n * c, [&](int64_t lo, int64_t hi) {
    for (int64_t slab = lo; slab < hi; ++slab) {
      const T* xs = xd + slab * in_spatial;
      T* ys = yd + slab * out_spatial;
      int32_t* ams = am + slab * out_spatial;
      int64_t o = 0;
      for (int64_t yo = 0; yo < Ho; ++yo)
        for (int64_t xo = 0; xo < Wo; ++xo, ++o) {
          T best{};
          int32_t best_idx = -1;
          for (int64_t ky = 0; ky < s; ++ky)
            for (int64_t kx = 0; kx < s; ++kx) {
              int64_t idx = (yo * t + ky) * W + (xo * t + kx);
              T v = xs[idx];
              if (best_idx < 0 || v > best) {
                best = v;
                best_idx = static_cast<int32_t>(idx);
              }
            }
          ys[o] = best;
          ams[o] = best_idx;
        }
    }
  });
  return y;
}

// maxpool2d reuses maxpool3d_bwd (same scatter on flat indices)

// ---- softmax cross entropy ----------------------------------------------------

template <class T>
struct SoftmaxXent {
  T loss{};            // mean over the batch
  Tensor<T> probs;     // [N, C]
  Tensor<T> glogits;   // (p - onehot) / N
};

template <class T>
SoftmaxXent<T> softmax_cross_entropy(const Tensor<T>& logits, const std::vector<int>& labels) {
  require(logits.rank() == 2, errc::shape_mismatch, "softmax expects [N,C] logits");
  int64_t n = logits.dim(0), c = logits.dim(1);
  require(static_cast<int64_t>(labels.size()) == n, errc::shape_mismatch, "label count mismatch");

  SoftmaxXent<T> out;
  out.probs = Tensor<T>({n, c});
  out.glogits = Tensor<T>({n, c});
  const T* ld = logits.data.data();
  T* pd = out.probs.data.data();
  T* gd = out.glogits.data.data();
  T loss = 0;
  for (int64_t i = 0; i < n; ++i) {
    const T* lr = ld + i * c;
    T* pr = pd + i * c;
    T mx = lr[0];
    for (int64_t j = 1; j < c; ++j) mx = std::max(mx, lr[j]);
    T sum = 0;
    for (int64_t j = 0; j < c; ++j) {
      T e = std::exp(lr[j] - mx);
      pr[j] = e;
      sum += e;
    }
    T inv = T(1) / sum;
    for (int64_t j = 0; j < c; ++j) pr[j] *= inv;
    int lbl = labels[static_cast<size_t>(i)];
    require(lbl >= 0 && lbl < c, errc::shape_mismatch, "label out of range");
    // log(p) computed from the stabilized pieces to avoid log(0)
    loss -= (lr[lbl] - mx) - std::log(sum);
    T* gr = gd + i * c;
    for (int64_t j = 0; j < c; ++j) gr[j] = pr[j] / static_cast<T>(n);
    gr[lbl] -= T(1) / static_cast<T>(n);
  }
  out.loss = loss / static_cast<T>(n);
  return out;
}

}  // namespace voxcade::nn
