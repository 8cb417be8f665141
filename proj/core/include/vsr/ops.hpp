// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <optional>

#include "vsr/rng.hpp"
#include "vsr/tape.hpp"

namespace vsr {

struct Conv1dGeom {
  std::int64_t stride = 1;
  std::int64_t padding = 0;
  std::int64_t dilation = 1;
  std::int64_t groups = 1;
};

inline std::int64_t conv_out_len(std::int64_t t, std::int64_t k,
                                 const Conv1dGeom& g) {
  return (t + 2 * g.padding - g.dilation * (k - 1) - 1) / g.stride + 1;
}

// ---------------------------------------------------------------------------
// conv1d: temporal cross-correlation over [B, C_in, T].
//
// y[b,co,t] = bias[co] + sum_{ci,kk} x[b,ci,t*s - p + kk*d] * w[co,ci,kk]
//
// The accumulator is seeded with the bias and products are added in
// (ci, kk) lexicographic order; the reference oracle in the test suite uses
// the same order, so results agree bit for bit in either precision.
// Implementation is im2col + a register-friendly GEMM whose inner loop runs
// over output columns (independent sums, safe to vectorize without
// reassociation).
// ---------------------------------------------------------------------------
template <typename S>
TensorPtr<S> conv1d(Tape<S>* tape, const TensorPtr<S>& x, const TensorPtr<S>& w,
                    const TensorPtr<S>& b, const Conv1dGeom& g = {}) {
  require(x->shape.size() == 3, "conv1d input must be [B,C,T], got " +
                                    shape_str(x->shape));
  require(w->shape.size() == 3, "conv1d weight must be [C_out,C_in/groups,k], got " +
                                    shape_str(w->shape));
  require(g.stride >= 1 && g.padding >= 0 && g.dilation >= 1 && g.groups >= 1,
          "conv1d geometry out of range");
  const std::int64_t B = x->shape[0], Cin = x->shape[1], T = x->shape[2];
  const std::int64_t Cout = w->shape[0], Cg_in = w->shape[1], K = w->shape[2];
  require(Cin % g.groups == 0 && Cout % g.groups == 0,
          "conv1d channels not divisible by groups");
  require(Cg_in == Cin / g.groups,
          "conv1d weight C_in axis " + std::to_string(Cg_in) +
              " does not match input channels " + std::to_string(Cin) +
              " / groups " + std::to_string(g.groups));
  if (b) {
    require(b->shape == Shape{Cout}, "conv1d bias must be [C_out]");
  }
  const std::int64_t Tout = conv_out_len(T, K, g);
  require(Tout >= 1, "conv1d output length would be empty for T=" +
                         std::to_string(T) + ", k=" + std::to_string(K));

  const std::int64_t Cg_out = Cout / g.groups;
  const std::int64_t R = Cg_in * K;   // patch rows per group
  const std::int64_t N = B * Tout;    // output columns

  auto y = make_tensor<S>({B, Cout, Tout});

  // Patch matrix for one group: P[r][n], zero where the tap falls in padding.
  std::vector<S> patches(static_cast<std::size_t>(R * N));
  // y is laid out [B][Cout][Tout]; the GEMM wants [co][n=(b,t)]. Use a
  // scratch output in GEMM layout, then transpose back once per group.
  std::vector<S> ybuf(static_cast<std::size_t>(Cg_out * N));

  const S* xd = x->data.data();
  const S* wd = w->data.data();
  S* yd = y->data.data();

  auto fill_patches = [&](std::int64_t group, const S* src, std::vector<S>& dst) {
    for (std::int64_t ci = 0; ci < Cg_in; ++ci) {
      const S* xrow = src + ((group * Cg_in + ci)) * T;
      for (std::int64_t kk = 0; kk < K; ++kk) {
        S* prow = dst.data() + (ci * K + kk) * N;
        for (std::int64_t bb = 0; bb < B; ++bb) {
          const S* xb = xrow + bb * Cin * T;
          S* pb = prow + bb * Tout;
          for (std::int64_t t = 0; t < Tout; ++t) {
            const std::int64_t ti = t * g.stride - g.padding + kk * g.dilation;
            pb[t] = (ti >= 0 && ti < T) ? xb[ti] : S(0);
          }
        }
      }
    }
  };

  for (std::int64_t grp = 0; grp < g.groups; ++grp) {
    fill_patches(grp, xd, patches);
    for (std::int64_t co = 0; co < Cg_out; ++co) {
      S* yrow = ybuf.data() + co * N;
      const S seed = b ? b->data[static_cast<std::size_t>(grp * Cg_out + co)] : S(0);
      std::fill(yrow, yrow + N, seed);
      const S* wrow = wd + (grp * Cg_out + co) * R;
      for (std::int64_t r = 0; r < R; ++r) {
        const S wv = wrow[r];
        const S* prow = patches.data() + r * N;
        for (std::int64_t n = 0; n < N; ++n) yrow[n] += wv * prow[n];
      }
    }
    for (std::int64_t co = 0; co < Cg_out; ++co) {
      for (std::int64_t bb = 0; bb < B; ++bb) {
        std::memcpy(yd + (bb * Cout + grp * Cg_out + co) * Tout,
                    ybuf.data() + co * N + bb * Tout,
                    static_cast<std::size_t>(Tout) * sizeof(S));
      }
    }
  }
  check_finite(*y, "conv1d");

  if (grad_needed(tape, {x.get(), w.get(), b.get()})) {
    y->requires_grad = true;
    TensorPtr<S> xc = x, wc = w, bc = b, yc = y;
    Conv1dGeom geom = g;
    tape->record([xc, wc, bc, yc, geom, B, Cin, T, Cout, Cg_in, Cg_out, K, Tout,
                  R, N]() {
      if (yc->grad.empty()) return;
      std::vector<S> patches(static_cast<std::size_t>(R * N));
      std::vector<S> dybuf(static_cast<std::size_t>(Cg_out * N));
      const S* xd = xc->data.data();
      const S* wd = wc->data.data();
      const S* gyd = yc->grad.data();
      for (std::int64_t grp = 0; grp < geom.groups; ++grp) {
        // Rebuild patches for this group (memory over recompute tradeoff:
        // patches are cheap to form and large to keep per tape entry).
        for (std::int64_t ci = 0; ci < Cg_in; ++ci) {
          for (std::int64_t kk = 0; kk < K; ++kk) {
            S* prow = patches.data() + (ci * K + kk) * N;
            for (std::int64_t bb = 0; bb < B; ++bb) {
              const S* xb = xd + (bb * Cin + grp * Cg_in + ci) * T;
              S* pb = prow + bb * Tout;
              for (std::int64_t t = 0; t < Tout; ++t) {
                const std::int64_t ti =
                    t * geom.stride - geom.padding + kk * geom.dilation;
                pb[t] = (ti >= 0 && ti < T) ? xb[ti] : S(0);
              }
            }
          }
        }
        for (std::int64_t co = 0; co < Cg_out; ++co) {
          for (std::int64_t bb = 0; bb < B; ++bb) {
            std::memcpy(dybuf.data() + co * N + bb * Tout,
                        gyd + (bb * Cout + grp * Cg_out + co) * Tout,
                        static_cast<std::size_t>(Tout) * sizeof(S));
          }
        }
        if (bc && bc->requires_grad) {
          bc->ensure_grad();
          for (std::int64_t co = 0; co < Cg_out; ++co) {
            S acc = 0;
            const S* dyrow = dybuf.data() + co * N;
            for (std::int64_t n = 0; n < N; ++n) acc += dyrow[n];
            bc->grad[static_cast<std::size_t>(grp * Cg_out + co)] += acc;
          }
        }
        if (wc->requires_grad) {
          wc->ensure_grad();
          for (std::int64_t co = 0; co < Cg_out; ++co) {
            const S* dyrow = dybuf.data() + co * N;
            S* gw = wc->grad.data() + (grp * Cg_out + co) * R;
            for (std::int64_t n = 0; n < N; ++n) {
              const S dv = dyrow[n];
              const S* pcol = patches.data() + n;
              for (std::int64_t r = 0; r < R; ++r) gw[r] += dv * pcol[r * N];
            }
          }
        }
        if (xc->requires_grad) {
          xc->ensure_grad();
          // dP = W^T * dY, scattered back through the im2col map.
          for (std::int64_t r = 0; r < R; ++r) {
            const std::int64_t ci = r / K, kk = r % K;
            for (std::int64_t bb = 0; bb < B; ++bb) {
              S* gx = xc->grad.data() + (bb * Cin + grp * Cg_in + ci) * T;
              for (std::int64_t t = 0; t < Tout; ++t) {
                const std::int64_t ti =
                    t * geom.stride - geom.padding + kk * geom.dilation;
                if (ti < 0 || ti >= T) continue;
                S acc = 0;
                for (std::int64_t co = 0; co < Cg_out; ++co) {
                  acc += wd[(grp * Cg_out + co) * R + r] *
                         dybuf[static_cast<std::size_t>(co * N + bb * Tout + t)];
                }
                gx[ti] += acc;
              }
            }
          }
        }
      }
    });
  }
  return y;
}

// linear: y = x W^T + b over [B, F_in]. B = 0 is a valid empty batch.
template <typename S>
TensorPtr<S> linear(Tape<S>* tape, const TensorPtr<S>& x, const TensorPtr<S>& w,
                    const TensorPtr<S>& b) {
  require(x->shape.size() == 2, "linear input must be [B,F_in], got " +
                                    shape_str(x->shape));
  require(w->shape.size() == 2, "linear weight must be [F_out,F_in]");
  const std::int64_t B = x->shape[0], Fin = x->shape[1], Fout = w->shape[0];
  require(w->shape[1] == Fin, "linear weight F_in " + std::to_string(w->shape[1]) +
                                  " does not match input " + std::to_string(Fin));
  if (b) require(b->shape == Shape{Fout}, "linear bias must be [F_out]");

  auto y = make_tensor<S>({B, Fout});
  for (std::int64_t bb = 0; bb < B; ++bb) {
    const S* xrow = x->data.data() + bb * Fin;
    S* yrow = y->data.data() + bb * Fout;
    for (std::int64_t o = 0; o < Fout; ++o) {
      S acc = b ? b->data[static_cast<std::size_t>(o)] : S(0);
      const S* wrow = w->data.data() + o * Fin;
      for (std::int64_t i = 0; i < Fin; ++i) acc += xrow[i] * wrow[i];
      yrow[o] = acc;
    }
  }
  check_finite(*y, "linear");

  if (grad_needed(tape, {x.get(), w.get(), b.get()})) {
    y->requires_grad = true;
    TensorPtr<S> xc = x, wc = w, bc = b, yc = y;
    tape->record([xc, wc, bc, yc, B, Fin, Fout]() {
      if (yc->grad.empty()) return;
      const S* gy = yc->grad.data();
      if (bc && bc->requires_grad) {
        bc->ensure_grad();
        for (std::int64_t bb = 0; bb < B; ++bb)
          for (std::int64_t o = 0; o < Fout; ++o)
            bc->grad[static_cast<std::size_t>(o)] += gy[bb * Fout + o];
      }
      if (wc->requires_grad) {
        wc->ensure_grad();
        for (std::int64_t bb = 0; bb < B; ++bb) {
          const S* xrow = xc->data.data() + bb * Fin;
          for (std::int64_t o = 0; o < Fout; ++o) {
            const S dv = gy[bb * Fout + o];
            S* gw = wc->grad.data() + o * Fin;
            for (std::int64_t i = 0; i < Fin; ++i) gw[i] += dv * xrow[i];
          }
        }
      }
      if (xc->requires_grad) {
        xc->ensure_grad();
        for (std::int64_t bb = 0; bb < B; ++bb) {
          S* gx = xc->grad.data() + bb * Fin;
          for (std::int64_t o = 0; o < Fout; ++o) {
            const S dv = gy[bb * Fout + o];
            const S* wrow = wc->data.data() + o * Fin;
            for (std::int64_t i = 0; i < Fin; ++i) gx[i] += dv * wrow[i];
          }
        }
      }
    });
  }
  return y;
}

template <typename S>
TensorPtr<S> relu(Tape<S>* tape, const TensorPtr<S>& x) {
  auto y = make_tensor<S>(x->shape);
  const std::int64_t n = x->numel();
  for (std::int64_t i = 0; i < n; ++i) y->at(i) = x->at(i) > S(0) ? x->at(i) : S(0);
  if (grad_needed(tape, {x.get()})) {
    y->requires_grad = true;
    TensorPtr<S> xc = x, yc = y;
    tape->record([xc, yc, n]() {
      if (yc->grad.empty()) return;
      xc->ensure_grad();
      for (std::int64_t i = 0; i < n; ++i)
        if (xc->at(i) > S(0)) xc->grad[static_cast<std::size_t>(i)] += yc->grad[static_cast<std::size_t>(i)];
    });
  }
  return y;
}

// prelu with one learnable slope per channel; channel axis is dim 1 of
// [B,C,...] inputs, or dim 0 when slope covers the whole leading axis of a
// rank-1/2 activation map [C] / [B,C].
template <typename S>
TensorPtr<S> prelu(Tape<S>* tape, const TensorPtr<S>& x, const TensorPtr<S>& slope) {
  require(slope->shape.size() == 1, "prelu slope must be rank 1");
  require(x->shape.size() >= 2, "prelu input must have a channel axis, got " +
                                    shape_str(x->shape));
  const std::int64_t C = slope->shape[0];
  require(x->shape[1] == C, "prelu slope channels " + std::to_string(C) +
                                " do not match input " + shape_str(x->shape));
  std::int64_t inner = 1;
  for (std::size_t i = 2; i < x->shape.size(); ++i) inner *= x->shape[i];
  const std::int64_t B = x->shape[0];

  auto y = make_tensor<S>(x->shape);
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t c = 0; c < C; ++c) {
      const S a = slope->at(c);
      const std::int64_t base = (b * C + c) * inner;
      for (std::int64_t i = 0; i < inner; ++i) {
        const S v = x->at(base + i);
        y->at(base + i) = v > S(0) ? v : a * v;
      }
    }
  check_finite(*y, "prelu");

  if (grad_needed(tape, {x.get(), slope.get()})) {
    y->requires_grad = true;
    TensorPtr<S> xc = x, sc = slope, yc = y;
    tape->record([xc, sc, yc, B, C, inner]() {
      if (yc->grad.empty()) return;
      if (sc->requires_grad) sc->ensure_grad();
      if (xc->requires_grad) xc->ensure_grad();
      for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t c = 0; c < C; ++c) {
          const S a = sc->at(c);
          const std::int64_t base = (b * C + c) * inner;
          for (std::int64_t i = 0; i < inner; ++i) {
            const S v = xc->at(base + i);
            const S g = yc->grad[static_cast<std::size_t>(base + i)];
            if (xc->requires_grad)
              xc->grad[static_cast<std::size_t>(base + i)] += v > S(0) ? g : a * g;
            if (sc->requires_grad && v <= S(0))
              sc->grad[static_cast<std::size_t>(c)] += g * v;
          }
        }
    });
  }
  return y;
}

// batchnorm1d over [B,C,T] (or [B,C]); statistics per channel across B and T.
// Training mode uses batch statistics, normalizes with the biased variance,
// and updates running stats in place with the unbiased variance:
//   running <- (1 - momentum) * running + momentum * batch
// Eval mode normalizes with the running statistics. Gradients flow through
// the batch statistics in training mode.
template <typename S>
TensorPtr<S> batchnorm1d(Tape<S>* tape, const TensorPtr<S>& x,
                         const TensorPtr<S>& gamma, const TensorPtr<S>& beta,
                         const TensorPtr<S>& running_mean,
                         const TensorPtr<S>& running_var, bool training,
                         double momentum = 0.1, double eps = 1e-5) {
  require(x->shape.size() == 2 || x->shape.size() == 3,
          "batchnorm1d input must be [B,C] or [B,C,T], got " + shape_str(x->shape));
  const std::int64_t B = x->shape[0], C = x->shape[1];
  const std::int64_t T = x->shape.size() == 3 ? x->shape[2] : 1;
  for (const auto& p : {gamma, beta, running_mean, running_var})
    require(p->shape == Shape{C}, "batchnorm1d parameter shape must be [C]");
  const std::int64_t N = B * T;
  if (training) require(N >= 2, "batchnorm1d training mode needs B*T >= 2");

  std::vector<S> mean(static_cast<std::size_t>(C)), inv_std(static_cast<std::size_t>(C));
  if (training) {
    for (std::int64_t c = 0; c < C; ++c) {
      S m = 0;
      for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t t = 0; t < T; ++t) m += x->at((b * C + c) * T + t);
      m /= static_cast<S>(N);
      S v = 0;
      for (std::int64_t b = 0; b < B; ++b)
        for (std::int64_t t = 0; t < T; ++t) {
          const S d = x->at((b * C + c) * T + t) - m;
          v += d * d;
        }
      const S var_biased = v / static_cast<S>(N);
      const S var_unbiased = v / static_cast<S>(N - 1);
      mean[static_cast<std::size_t>(c)] = m;
      inv_std[static_cast<std::size_t>(c)] =
          S(1) / std::sqrt(var_biased + static_cast<S>(eps));
      running_mean->at(c) = static_cast<S>((1.0 - momentum)) * running_mean->at(c) +
                            static_cast<S>(momentum) * m;
      running_var->at(c) = static_cast<S>((1.0 - momentum)) * running_var->at(c) +
                           static_cast<S>(momentum) * var_unbiased;
    }
  } else {
    for (std::int64_t c = 0; c < C; ++c) {
      mean[static_cast<std::size_t>(c)] = running_mean->at(c);
      inv_std[static_cast<std::size_t>(c)] =
          S(1) / std::sqrt(running_var->at(c) + static_cast<S>(eps));
    }
  }

  auto y = make_tensor<S>(x->shape);
  for (std::int64_t b = 0; b < B; ++b)
    for (std::int64_t c = 0; c < C; ++c) {
      const S m = mean[static_cast<std::size_t>(c)];
      const S is = inv_std[static_cast<std::size_t>(c)];
      const S g = gamma->at(c), be = beta->at(c);
      for (std::int64_t t = 0; t < T; ++t) {
        const std::int64_t i = (b * C + c) * T + t;
        y->at(i) = (x->at(i) - m) * is * g + be;
      }
    }
  check_finite(*y, "batchnorm1d");

  if (grad_needed(tape, {x.get(), gamma.get(), beta.get()})) {
    y->requires_grad = true;
    TensorPtr<S> xc = x, gc = gamma, bc = beta, yc = y;
    auto mean_c = mean;
    auto inv_std_c = inv_std;
    tape->record([xc, gc, bc, yc, mean_c, inv_std_c, B, C, T, N, training]() {
      if (yc->grad.empty()) return;
      if (xc->requires_grad) xc->ensure_grad();
      if (gc->requires_grad) gc->ensure_grad();
      if (bc->requires_grad) bc->ensure_grad();
      for (std::int64_t c = 0; c < C; ++c) {
        const S m = mean_c[static_cast<std::size_t>(c)];
        const S is = inv_std_c[static_cast<std::size_t>(c)];
        const S g = gc->at(c);
        S sum_dy = 0, sum_dy_xhat = 0;
        for (std::int64_t b = 0; b < B; ++b)
          for (std::int64_t t = 0; t < T; ++t) {
            const std::int64_t i = (b * C + c) * T + t;
            const S dy = yc->grad[static_cast<std::size_t>(i)];
            sum_dy += dy;
            sum_dy_xhat += dy * (xc->at(i) - m) * is;
          }
        if (bc->requires_grad) bc->grad[static_cast<std::size_t>(c)] += sum_dy;
        if (gc->requires_grad) gc->grad[static_cast<std::size_t>(c)] += sum_dy_xhat;
        if (xc->requires_grad) {
          for (std::int64_t b = 0; b < B; ++b)
            for (std::int64_t t = 0; t < T; ++t) {
              const std::int64_t i = (b * C + c) * T + t;
              const S dy = yc->grad[static_cast<std::size_t>(i)];
              const S xhat = (xc->at(i) - m) * is;
              if (training) {
                xc->grad[static_cast<std::size_t>(i)] +=
                    g * is *
                    (dy - sum_dy / static_cast<S>(N) -
                     xhat * sum_dy_xhat / static_cast<S>(N));
              } else {
                xc->grad[static_cast<std::size_t>(i)] += g * is * dy;
              }
            }
        }
      }
    });
  }
  return y;
}

// Inverted dropout: kept activations are scaled by 1/(1-p) at train time so
// eval is the identity. p must lie in [0, 1).
template <typename S>
TensorPtr<S> dropout(Tape<S>* tape, const TensorPtr<S>& x, double p,
                     RngStream& rng, bool training) {
  require(p >= 0.0 && p < 1.0, "dropout rate must be in [0,1), got " + std::to_string(p));
  if (!training || p == 0.0) return x;
  const std::int64_t n = x->numel();
  auto mask = std::make_shared<std::vector<S>>(static_cast<std::size_t>(n));
  const S keep_scale = static_cast<S>(1.0 / (1.0 - p));
  for (std::int64_t i = 0; i < n; ++i)
    (*mask)[static_cast<std::size_t>(i)] = rng.next_double() >= p ? keep_scale : S(0);
  auto y = make_tensor<S>(x->shape);
  for (std::int64_t i = 0; i < n; ++i)
    y->at(i) = x->at(i) * (*mask)[static_cast<std::size_t>(i)];
  if (grad_needed(tape, {x.get()})) {
    y->requires_grad = true;
    TensorPtr<S> xc = x, yc = y;
    tape->record([xc, yc, mask, n]() {
      if (yc->grad.empty()) return;
      xc->ensure_grad();
      for (std::int64_t i = 0; i < n; ++i)
        xc->grad[static_cast<std::size_t>(i)] +=
            yc->grad[static_cast<std::size_t>(i)] * (*mask)[static_cast<std::size_t>(i)];
    });
  }
  return y;
}

// Mean over valid time steps only: y[b,c] = mean_{t < len[b]} x[b,c,t].
// Frames at t >= len[b] never contribute, so padded content is irrelevant.
template <typename S>
TensorPtr<S> masked_mean_time(Tape<S>* tape, const TensorPtr<S>& x,
                              const std::vector<std::int64_t>& lengths) {
  require(x->shape.size() == 3, "masked_mean_time input must be [B,C,T]");
  const std::int64_t B = x->shape[0], C = x->shape[1], T = x->shape[2];
  require(static_cast<std::int64_t>(lengths.size()) == B,
          "masked_mean_time lengths size must equal batch");
  for (std::int64_t b = 0; b < B; ++b)
    require(lengths[static_cast<std::size_t>(b)] >= 1 &&
                lengths[static_cast<std::size_t>(b)] <= T,
            "masked_mean_time length out of range at batch index " + std::to_string(b));
  auto y = make_tensor<S>({B, C});
  for (std::int64_t b = 0; b < B; ++b) {
    const std::int64_t L = lengths[static_cast<std::size_t>(b)];
    for (std::int64_t c = 0; c < C; ++c) {
      S acc = 0;
      for (std::int64_t t = 0; t < L; ++t) acc += x->at((b * C + c) * T + t);
      y->at(b * C + c) = acc / static_cast<S>(L);
    }
  }
  if (grad_needed(tape, {x.get()})) {
    y->requires_grad = true;
    TensorPtr<S> xc = x, yc = y;
    auto lens = lengths;
    tape->record([xc, yc, lens, B, C, T]() {
      if (yc->grad.empty()) return;
      xc->ensure_grad();
      for (std::int64_t b = 0; b < B; ++b) {
        const std::int64_t L = lens[static_cast<std::size_t>(b)];
        for (std::int64_t c = 0; c < C; ++c) {
          const S g = yc->grad[static_cast<std::size_t>(b * C + c)] / static_cast<S>(L);
          for (std::int64_t t = 0; t < L; ++t)
            xc->grad[static_cast<std::size_t>((b * C + c) * T + t)] += g;
        }
      }
    });
  }
  return y;
}

template <typename S>
TensorPtr<S> add(Tape<S>* tape, const TensorPtr<S>& a, const TensorPtr<S>& b) {
  require(a->shape == b->shape, "add expects matching shapes, got " +
                                    shape_str(a->shape) + " vs " + shape_str(b->shape));
  auto y = make_tensor<S>(a->shape);
  const std::int64_t n = y->numel();
  for (std::int64_t i = 0; i < n; ++i) y->at(i) = a->at(i) + b->at(i);
  if (grad_needed(tape, {a.get(), b.get()})) {
    y->requires_grad = true;
    TensorPtr<S> ac = a, bc = b, yc = y;
    tape->record([ac, bc, yc, n]() {
      if (yc->grad.empty()) return;
      if (ac->requires_grad) {
        ac->ensure_grad();
        for (std::int64_t i = 0; i < n; ++i)
          ac->grad[static_cast<std::size_t>(i)] += yc->grad[static_cast<std::size_t>(i)];
      }
      if (bc->requires_grad) {
        bc->ensure_grad();
        for (std::int64_t i = 0; i < n; ++i)
          bc->grad[static_cast<std::size_t>(i)] += yc->grad[static_cast<std::size_t>(i)];
      }
    });
  }
  return y;
}

template <typename S>
TensorPtr<S> scale(Tape<S>* tape, const TensorPtr<S>& x, double c) {
  auto y = make_tensor<S>(x->shape);
  const std::int64_t n = y->numel();
  for (std::int64_t i = 0; i < n; ++i) y->at(i) = x->at(i) * static_cast<S>(c);
  if (grad_needed(tape, {x.get()})) {
    y->requires_grad = true;
    TensorPtr<S> xc = x, yc = y;
    tape->record([xc, yc, c, n]() {
      if (yc->grad.empty()) return;
      xc->ensure_grad();
      for (std::int64_t i = 0; i < n; ++i)
        xc->grad[static_cast<std::size_t>(i)] +=
            yc->grad[static_cast<std::size_t>(i)] * static_cast<S>(c);
    });
  }
  return y;
}

// Concatenate along the channel axis of [B,C_i,T] blocks.
template <typename S>
TensorPtr<S> concat_channels(Tape<S>* tape, const std::vector<TensorPtr<S>>& xs) {
  require(!xs.empty(), "concat_channels needs at least one input");
  const std::int64_t B = xs[0]->shape[0], T = xs[0]->shape[2];
  std::int64_t Ctot = 0;
  for (const auto& x : xs) {
    require(x->shape.size() == 3 && x->shape[0] == B && x->shape[2] == T,
            "concat_channels inputs must agree on [B,*,T]");
    Ctot += x->shape[1];
  }
  auto y = make_tensor<S>({B, Ctot, T});
  std::int64_t off = 0;
  for (const auto& x : xs) {
    const std::int64_t C = x->shape[1];
    for (std::int64_t b = 0; b < B; ++b)
      std::memcpy(y->data.data() + ((b * Ctot + off) * T),
                  x->data.data() + (b * C * T),
                  static_cast<std::size_t>(C * T) * sizeof(S));
    off += C;
  }
  bool need = tape != nullptr;
  bool any = false;
  for (const auto& x : xs) any = any || x->requires_grad;
  if (need && any) {
    y->requires_grad = true;
    auto xsc = xs;
    TensorPtr<S> yc = y;
    tape->record([xsc, yc, B, Ctot, T]() {
      if (yc->grad.empty()) return;
      std::int64_t off = 0;
      for (const auto& x : xsc) {
        const std::int64_t C = x->shape[1];
        if (x->requires_grad) {
          x->ensure_grad();
          for (std::int64_t b = 0; b < B; ++b)
            for (std::int64_t i = 0; i < C * T; ++i)
              x->grad[static_cast<std::size_t>(b * C * T + i)] +=
                  yc->grad[static_cast<std::size_t>((b * Ctot + off) * T + i)];
        }
        off += C;
      }
    });
  }
  return y;
}

// Row-wise log-softmax over [B,K], max-subtracted for stability.
template <typename S>
TensorPtr<S> log_softmax(Tape<S>* tape, const TensorPtr<S>& x) {
  require(x->shape.size() == 2, "log_softmax input must be [B,K]");
  const std::int64_t B = x->shape[0], K = x->shape[1];
  require(K >= 1, "log_softmax needs at least one class");
  auto y = make_tensor<S>(x->shape);
  for (std::int64_t b = 0; b < B; ++b) {
    const S* xr = x->data.data() + b * K;
    S* yr = y->data.data() + b * K;
    S m = xr[0];
    for (std::int64_t k = 1; k < K; ++k) m = std::max(m, xr[k]);
    S lse = 0;
    for (std::int64_t k = 0; k < K; ++k) lse += std::exp(xr[k] - m);
    lse = m + std::log(lse);
    for (std::int64_t k = 0; k < K; ++k) yr[k] = xr[k] - lse;
  }
  check_finite(*y, "log_softmax");
  if (grad_needed(tape, {x.get()})) {
    y->requires_grad = true;
    TensorPtr<S> xc = x, yc = y;
    tape->record([xc, yc, B, K]() {
      if (yc->grad.empty()) return;
      xc->ensure_grad();
      for (std::int64_t b = 0; b < B; ++b) {
        S gsum = 0;
        for (std::int64_t k = 0; k < K; ++k)
          gsum += yc->grad[static_cast<std::size_t>(b * K + k)];
        for (std::int64_t k = 0; k < K; ++k) {
          const std::int64_t i = b * K + k;
          xc->grad[static_cast<std::size_t>(i)] +=
              yc->grad[static_cast<std::size_t>(i)] - std::exp(yc->at(i)) * gsum;
        }
      }
    });
  }
  return y;
}

// Mean negative log likelihood of integer labels given log-probabilities.
template <typename S>
TensorPtr<S> nll_mean(Tape<S>* tape, const TensorPtr<S>& logp,
                      const std::vector<std::int64_t>& labels) {
  require(logp->shape.size() == 2, "nll_mean input must be [B,K]");
  const std::int64_t B = logp->shape[0], K = logp->shape[1];
  require(B >= 1, "nll_mean needs a non-empty batch");
  require(static_cast<std::int64_t>(labels.size()) == B, "nll_mean labels size mismatch");
  for (std::int64_t b = 0; b < B; ++b)
    require(labels[static_cast<std::size_t>(b)] >= 0 &&
                labels[static_cast<std::size_t>(b)] < K,
            "nll_mean label out of range at index " + std::to_string(b));
  auto y = make_tensor<S>({1});
  S acc = 0;
  for (std::int64_t b = 0; b < B; ++b)
    acc -= logp->at(b * K + labels[static_cast<std::size_t>(b)]);
  y->at(0) = acc / static_cast<S>(B);
  if (grad_needed(tape, {logp.get()})) {
    y->requires_grad = true;
    TensorPtr<S> lc = logp, yc = y;
    auto labs = labels;
    tape->record([lc, yc, labs, B, K]() {
      if (yc->grad.empty()) return;
      lc->ensure_grad();
      const S g = yc->grad[0] / static_cast<S>(B);
      for (std::int64_t b = 0; b < B; ++b)
        lc->grad[static_cast<std::size_t>(b * K + labs[static_cast<std::size_t>(b)])] -= g;
    });
  }
  return y;
}

// mean_b sum_k p_t[b,k] * (log p_t[b,k] - logp_s[b,k]); p_t is a constant.
// Terms where p_t == 0 contribute zero by convention.
template <typename S>
TensorPtr<S> kl_teacher_mean(Tape<S>* tape, const TensorPtr<S>& logp_student,
                             const std::vector<S>& teacher_probs) {
  require(logp_student->shape.size() == 2, "kl_teacher_mean input must be [B,K]");
  const std::int64_t B = logp_student->shape[0], K = logp_student->shape[1];
  require(B >= 1, "kl_teacher_mean needs a non-empty batch");
  require(static_cast<std::int64_t>(teacher_probs.size()) == B * K,
          "kl_teacher_mean teacher probs size mismatch");
  auto y = make_tensor<S>({1});
  S acc = 0;
  for (std::int64_t i = 0; i < B * K; ++i) {
    const S p = teacher_probs[static_cast<std::size_t>(i)];
    if (p > S(0)) acc += p * (std::log(p) - logp_student->at(i));
  }
  y->at(0) = acc / static_cast<S>(B);
  check_finite(*y, "kl_teacher_mean");
  if (grad_needed(tape, {logp_student.get()})) {
    y->requires_grad = true;
    TensorPtr<S> lc = logp_student, yc = y;
    auto tp = teacher_probs;
    tape->record([lc, yc, tp, B, K]() {
      if (yc->grad.empty()) return;
      lc->ensure_grad();
      const S g = yc->grad[0] / static_cast<S>(B);
      for (std::int64_t i = 0; i < B * K; ++i)
        lc->grad[static_cast<std::size_t>(i)] -= g * tp[static_cast<std::size_t>(i)];
    });
  }
  return y;
}

// mean_b sum_k p_s[b,k] * (logp_s[b,k] - logp_t[b,k]); the reversed direction,
// gradients flow through p_s = exp(logp_s).
template <typename S>
TensorPtr<S> kl_student_mean(Tape<S>* tape, const TensorPtr<S>& logp_student,
                             const std::vector<S>& teacher_logp) {
  require(logp_student->shape.size() == 2, "kl_student_mean input must be [B,K]");
  const std::int64_t B = logp_student->shape[0], K = logp_student->shape[1];
  require(B >= 1, "kl_student_mean needs a non-empty batch");
  require(static_cast<std::int64_t>(teacher_logp.size()) == B * K,
          "kl_student_mean teacher logp size mismatch");
  auto y = make_tensor<S>({1});
  S acc = 0;
  for (std::int64_t i = 0; i < B * K; ++i) {
    const S lps = logp_student->at(i);
    acc += std::exp(lps) * (lps - teacher_logp[static_cast<std::size_t>(i)]);
  }
  y->at(0) = acc / static_cast<S>(B);
  check_finite(*y, "kl_student_mean");
  if (grad_needed(tape, {logp_student.get()})) {
    y->requires_grad = true;
    TensorPtr<S> lc = logp_student, yc = y;
    auto tl = teacher_logp;
    tape->record([lc, yc, tl, B, K]() {
      if (yc->grad.empty()) return;
      lc->ensure_grad();
      const S g = yc->grad[0] / static_cast<S>(B);
      for (std::int64_t i = 0; i < B * K; ++i) {
        const S lps = lc->at(i);
        lc->grad[static_cast<std::size_t>(i)] +=
            g * std::exp(lps) * (lps - tl[static_cast<std::size_t>(i)] + S(1));
      }
    });
  }
  return y;
}

// Zero out frames at t >= len[b]: y[b,c,t] = x[b,c,t] * [t < len[b]].
// Applied once at head entry so every downstream value, including conv taps
// that reach across the boundary, is a function of valid frames only.
template <typename S>
TensorPtr<S> mask_time(Tape<S>* tape, const TensorPtr<S>& x,
                       const std::vector<std::int64_t>& lengths) {
  require(x->shape.size() == 3, "mask_time input must be [B,C,T]");
  const std::int64_t B = x->shape[0], C = x->shape[1], T = x->shape[2];
  require(static_cast<std::int64_t>(lengths.size()) == B,
          "mask_time lengths size must equal batch");
  for (std::int64_t b = 0; b < B; ++b)
    require(lengths[static_cast<std::size_t>(b)] >= 1 &&
                lengths[static_cast<std::size_t>(b)] <= T,
            "mask_time length out of range at batch index " + std::to_string(b));
  auto y = make_tensor<S>(x->shape);
  for (std::int64_t b = 0; b < B; ++b) {
    const std::int64_t L = lengths[static_cast<std::size_t>(b)];
    for (std::int64_t c = 0; c < C; ++c)
      for (std::int64_t t = 0; t < L; ++t)
        y->at((b * C + c) * T + t) = x->at((b * C + c) * T + t);
  }
  if (grad_needed(tape, {x.get()})) {
    y->requires_grad = true;
    TensorPtr<S> xc = x, yc = y;
    auto lens = lengths;
    tape->record([xc, yc, lens, B, C, T]() {
      if (yc->grad.empty()) return;
      xc->ensure_grad();
      for (std::int64_t b = 0; b < B; ++b) {
        const std::int64_t L = lens[static_cast<std::size_t>(b)];
        for (std::int64_t c = 0; c < C; ++c)
          for (std::int64_t t = 0; t < L; ++t)
            xc->grad[static_cast<std::size_t>((b * C + c) * T + t)] +=
                yc->grad[static_cast<std::size_t>((b * C + c) * T + t)];
      }
    });
  }
  return y;
}

// Generic KL divergence between explicit distributions:
//   mean_b sum_k p[b,k] * log(p[b,k] / q[b,k]),  0 * log(0/q) = 0.
// Both arguments are validated as row distributions (nonnegative entries,
// rows summing to 1 within 1e-5). Gradients flow to both p and q.
template <typename S>
TensorPtr<S> kl_div(Tape<S>* tape, const TensorPtr<S>& p, const TensorPtr<S>& q) {
  require(p->shape.size() == 2 && p->shape == q->shape,
          "kl_div expects matching [B,K] distributions");
  const std::int64_t B = p->shape[0], K = p->shape[1];
  require(B >= 1, "kl_div needs a non-empty batch");
  for (const auto& d : {p, q}) {
    for (std::int64_t b = 0; b < B; ++b) {
      S row = 0;
      for (std::int64_t k = 0; k < K; ++k) {
        const S v = d->at(b * K + k);
        require(v >= S(0), "kl_div argument has a negative entry at row " +
                               std::to_string(b));
        row += v;
      }
      require(std::abs(double(row) - 1.0) <= 1e-5,
              "kl_div argument row " + std::to_string(b) +
                  " does not sum to 1 (got " + std::to_string(double(row)) + ")");
    }
  }
  auto y = make_tensor<S>({1});
  S acc = 0;
  for (std::int64_t i = 0; i < B * K; ++i) {
    const S pv = p->at(i);
    if (pv > S(0)) acc += pv * std::log(pv / q->at(i));
  }
  y->at(0) = acc / static_cast<S>(B);
  check_finite(*y, "kl_div");
  if (grad_needed(tape, {p.get(), q.get()})) {
    y->requires_grad = true;
    TensorPtr<S> pc = p, qc = q, yc = y;
    tape->record([pc, qc, yc, B, K]() {
      if (yc->grad.empty()) return;
      const S g = yc->grad[0] / static_cast<S>(B);
      if (pc->requires_grad) pc->ensure_grad();
      if (qc->requires_grad) qc->ensure_grad();
      for (std::int64_t i = 0; i < B * K; ++i) {
        const S pv = pc->at(i);
        if (pv <= S(0)) continue;
        const std::size_t ii = static_cast<std::size_t>(i);
        if (pc->requires_grad)
          pc->grad[ii] += g * (std::log(pv / qc->at(i)) + S(1));
        if (qc->requires_grad) qc->grad[ii] -= g * pv / qc->at(i);
      }
    });
  }
  return y;
}

// alpha*a + beta*b for scalar tensors; used to combine loss terms.
template <typename S>
TensorPtr<S> add_scaled(Tape<S>* tape, const TensorPtr<S>& a, double alpha,
                        const TensorPtr<S>& b, double beta) {
  require(a->numel() == 1 && b->numel() == 1, "add_scaled expects scalars");
  auto y = make_tensor<S>({1});
  y->at(0) = static_cast<S>(alpha) * a->at(0) + static_cast<S>(beta) * b->at(0);
  if (grad_needed(tape, {a.get(), b.get()})) {
    y->requires_grad = true;
    TensorPtr<S> ac = a, bc = b, yc = y;
    tape->record([ac, bc, yc, alpha, beta]() {
      if (yc->grad.empty()) return;
      if (ac->requires_grad) {
        ac->ensure_grad();
        ac->grad[0] += static_cast<S>(alpha) * yc->grad[0];
      }
      if (bc->requires_grad) {
        bc->ensure_grad();
        bc->grad[0] += static_cast<S>(beta) * yc->grad[0];
      }
    });
  }
  return y;
}

// loss = sum_i x_i * w_i; handy scalarizer for gradient checks.
template <typename S>
TensorPtr<S> weighted_sum(Tape<S>* tape, const TensorPtr<S>& x,
                          const std::vector<S>& w) {
  require(static_cast<std::int64_t>(w.size()) == x->numel(),
          "weighted_sum weight size mismatch");
  auto y = make_tensor<S>({1});
  S acc = 0;
  const std::int64_t n = x->numel();
  for (std::int64_t i = 0; i < n; ++i) acc += x->at(i) * w[static_cast<std::size_t>(i)];
  y->at(0) = acc;
  if (grad_needed(tape, {x.get()})) {
    y->requires_grad = true;
    TensorPtr<S> xc = x, yc = y;
    auto wc = w;
    tape->record([xc, yc, wc, n]() {
      if (yc->grad.empty()) return;
      xc->ensure_grad();
      for (std::int64_t i = 0; i < n; ++i)
        xc->grad[static_cast<std::size_t>(i)] += yc->grad[0] * wc[static_cast<std::size_t>(i)];
    });
  }
  return y;
}

// mean_b sum_k exp(lpt[b,k]) * (lpt[b,k] - lps[b,k]) with the teacher's
// log-probabilities held constant. Same divergence as kl_teacher_mean, but
// phrased so lps == lpt gives exactly zero termwise.
template <typename S>
TensorPtr<S> kl_teacher_logp_mean(Tape<S>* tape, const TensorPtr<S>& logp_student,
                                  const std::vector<S>& teacher_logp) {
  require(logp_student->shape.size() == 2, "kl_teacher_logp_mean input must be [B,K]");
  const std::int64_t B = logp_student->shape[0], K = logp_student->shape[1];
  require(B >= 1, "kl_teacher_logp_mean needs a non-empty batch");
  require(static_cast<std::int64_t>(teacher_logp.size()) == B * K,
          "kl_teacher_logp_mean teacher logp size mismatch");
  auto y = make_tensor<S>({1});
  S acc = 0;
  for (std::int64_t i = 0; i < B * K; ++i) {
    const S lpt = teacher_logp[static_cast<std::size_t>(i)];
    acc += std::exp(lpt) * (lpt - logp_student->at(i));
  }
  y->at(0) = acc / static_cast<S>(B);
  check_finite(*y, "kl_teacher_logp_mean");
  if (grad_needed(tape, {logp_student.get()})) {
    y->requires_grad = true;
    TensorPtr<S> lc = logp_student, yc = y;
    auto tl = teacher_logp;
    tape->record([lc, yc, tl, B, K]() {
      if (yc->grad.empty()) return;
      lc->ensure_grad();
      const S g = yc->grad[0] / static_cast<S>(B);
      for (std::int64_t i = 0; i < B * K; ++i)
        lc->grad[static_cast<std::size_t>(i)] -=
            g * std::exp(tl[static_cast<std::size_t>(i)]);
    });
  }
  return y;
}

// Row-wise log-softmax on raw data, same max-subtracted arithmetic as the
// tape op; inference helper for constant (teacher) logits.
template <typename S>
std::vector<S> log_softmax_rows(const std::vector<S>& logits, std::int64_t B,
                                std::int64_t K) {
  require(static_cast<std::int64_t>(logits.size()) == B * K,
          "log_softmax_rows size mismatch");
  std::vector<S> out(logits.size());
  for (std::int64_t b = 0; b < B; ++b) {
    const S* xr = logits.data() + b * K;
    S* yr = out.data() + b * K;
    S m = xr[0];
    for (std::int64_t k = 1; k < K; ++k) m = std::max(m, xr[k]);
    S lse = 0;
    for (std::int64_t k = 0; k < K; ++k) lse += std::exp(xr[k] - m);
    lse = m + std::log(lse);
    for (std::int64_t k = 0; k < K; ++k) yr[k] = xr[k] - lse;
  }
  return out;
}

// Plain row-wise softmax on raw data; inference helper, no tape.
template <typename S>
std::vector<S> softmax_rows(const std::vector<S>& logits, std::int64_t B,
                            std::int64_t K) {
  require(static_cast<std::int64_t>(logits.size()) == B * K, "softmax_rows size mismatch");
  std::vector<S> out(logits.size());
  for (std::int64_t b = 0; b < B; ++b) {
    const S* xr = logits.data() + b * K;
    S* yr = out.data() + b * K;
    S m = xr[0];
    for (std::int64_t k = 1; k < K; ++k) m = std::max(m, xr[k]);
    S z = 0;
    for (std::int64_t k = 0; k < K; ++k) {
      yr[k] = std::exp(xr[k] - m);
      z += yr[k];
    }
    for (std::int64_t k = 0; k < K; ++k) yr[k] /= z;
  }
  return out;
}

// Convenience: cross entropy of logits against integer labels.
template <typename S>
TensorPtr<S> cross_entropy(Tape<S>* tape, const TensorPtr<S>& logits,
                           const std::vector<std::int64_t>& labels) {
  return nll_mean(tape, log_softmax(tape, logits), labels);
}

}  // namespace vsr
