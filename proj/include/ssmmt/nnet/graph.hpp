#pragma once

// Tape-based reverse-mode autodiff over Tensor<T>. A Graph records one
// forward pass; backward() walks the tape in reverse and accumulates
// gradients into every recorded node. Every op here is covered by the
// central-finite-difference suite in the tests.

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ssmmt/nnet/tensor.hpp"

namespace ssmmt {

template <typename T>
class Graph {
public:
  using Id = int;

  explicit Graph(bool check_finite = false) : check_finite_(check_finite) {}

  Id constant(Tensor<T> v, std::string name = "") {
    return push(std::move(v), false, std::move(name));
  }

  Id param(Tensor<T> v, std::string name = "") {
    return push(std::move(v), true, std::move(name));
  }

  const Tensor<T>& value(Id id) const { return nodes_[size_t(id)].value; }
  const Tensor<T>& grad(Id id) const { return nodes_[size_t(id)].grad; }
  bool requires_grad(Id id) const { return nodes_[size_t(id)].requires_grad; }
  size_t size() const { return nodes_.size(); }

  // ---- elementwise / structural ops ----

  Id add(Id a, Id b) {
    const auto& A = value(a);
    const auto& B = value(b);
    if (!A.same_shape(B)) throw UsageError("add: shape mismatch " + A.shape_str() + " vs " + B.shape_str());
    Tensor<T> out = A;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += B.data[i];
    return push_op(std::move(out), {a, b}, [a, b](Graph& g, Id self) {
      const auto& G = g.nodes_[size_t(self)].grad;
      g.accumulate(a, G);
      g.accumulate(b, G);
    });
  }

  // x: [m x n], bias row: [1 x n]
  Id add_rowvec(Id x, Id b) {
    const auto& X = value(x);
    const auto& B = value(b);
    if (B.rows() != 1 || B.cols() != X.cols()) throw UsageError("add_rowvec: bad bias shape");
    Tensor<T> out = X;
    for (int r = 0; r < X.rows(); ++r) {
      for (int c = 0; c < X.cols(); ++c) out.at(r, c) += B.at(0, c);
    }
    return push_op(std::move(out), {x, b}, [x, b](Graph& g, Id self) {
      const auto& G = g.nodes_[size_t(self)].grad;
      g.accumulate(x, G);
      if (g.nodes_[size_t(b)].requires_grad) {
        Tensor<T> gb(1, G.cols());
        for (int r = 0; r < G.rows(); ++r) {
          for (int c = 0; c < G.cols(); ++c) gb.at(0, c) += G.at(r, c);
        }
        g.accumulate(b, gb);
      }
    });
  }

  Id mul(Id a, Id b) {
    const auto& A = value(a);
    const auto& B = value(b);
    if (!A.same_shape(B)) throw UsageError("mul: shape mismatch");
    Tensor<T> out = A;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= B.data[i];
    return push_op(std::move(out), {a, b}, [a, b](Graph& g, Id self) {
      const auto& G = g.nodes_[size_t(self)].grad;
      if (g.nodes_[size_t(a)].requires_grad || g.node_needs_grad(a)) {
        Tensor<T> ga = G;
        const auto& B2 = g.value(b);
        for (size_t i = 0; i < ga.data.size(); ++i) ga.data[i] *= B2.data[i];
        g.accumulate(a, ga);
      }
      if (g.nodes_[size_t(b)].requires_grad || g.node_needs_grad(b)) {
        Tensor<T> gb = G;
        const auto& A2 = g.value(a);
        for (size_t i = 0; i < gb.data.size(); ++i) gb.data[i] *= A2.data[i];
        g.accumulate(b, gb);
      }
    });
  }

  Id scale(Id a, double c) {
    Tensor<T> out = value(a);
    for (auto& v : out.data) v *= T(c);
    return push_op(std::move(out), {a}, [a, c](Graph& g, Id self) {
      Tensor<T> ga = g.nodes_[size_t(self)].grad;
      for (auto& v : ga.data) v *= T(c);
      g.accumulate(a, ga);
    });
  }

  Id matmul(Id a, Id b) {
    const auto& A = value(a);
    const auto& B = value(b);
    if (A.cols() != B.rows()) {
      throw UsageError("matmul: inner dims " + A.shape_str() + " * " + B.shape_str());
    }
    Tensor<T> out(A.rows(), B.cols());
    matmul_into(out, A, B, false, false);
    return push_op(std::move(out), {a, b}, [a, b](Graph& g, Id self) {
      const auto& G = g.nodes_[size_t(self)].grad;
      const auto& A2 = g.value(a);
      const auto& B2 = g.value(b);
      Tensor<T> ga(A2.rows(), A2.cols());
      matmul_into(ga, G, B2, false, true);  // G * B^T
      g.accumulate(a, ga);
      Tensor<T> gb(B2.rows(), B2.cols());
      matmul_into(gb, A2, G, true, false);  // A^T * G
      g.accumulate(b, gb);
    });
  }

  Id transpose(Id a) {
    const auto& A = value(a);
    Tensor<T> out(A.cols(), A.rows());
    for (int r = 0; r < A.rows(); ++r) {
      for (int c = 0; c < A.cols(); ++c) out.at(c, r) = A.at(r, c);
    }
    return push_op(std::move(out), {a}, [a](Graph& g, Id self) {
      const auto& G = g.nodes_[size_t(self)].grad;
      Tensor<T> ga(G.cols(), G.rows());
      for (int r = 0; r < G.rows(); ++r) {
        for (int c = 0; c < G.cols(); ++c) ga.at(c, r) = G.at(r, c);
      }
      g.accumulate(a, ga);
    });
  }

  Id relu(Id a) {
    Tensor<T> out = value(a);
    for (auto& v : out.data) v = v > T(0) ? v : T(0);
    return push_op(std::move(out), {a}, [a](Graph& g, Id self) {
      Tensor<T> ga = g.nodes_[size_t(self)].grad;
      const auto& A2 = g.value(a);
      for (size_t i = 0; i < ga.data.size(); ++i) {
        if (A2.data[i] <= T(0)) ga.data[i] = T(0);
      }
      g.accumulate(a, ga);
    });
  }

  Id sigmoid(Id a) {
    Tensor<T> out = value(a);
    for (auto& v : out.data) v = T(1) / (T(1) + std::exp(-v));
    Id id = push_op(Tensor<T>(out), {a}, [a](Graph& g, Id self) {
      const auto& S = g.nodes_[size_t(self)].value;
      Tensor<T> ga = g.nodes_[size_t(self)].grad;
      for (size_t i = 0; i < ga.data.size(); ++i) {
        ga.data[i] *= S.data[i] * (T(1) - S.data[i]);
      }
      g.accumulate(a, ga);
    });
    return id;
  }

  // Row-wise softmax with an optional constant additive mask (e.g. -1e9 at
  // disallowed attention positions), applied before normalization.
  Id softmax_rows(Id x, const std::optional<Tensor<T>>& additive_mask = std::nullopt) {
    const auto& X = value(x);
    if (additive_mask && !additive_mask->same_shape(X)) {
      throw UsageError("softmax_rows: mask shape mismatch");
    }
    Tensor<T> out = X;
    if (additive_mask) {
      for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += additive_mask->data[i];
    }
    for (int r = 0; r < out.rows(); ++r) {
      T mx = out.at(r, 0);
      for (int c = 1; c < out.cols(); ++c) mx = std::max(mx, out.at(r, c));
      T sum = T(0);
      for (int c = 0; c < out.cols(); ++c) {
        out.at(r, c) = std::exp(out.at(r, c) - mx);
        sum += out.at(r, c);
      }
      for (int c = 0; c < out.cols(); ++c) out.at(r, c) /= sum;
    }
    return push_op(std::move(out), {x}, [x](Graph& g, Id self) {
      const auto& S = g.nodes_[size_t(self)].value;
      const auto& G = g.nodes_[size_t(self)].grad;
      Tensor<T> gx(S.rows(), S.cols());
      for (int r = 0; r < S.rows(); ++r) {
        T dot = T(0);
        for (int c = 0; c < S.cols(); ++c) dot += G.at(r, c) * S.at(r, c);
        for (int c = 0; c < S.cols(); ++c) {
          gx.at(r, c) = S.at(r, c) * (G.at(r, c) - dot);
        }
      }
      g.accumulate(x, gx);
    });
  }

  // Per-row layer norm with learnable gamma/beta rows [1 x n].
  Id layer_norm_rows(Id x, Id gamma, Id beta, double eps = 1e-5) {
    const auto& X = value(x);
    const auto& Gm = value(gamma);
    const auto& Bt = value(beta);
    if (Gm.rows() != 1 || Gm.cols() != X.cols() || Bt.rows() != 1 || Bt.cols() != X.cols()) {
      throw UsageError("layer_norm_rows: gamma/beta must be [1 x cols]");
    }
    int n = X.cols();
    Tensor<T> xhat(X.rows(), n);
    Tensor<T> inv_sigma(X.rows(), 1);
    Tensor<T> out(X.rows(), n);
    for (int r = 0; r < X.rows(); ++r) {
      T mean = T(0);
      for (int c = 0; c < n; ++c) mean += X.at(r, c);
      mean /= T(n);
      T var = T(0);
      for (int c = 0; c < n; ++c) {
        T d = X.at(r, c) - mean;
        var += d * d;
      }
      var /= T(n);
      T is = T(1) / std::sqrt(var + T(eps));
      inv_sigma.at(r, 0) = is;
      for (int c = 0; c < n; ++c) {
        xhat.at(r, c) = (X.at(r, c) - mean) * is;
        out.at(r, c) = xhat.at(r, c) * Gm.at(0, c) + Bt.at(0, c);
      }
    }
    auto xhat_p = std::make_shared<Tensor<T>>(std::move(xhat));
    auto is_p = std::make_shared<Tensor<T>>(std::move(inv_sigma));
    return push_op(std::move(out), {x, gamma, beta},
                   [x, gamma, beta, xhat_p, is_p](Graph& g, Id self) {
      const auto& G = g.nodes_[size_t(self)].grad;
      const auto& Gm = g.value(gamma);
      int n = G.cols();
      Tensor<T> ggamma(1, n);
      Tensor<T> gbeta(1, n);
      Tensor<T> gx(G.rows(), n);
      for (int r = 0; r < G.rows(); ++r) {
        T mean_gy = T(0), mean_gyx = T(0);
        for (int c = 0; c < n; ++c) {
          T gy = G.at(r, c) * Gm.at(0, c);
          mean_gy += gy;
          mean_gyx += gy * xhat_p->at(r, c);
          ggamma.at(0, c) += G.at(r, c) * xhat_p->at(r, c);
          gbeta.at(0, c) += G.at(r, c);
        }
        mean_gy /= T(n);
        mean_gyx /= T(n);
        for (int c = 0; c < n; ++c) {
          T gy = G.at(r, c) * Gm.at(0, c);
          gx.at(r, c) = is_p->at(r, 0) * (gy - mean_gy - xhat_p->at(r, c) * mean_gyx);
        }
      }
      g.accumulate(x, gx);
      g.accumulate(gamma, ggamma);
      g.accumulate(beta, gbeta);
    });
  }

  // Gather rows of an embedding table.
  Id embedding(Id table, const std::vector<int>& ids) {
    const auto& Tb = value(table);
    Tensor<T> out(int(ids.size()), Tb.cols());
    for (size_t r = 0; r < ids.size(); ++r) {
      if (ids[r] < 0 || ids[r] >= Tb.rows()) {
        throw UsageError("embedding: id out of range: " + std::to_string(ids[r]));
      }
      for (int c = 0; c < Tb.cols(); ++c) out.at(int(r), c) = Tb.at(ids[r], c);
    }
    return push_op(std::move(out), {table}, [table, ids](Graph& g, Id self) {
      const auto& G = g.nodes_[size_t(self)].grad;
      const auto& Tb = g.value(table);
      Tensor<T> gt(Tb.rows(), Tb.cols());
      for (size_t r = 0; r < ids.size(); ++r) {
        for (int c = 0; c < Tb.cols(); ++c) gt.at(ids[r], c) += G.at(int(r), c);
      }
      g.accumulate(table, gt);
    });
  }

  // Gather a subset of rows (used for masked-position prediction heads).
  Id select_rows(Id x, const std::vector<int>& rows) {
    const auto& X = value(x);
    Tensor<T> out(int(rows.size()), X.cols());
    for (size_t r = 0; r < rows.size(); ++r) {
      if (rows[r] < 0 || rows[r] >= X.rows()) throw UsageError("select_rows: out of range");
      for (int c = 0; c < X.cols(); ++c) out.at(int(r), c) = X.at(rows[r], c);
    }
    return push_op(std::move(out), {x}, [x, rows](Graph& g, Id self) {
      const auto& G = g.nodes_[size_t(self)].grad;
      const auto& X2 = g.value(x);
      Tensor<T> gx(X2.rows(), X2.cols());
      for (size_t r = 0; r < rows.size(); ++r) {
        for (int c = 0; c < G.cols(); ++c) gx.at(rows[r], c) += G.at(int(r), c);
      }
      g.accumulate(x, gx);
    });
  }

  // Mean over rows whose mask entry is nonzero -> [1 x n].
  Id masked_mean_rows(Id x, const std::vector<uint8_t>& row_mask) {
    const auto& X = value(x);
    if (int(row_mask.size()) != X.rows()) throw UsageError("masked_mean_rows: mask length");
    int cnt = 0;
    for (uint8_t m : row_mask) cnt += m ? 1 : 0;
    if (cnt == 0) throw UsageError("masked_mean_rows: empty mask");
    Tensor<T> out(1, X.cols());
    for (int r = 0; r < X.rows(); ++r) {
      if (!row_mask[size_t(r)]) continue;
      for (int c = 0; c < X.cols(); ++c) out.at(0, c) += X.at(r, c);
    }
    for (int c = 0; c < X.cols(); ++c) out.at(0, c) /= T(cnt);
    return push_op(std::move(out), {x}, [x, row_mask, cnt](Graph& g, Id self) {
      const auto& G = g.nodes_[size_t(self)].grad;
      const auto& X2 = g.value(x);
      Tensor<T> gx(X2.rows(), X2.cols());
      for (int r = 0; r < X2.rows(); ++r) {
        if (!row_mask[size_t(r)]) continue;
        for (int c = 0; c < X2.cols(); ++c) gx.at(r, c) = G.at(0, c) / T(cnt);
      }
      g.accumulate(x, gx);
    });
  }

  // out_r = s_r * x_r with per-row scalars s [m x 1].
  Id scale_rows(Id x, Id s) {
    const auto& X = value(x);
    const auto& S = value(s);
    if (S.rows() != X.rows() || S.cols() != 1) throw UsageError("scale_rows: s must be [rows x 1]");
    Tensor<T> out = X;
    for (int r = 0; r < X.rows(); ++r) {
      for (int c = 0; c < X.cols(); ++c) out.at(r, c) *= S.at(r, 0);
    }
    return push_op(std::move(out), {x, s}, [x, s](Graph& g, Id self) {
      const auto& G = g.nodes_[size_t(self)].grad;
      const auto& X2 = g.value(x);
      const auto& S2 = g.value(s);
      Tensor<T> gx(X2.rows(), X2.cols());
      Tensor<T> gs(X2.rows(), 1);
      for (int r = 0; r < X2.rows(); ++r) {
        for (int c = 0; c < X2.cols(); ++c) {
          gx.at(r, c) = G.at(r, c) * S2.at(r, 0);
          gs.at(r, 0) += G.at(r, c) * X2.at(r, c);
        }
      }
      g.accumulate(x, gx);
      g.accumulate(s, gs);
    });
  }

  Id broadcast_row(Id v, int m) {
    const auto& V = value(v);
    if (V.rows() != 1) throw UsageError("broadcast_row: input must be [1 x n]");
    Tensor<T> out(m, V.cols());
    for (int r = 0; r < m; ++r) {
      for (int c = 0; c < V.cols(); ++c) out.at(r, c) = V.at(0, c);
    }
    return push_op(std::move(out), {v}, [v](Graph& g, Id self) {
      const auto& G = g.nodes_[size_t(self)].grad;
      Tensor<T> gv(1, G.cols());
      for (int r = 0; r < G.rows(); ++r) {
        for (int c = 0; c < G.cols(); ++c) gv.at(0, c) += G.at(r, c);
      }
      g.accumulate(v, gv);
    });
  }

  Id slice_cols(Id x, int c0, int c1) {
    const auto& X = value(x);
    if (c0 < 0 || c1 > X.cols() || c0 >= c1) throw UsageError("slice_cols: bad range");
    Tensor<T> out(X.rows(), c1 - c0);
    for (int r = 0; r < X.rows(); ++r) {
      for (int c = c0; c < c1; ++c) out.at(r, c - c0) = X.at(r, c);
    }
    return push_op(std::move(out), {x}, [x, c0, c1](Graph& g, Id self) {
      const auto& G = g.nodes_[size_t(self)].grad;
      const auto& X2 = g.value(x);
      Tensor<T> gx(X2.rows(), X2.cols());
      for (int r = 0; r < X2.rows(); ++r) {
        for (int c = c0; c < c1; ++c) gx.at(r, c) = G.at(r, c - c0);
      }
      g.accumulate(x, gx);
    });
  }

  Id concat_cols(const std::vector<Id>& parts) {
    if (parts.empty()) throw UsageError("concat_cols: empty");
    int rows = value(parts[0]).rows();
    int total = 0;
    for (Id p : parts) {
      if (value(p).rows() != rows) throw UsageError("concat_cols: row mismatch");
      total += value(p).cols();
    }
    Tensor<T> out(rows, total);
    int off = 0;
    for (Id p : parts) {
      const auto& P = value(p);
      for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < P.cols(); ++c) out.at(r, off + c) = P.at(r, c);
      }
      off += P.cols();
    }
    return push_op(std::move(out), parts, [parts](Graph& g, Id self) {
      const auto& G = g.nodes_[size_t(self)].grad;
      int off2 = 0;
      for (Id p : parts) {
        const auto& P = g.value(p);
        Tensor<T> gp(P.rows(), P.cols());
        for (int r = 0; r < P.rows(); ++r) {
          for (int c = 0; c < P.cols(); ++c) gp.at(r, c) = G.at(r, off2 + c);
        }
        g.accumulate(p, gp);
        off2 += P.cols();
      }
    });
  }

  // ---- losses ----

  // Mean of -log softmax(logits)[target] over rows whose target != ignore_index.
  Id cross_entropy_mean(Id logits, const std::vector<int>& targets, int ignore_index = -1) {
    const auto& L = value(logits);
    if (int(targets.size()) != L.rows()) throw UsageError("cross_entropy_mean: target length");
    int cnt = 0;
    Tensor<T> probs(L.rows(), L.cols());
    T loss = T(0);
    for (int r = 0; r < L.rows(); ++r) {
      if (targets[size_t(r)] == ignore_index) continue;
      if (targets[size_t(r)] < 0 || targets[size_t(r)] >= L.cols()) {
        throw UsageError("cross_entropy_mean: target out of range");
      }
      ++cnt;
      T mx = L.at(r, 0);
      for (int c = 1; c < L.cols(); ++c) mx = std::max(mx, L.at(r, c));
      T sum = T(0);
      for (int c = 0; c < L.cols(); ++c) sum += std::exp(L.at(r, c) - mx);
      T log_sum = std::log(sum) + mx;
      for (int c = 0; c < L.cols(); ++c) probs.at(r, c) = std::exp(L.at(r, c) - log_sum);
      loss -= L.at(r, targets[size_t(r)]) - log_sum;
    }
    if (cnt == 0) throw UsageError("cross_entropy_mean: all positions ignored");
    loss /= T(cnt);
    Tensor<T> out(1, 1);
    out.at(0, 0) = loss;
    auto probs_p = std::make_shared<Tensor<T>>(std::move(probs));
    return push_op(std::move(out), {logits},
                   [logits, targets, ignore_index, cnt, probs_p](Graph& g, Id self) {
      T gscalar = g.nodes_[size_t(self)].grad.at(0, 0);
      const auto& L2 = g.value(logits);
      Tensor<T> gl(L2.rows(), L2.cols());
      for (int r = 0; r < L2.rows(); ++r) {
        if (targets[size_t(r)] == ignore_index) continue;
        for (int c = 0; c < L2.cols(); ++c) {
          T p = probs_p->at(r, c);
          T onehot = (c == targets[size_t(r)]) ? T(1) : T(0);
          gl.at(r, c) = gscalar * (p - onehot) / T(cnt);
        }
      }
      g.accumulate(logits, gl);
    });
  }

  // Mean binary cross-entropy over all entries of z against labels y. Each
  // log argument is clamped from below at `clamp` (sigma effectively clamped
  // into [1e-7, 1-1e-7] term-wise), which prevents log(0) and 0*log(0) at
  // perfect predictions while leaving the winning term exact, so perfectly
  // separated batches reach ~0 loss.
  Id bce_with_logits_mean(Id z, const std::vector<T>& y, double clamp = 1e-7) {
    const auto& Z = value(z);
    if (y.size() != Z.numel()) throw UsageError("bce: label count mismatch");
    T loss = T(0);
    std::vector<T> sig(Z.numel());
    for (size_t i = 0; i < Z.numel(); ++i) {
      T s = T(1) / (T(1) + std::exp(-Z.data[i]));
      sig[i] = s;
      loss -= y[i] * std::log(std::max(s, T(clamp))) +
              (T(1) - y[i]) * std::log(std::max(T(1) - s, T(clamp)));
    }
    loss /= T(Z.numel());
    Tensor<T> out(1, 1);
    out.at(0, 0) = loss;
    return push_op(std::move(out), {z}, [z, y, clamp, sig](Graph& g, Id self) {
      T gscalar = g.nodes_[size_t(self)].grad.at(0, 0);
      const auto& Z2 = g.value(z);
      Tensor<T> gz = Tensor<T>::zeros_like(Z2);
      for (size_t i = 0; i < Z2.numel(); ++i) {
        T s = sig[i];
        // Derivative of the clamped forward: each term contributes only
        // where its log argument is above the clamp.
        T d = T(0);
        if (s > T(clamp)) d -= y[i] * (T(1) - s);
        if (T(1) - s > T(clamp)) d += (T(1) - y[i]) * s;
        gz.data[i] = gscalar * d / T(Z2.numel());
      }
      g.accumulate(z, gz);
    });
  }

  // sum(x .* w) with constant weights -> [1 x 1]. Readout used by tests.
  Id weighted_sum(Id x, const Tensor<T>& w) {
    const auto& X = value(x);
    if (!X.same_shape(w)) throw UsageError("weighted_sum: shape mismatch");
    T s = T(0);
    for (size_t i = 0; i < X.numel(); ++i) s += X.data[i] * w.data[i];
    Tensor<T> out(1, 1);
    out.at(0, 0) = s;
    return push_op(std::move(out), {x}, [x, w](Graph& g, Id self) {
      T gscalar = g.nodes_[size_t(self)].grad.at(0, 0);
      Tensor<T> gx = w;
      for (auto& v : gx.data) v *= gscalar;
      g.accumulate(x, gx);
    });
  }

  // ---- backward ----

  void backward(Id loss) {
    auto& L = nodes_[size_t(loss)];
    if (L.value.numel() != 1) throw UsageError("backward: loss must be scalar");
    for (auto& n : nodes_) {
      n.grad = Tensor<T>::zeros_like(n.value);
      n.grad_seen = false;
    }
    L.grad.data[0] = T(1);
    L.grad_seen = true;
    for (Id i = Id(nodes_.size()) - 1; i >= 0; --i) {
      auto& n = nodes_[size_t(i)];
      if (n.back && n.grad_seen && n.needs_grad) n.back(*this, i);
    }
  }

private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    bool needs_grad = false;  // true if any ancestor requires grad
    bool grad_seen = false;
    std::function<void(Graph&, Id)> back;
    std::string name;
  };

  bool node_needs_grad(Id id) const { return nodes_[size_t(id)].needs_grad; }

  void accumulate(Id id, const Tensor<T>& g) {
    auto& n = nodes_[size_t(id)];
    if (!n.needs_grad) return;
    for (size_t i = 0; i < g.data.size(); ++i) n.grad.data[i] += g.data[i];
    n.grad_seen = true;
  }

  Id push(Tensor<T> v, bool requires_grad, std::string name) {
    if (check_finite_ && !v.all_finite()) {
      throw TrainError("non-finite tensor at node '" + name + "'");
    }
    Node n;
    n.value = std::move(v);
    n.grad = Tensor<T>::zeros_like(n.value);
    n.requires_grad = requires_grad;
    n.needs_grad = requires_grad;
    n.name = std::move(name);
    nodes_.push_back(std::move(n));
    return Id(nodes_.size()) - 1;
  }

  Id push_op(Tensor<T> v, std::vector<Id> parents, std::function<void(Graph&, Id)> back) {
    if (check_finite_ && !v.all_finite()) throw TrainError("non-finite tensor produced by op");
    Node n;
    n.value = std::move(v);
    n.grad = Tensor<T>::zeros_like(n.value);
    bool needs = false;
    for (Id p : parents) needs = needs || nodes_[size_t(p)].needs_grad;
    n.needs_grad = needs;
    if (needs) n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return Id(nodes_.size()) - 1;
  }

  static void matmul_into(Tensor<T>& out, const Tensor<T>& A, const Tensor<T>& B,
                          bool transpose_a, bool transpose_b) {
    int m = transpose_a ? A.cols() : A.rows();
    int kk = transpose_a ? A.rows() : A.cols();
    int n = transpose_b ? B.rows() : B.cols();
    for (int i = 0; i < m; ++i) {
      for (int k = 0; k < kk; ++k) {
        T a = transpose_a ? A.at(k, i) : A.at(i, k);
        if (a == T(0)) continue;
        for (int j = 0; j < n; ++j) {
          T b = transpose_b ? B.at(j, k) : B.at(k, j);
          out.at(i, j) += a * b;
        }
      }
    }
  }

  std::vector<Node> nodes_;
  bool check_finite_ = false;
};

}  // namespace ssmmt
