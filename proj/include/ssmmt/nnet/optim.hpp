#pragma once

#include <cmath>

#include "ssmmt/nnet/transformer.hpp"

namespace ssmmt {

template <typename T>
struct AdamStateT {
  ParamSetT<T> m;
  ParamSetT<T> v;
  int64_t t = 0;
};

using AdamState = AdamStateT<float>;

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Standard Adam with bias correction; parameters are visited in the map's
// lexicographic order, so updates are deterministic.
template <typename T>
void adam_step(ParamSetT<T>& params, const ParamSetT<T>& grads, AdamStateT<T>& state,
               const AdamHyper& hp) {
  state.t += 1;
  double bc1 = 1.0 - std::pow(hp.beta1, double(state.t));
  double bc2 = 1.0 - std::pow(hp.beta2, double(state.t));
  for (auto& [name, p] : params) {
    auto git = grads.find(name);
    if (git == grads.end()) continue;  // parameter not touched this step
    const auto& g = git->second;
    if (!g.same_shape(p)) throw UsageError("adam_step: grad shape mismatch for " + name);
    if (!g.all_finite()) throw TrainError("adam_step: non-finite gradient for " + name);
    auto& m = state.m.try_emplace(name, Tensor<T>::zeros_like(p)).first->second;
    auto& v = state.v.try_emplace(name, Tensor<T>::zeros_like(p)).first->second;
    for (size_t i = 0; i < p.data.size(); ++i) {
      double gi = double(g.data[i]);
      double mi = hp.beta1 * double(m.data[i]) + (1.0 - hp.beta1) * gi;
      double vi = hp.beta2 * double(v.data[i]) + (1.0 - hp.beta2) * gi * gi;
      m.data[i] = T(mi);
      v.data[i] = T(vi);
      double mhat = mi / bc1;
      double vhat = vi / bc2;
      p.data[i] = T(double(p.data[i]) - hp.lr * mhat / (std::sqrt(vhat) + hp.eps));
    }
  }
}

}  // namespace ssmmt
