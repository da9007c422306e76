#pragma once

#include <cstdint>
#include <vector>

#include "cmda/models.hpp"
#include "cmda/tensor.hpp"

namespace cmda {

// Adam accumulators aligned index-for-index with a model's parameter
// manifest.
template <typename T>
struct OptimStateT {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t t = 0;
  std::vector<Tensor<T>> m;
  std::vector<Tensor<T>> v;
};

using OptimState = OptimStateT<float>;

template <typename T>
OptimStateT<T> init_optim(const ModelParamsT<T>& params, double beta1,
                          double beta2, double eps = 1e-8);

// Standard Adam with bias correction; increments state.t.
template <typename T>
void adam_step(ModelParamsT<T>& params, const std::vector<Tensor<T>>& grads,
               OptimStateT<T>& state, double lr);

extern template struct OptimStateT<float>;
extern template struct OptimStateT<double>;

}  // namespace cmda
