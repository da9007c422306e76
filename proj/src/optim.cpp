#include "cmda/optim.hpp"

#include <cmath>

#include "cmda/error.hpp"

namespace cmda {

template <typename T>
OptimStateT<T> init_optim(const ModelParamsT<T>& params, double beta1,
                          double beta2, double eps) {
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0))
    throw ValidationError("adam: betas must lie in [0,1)");
  if (!(eps > 0.0)) throw ValidationError("adam: eps must be positive");
  OptimStateT<T> st;
  st.beta1 = beta1;
  st.beta2 = beta2;
  st.eps = eps;
  st.m.reserve(params.tensors.size());
  st.v.reserve(params.tensors.size());
  for (const auto& [name, t] : params.tensors) {
    st.m.emplace_back(t.shape());
    st.v.emplace_back(t.shape());
  }
  return st;
}

template <typename T>
void adam_step(ModelParamsT<T>& params, const std::vector<Tensor<T>>& grads,
               OptimStateT<T>& state, double lr) {
  const std::size_t k = params.tensors.size();
  if (grads.size() != k || state.m.size() != k || state.v.size() != k)
    throw ValidationError("adam: parameter/gradient/state count mismatch");
  for (std::size_t i = 0; i < k; ++i) {
    if (!params.tensors[i].second.same_shape(grads[i]) ||
        !params.tensors[i].second.same_shape(state.m[i]))
      throw ValidationError("adam: shape mismatch at " +
                            params.tensors[i].first);
  }
  state.t += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < k; ++i) {
    T* p = params.tensors[i].second.data();
    const T* g = grads[i].data();
    T* m = state.m[i].data();
    T* v = state.v[i].data();
    const std::size_t n = grads[i].numel();
    for (std::size_t j = 0; j < n; ++j) {
      const double gj = static_cast<double>(g[j]);
      const double mj =
          state.beta1 * static_cast<double>(m[j]) + (1.0 - state.beta1) * gj;
      const double vj = state.beta2 * static_cast<double>(v[j]) +
                        (1.0 - state.beta2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double mh = mj / bc1;
      const double vh = vj / bc2;
      p[j] = static_cast<T>(static_cast<double>(p[j]) -
                            lr * mh / (std::sqrt(vh) + state.eps));
    }
  }
}

template struct OptimStateT<float>;
template struct OptimStateT<double>;

template OptimStateT<float> init_optim<float>(const ModelParamsT<float>&,
                                              double, double, double);
template OptimStateT<double> init_optim<double>(const ModelParamsT<double>&,
                                               double, double, double);
template void adam_step<float>(ModelParamsT<float>&,
                               const std::vector<Tensor<float>>&,
                               OptimStateT<float>&, double);
template void adam_step<double>(ModelParamsT<double>&,
                                const std::vector<Tensor<double>>&,
                                OptimStateT<double>&, double);

}  // namespace cmda
