#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cmda/autodiff.hpp"
#include "cmda/tensor.hpp"

namespace cmda {

// Named parameter set with an architecture tag and the integer configuration
// needed to rebuild the forward graph. Tensor order is the manifest order and
// is what the optimizer and checkpoint formats key on.
template <typename T>
struct ModelParamsT {
  std::string arch;
  std::map<std::string, int> cfg;
  std::uint64_t init_seed = 0;
  std::vector<std::pair<std::string, Tensor<T>>> tensors;

  Tensor<T>& find(const std::string& name);
  const Tensor<T>& find(const std::string& name) const;
  std::size_t param_count() const;

  template <typename U>
  ModelParamsT<U> cast() const {
    ModelParamsT<U> out;
    out.arch = arch;
    out.cfg = cfg;
    out.init_seed = init_seed;
    out.tensors.reserve(tensors.size());
    for (const auto& [name, t] : tensors)
      out.tensors.emplace_back(name, t.template cast<U>());
    return out;
  }
};

using ModelParams = ModelParamsT<float>;

extern template struct ModelParamsT<float>;
extern template struct ModelParamsT<double>;

// arch "resnet_gen": 7x7 stem, two stride-2 downsamples, n residual blocks,
// two stride-2 upsamples, 7x7 tanh head; single-channel in and out.
ModelParams build_resnet_generator(int base, int n_blocks, std::uint64_t seed);
// arch "unet_gen": stride-2 encoder, skip-concat decoder, tanh head.
ModelParams build_unet_generator(int base, int depth, std::uint64_t seed);
// arch "patchgan": n_down stride-2 conv layers then a stride-1 score conv.
ModelParams build_patchgan_discriminator(int width, int n_down,
                                         std::uint64_t seed);
// arch "unet3d": 3D U-Net over one volume, logits over n_classes.
ModelParams build_segmenter_3d(int base, int depth, int n_classes,
                               std::uint64_t seed);
// arch "identity_gen": parameter-free pass-through, used as a fixture.
ModelParams build_identity_generator();

// Forward graph for any architecture above. `ids` holds the tape node of
// every parameter tensor in manifest order; `out` is the output node.
struct BoundModel {
  std::vector<int> ids;
  int out = -1;
};

template <typename T>
BoundModel forward_model(Tape<T>& tape, const ModelParamsT<T>& params, int x);

// Copies the parameter gradients off the tape in manifest order.
template <typename T>
std::vector<Tensor<T>> collect_grads(const Tape<T>& tape,
                                     const BoundModel& bound);

}  // namespace cmda
