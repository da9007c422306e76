#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "cmda/tensor.hpp"
#include "cmda/volume.hpp"

namespace cmda {

// Forces single-threaded BLAS so accumulation order is fixed. Called lazily
// by the tape; safe to call more than once.
void pin_blas_threads();

// Overrides the pinned count. Values above 1 trade bit-reproducibility for
// speed; results may differ from single-threaded runs.
void set_blas_threads(int n);

// Reverse-mode tape over dense tensors. One tape per training step: register
// leaves with input(), build the graph, call backward() on a scalar node,
// then read leaf gradients with grad(). T is float in training and double in
// the finite-difference tests.
template <typename T>
class Tape {
 public:
  Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  int input(Tensor<T> v);

  const Tensor<T>& val(int id) const { return nodes_[static_cast<std::size_t>(id)].val; }
  const Tensor<T>& grad(int id) const { return nodes_[static_cast<std::size_t>(id)].grad; }
  int size() const { return static_cast<int>(nodes_.size()); }

  // x [N,C,H,W], w [F,C,KH,KW], b [F]
  int conv2d(int x, int w, int b, int stride, int pad);
  // x [N,C,H,W], w [C,F,KH,KW], b [F]; out (H-1)*stride - 2*pad + KH
  int tconv2d(int x, int w, int b, int stride, int pad);
  // x [C,D,H,W], w [F,C,KD,KH,KW], b [F]
  int conv3d(int x, int w, int b, int stride, int pad);
  // x [C,D,H,W], w [C,F,KD,KH,KW], b [F]
  int tconv3d(int x, int w, int b, int stride, int pad);

  // Normalizes each (sample, channel) slice over its spatial extent,
  // eps 1e-5, no affine term. 4D tensors: [N,C,H,W] treats H*W as spatial;
  // [C,D,H,W] is handled by norm3d treating D*H*W as spatial.
  int instance_norm2d(int x);
  int instance_norm3d(int x);

  int relu(int x);
  int lrelu(int x, T slope);
  int tanh_act(int x);
  int add(int a, int b);
  // concatenates along the channel axis (axis 1 for [N,C,H,W], axis 0 for
  // [C,D,H,W])
  int concat2d(int a, int b);
  int concat3d(int a, int b);

  // mean((scores - target)^2)
  int lsgan_loss(int scores, T target);
  // mean(|a - b|)
  int l1_loss(int a, int b);
  // (1 - mean soft Dice over classes 1..C-1) + class-balanced cross-entropy;
  // every class present in the labels contributes equally to the CE term, so
  // tiny structures are not drowned out by background voxels. Logits
  // [C,D,H,W] against a label grid of the same spatial shape.
  int dice_ce_loss(int logits, const LabelVolume& labels);
  // weighted sum of scalar nodes
  int weighted_sum(const std::vector<std::pair<T, int>>& terms);

  void backward(int loss);

 private:
  struct Node {
    Tensor<T> val;
    Tensor<T> grad;
    std::function<void()> back;
  };

  int push(Tensor<T> val, std::function<void()> back);
  int norm_impl(int x, int groups, std::size_t spatial);
  int concat_impl(int a, int b, int axis);
  Tensor<T>& mutable_grad(int id) { return nodes_[static_cast<std::size_t>(id)].grad; }

  std::vector<Node> nodes_;
  std::vector<T> scratch_;   // im2col workspace, forward
  std::vector<T> bscratch_;  // im2col workspace, backward
};

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace cmda
