#pragma once

#include <functional>
#include <vector>

#include "ctml/geometry.hpp"
#include "ctml/projector.hpp"
#include "ctml/tensor.hpp"

namespace ctml {

enum class PadMode { zero, reflect };

// Reverse-mode tape over dense tensors. Nodes are indices into the tape;
// operations record a backward rule that multiplies the upstream gradient by
// the exact local adjoint. A tape lives for one forward/backward pass and is
// rebuilt per training step. All kernels accumulate in a fixed order, so
// identical inputs give bitwise-identical values and gradients regardless of
// thread count.
template <typename T>
class Tape {
  public:
    using Node = int;

    Node leaf(Tensor<T> value, bool requires_grad);

    // convolution, odd square kernel, cross-correlation semantics,
    // weight shape (out_c, in_c, k, k), bias shape (1, out_c, 1, 1)
    Node conv2d(Node x, Node weight, Node bias, int stride = 1, PadMode pad = PadMode::zero,
                int pad_size = -1); // -1: same-size (k-1)/2

    Node relu(Node x);
    Node add(Node a, Node b);
    Node concat_channels(Node a, Node b);
    Node slice_channels(Node x, int c0, int count);
    Node downsample2(Node x); // 2x2 average pooling
    Node upsample2(Node x);   // nearest neighbor
    Node scale_shift(Node x, double a, double b);

    // rows where the mask keeps the view come from `measured`, missing rows
    // from `fill` (the Eq.-style masked sinogram blend); h indexes views
    Node row_blend(Node fill, Node measured, const ViewMask& mask);

    // differentiable projector layers; height/width must match the geometry,
    // applied per batch-channel slice in double precision
    Node fp_layer(Node img, const ScanGeometry& geom);
    Node fbp_layer(Node sino, const ScanGeometry& geom, Window window);

    Node mse(Node a, Node b); // mean over all elements of (a-b)^2
    Node sum(Node x);         // scalar sum of all elements

    // reverse sweep from a scalar; gradients are zeroed first, so repeated
    // calls are idempotent
    void backward(Node loss);

    const Tensor<T>& value(Node id) const { return nodes_[check(id)].value; }
    const Tensor<T>& grad(Node id) const { return nodes_[check(id)].grad; }
    bool requires_grad(Node id) const { return nodes_[check(id)].requires_grad; }
    int size() const { return static_cast<int>(nodes_.size()); }

  private:
    struct NodeData {
        Tensor<T> value;
        Tensor<T> grad; // allocated by backward()
        bool requires_grad = false;
    };
    struct OpRecord {
        std::vector<Node> inputs;
        Node output;
        std::function<void(Tape&)> backprop;
    };

    int check(Node id) const;
    Node push(Tensor<T> value, bool requires_grad, std::vector<Node> inputs,
              std::function<void(Tape&)> backprop);
    Tensor<T>& grad_ref(Node id) { return nodes_[id].grad; }

    std::vector<NodeData> nodes_;
    std::vector<OpRecord> ops_;
};

extern template class Tape<float>;
extern template class Tape<double>;

} // namespace ctml
