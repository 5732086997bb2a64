#pragma once

#include <string>

#include "cyclevae/tensor.hpp"

namespace cyclevae {

// Differentiable tensor operations. Every op returns a fresh Tensor whose
// node records its parents and a backward function; gradients accumulate
// additively into parents that require them. Shapes are validated eagerly
// and mismatches raise ShapeError with both shapes in the message.

// Elementwise, shapes must match exactly.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

// Scalar-broadcast arithmetic.
Tensor scale(const Tensor& a, Real factor);
Tensor add_scalar(const Tensor& a, Real value);

// Elementwise nonlinearities. relu and abs use subgradient 0 at 0.
Tensor exp(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor square(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);

// Reduction over all elements to shape {1}.
Tensor sum(const Tensor& a);

// View with identical element count, data copied.
Tensor reshape(const Tensor& a, Shape new_shape);

// Concatenate two rank-2 tensors [n, ca] and [n, cb] into [n, ca + cb].
Tensor concat_cols(const Tensor& a, const Tensor& b);

// y = x . W^T + b for x [n, in], W [out, in], b [out] -> y [n, out].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

// 2-D convolution, NCHW. kernel [cout, cin, k, k], square kernel and
// stride/padding applied symmetrically. out = floor((h + 2p - k) / s) + 1.
Tensor conv2d(const Tensor& x, const Tensor& kernel, int stride, int padding);

// Transposed convolution, adjoint geometry of conv2d. kernel layout
// [cin, cout, k, k]; out = (h - 1) * s - 2p + k + output_padding with
// output_padding in [0, stride - 1].
Tensor conv2d_transpose(const Tensor& x, const Tensor& kernel, int stride,
                        int padding, int output_padding);

// Per-sample, per-channel normalization over the spatial extent:
// y = (x - mean) / sqrt(var + eps), no learned affine terms.
Tensor instance_norm(const Tensor& x, Real eps = 1e-5);

// Adds bias[c] to every spatial position of channel c, NCHW.
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);

// Mean over the batch of -log softmax(logits)[label]. logits [n, classes],
// labels are row-major class indices, one per row.
Tensor softmax_cross_entropy(const Tensor& logits, const std::vector<int>& labels);

namespace detail {

// Dense row-major matrix kernels used by linear and the conv lowering.
// All three accumulate into c (callers zero-fill first when needed) and
// parallelize over rows of c with disjoint writes, so results do not
// depend on the thread count.
void matmul_acc(const Real* a, const Real* b, Real* c, int m, int k, int n);      // c += a.b
void matmul_bt_acc(const Real* a, const Real* b, Real* c, int m, int k, int n);   // c += a.b^T, b is [n, k]
void matmul_at_acc(const Real* a, const Real* b, Real* c, int m, int k, int n);   // c += a^T.b, a is [k, m]

// Lowers conv patches to a [cin*k*k, oh*ow] column matrix and scatters back.
void im2col(const Real* img, int c, int h, int w, int k, int stride, int padding,
            int oh, int ow, Real* cols);
void col2im_acc(const Real* cols, int c, int h, int w, int k, int stride,
                int padding, int oh, int ow, Real* img);

int conv_out_extent(int in, int k, int stride, int padding);

// Test hook: scales the backward gradient contribution of every op whose
// name matches by the given factor. Empty name disables the hook.
void set_backward_fault(const std::string& op_name, Real factor);
Real backward_fault_factor(const char* op_name);

}  // namespace detail

}  // namespace cyclevae
