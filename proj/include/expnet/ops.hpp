#pragma once

#include "expnet/tensor.hpp"

#include <vector>

// Differentiable primitives. Spatial tensors are laid out [H, W, C] row-major
// (channels fastest); token matrices are [rows, features]. Every function is
// instantiated for float and double.

namespace expnet {

// ---- elementwise and reductions --------------------------------------------

template <typename Scalar> Tensor<Scalar> add(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar> Tensor<Scalar> sub(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
template <typename Scalar> Tensor<Scalar> mul(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
/// alpha * x + beta
template <typename Scalar> Tensor<Scalar> affine(const Tensor<Scalar>& x, Scalar alpha, Scalar beta);
template <typename Scalar> Tensor<Scalar> sum(const Tensor<Scalar>& x);
template <typename Scalar> Tensor<Scalar> mean(const Tensor<Scalar>& x);
/// Sum of an arbitrary number of same-shaped tensors.
template <typename Scalar> Tensor<Scalar> add_n(const std::vector<Tensor<Scalar>>& xs);
template <typename Scalar> Tensor<Scalar> reshape(const Tensor<Scalar>& x, Shape shape);

template <typename Scalar> Tensor<Scalar> relu(const Tensor<Scalar>& x);
template <typename Scalar> Tensor<Scalar> sigmoid(const Tensor<Scalar>& x);
/// a * sin(w * x), with `a` and `w` single-element tensors.
template <typename Scalar>
Tensor<Scalar> sine(const Tensor<Scalar>& x, const Tensor<Scalar>& amplitude, const Tensor<Scalar>& frequency);

// ---- matrices and tokens ---------------------------------------------------

template <typename Scalar> Tensor<Scalar> matmul(const Tensor<Scalar>& a, const Tensor<Scalar>& b);
/// x[n,in] * w[in,out] + b[out]
template <typename Scalar>
Tensor<Scalar> linear(const Tensor<Scalar>& x, const Tensor<Scalar>& weight, const Tensor<Scalar>& bias);
template <typename Scalar> Tensor<Scalar> transpose(const Tensor<Scalar>& x);
/// Softmax along `axis`; negative axes count from the end.
template <typename Scalar> Tensor<Scalar> softmax(const Tensor<Scalar>& x, Index axis = -1);
/// Normalize each row of x[n,d] to zero mean and unit variance, then scale and shift.
template <typename Scalar>
Tensor<Scalar> layer_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma, const Tensor<Scalar>& beta,
                          Scalar eps = Scalar(1e-5));
/// -log softmax(logits)[label] for a 1-D logit vector.
template <typename Scalar> Tensor<Scalar> cross_entropy(const Tensor<Scalar>& logits, Index label);

template <typename Scalar> Tensor<Scalar> slice_cols(const Tensor<Scalar>& x, Index start, Index count);
template <typename Scalar> Tensor<Scalar> concat_cols(const std::vector<Tensor<Scalar>>& xs);
template <typename Scalar> Tensor<Scalar> gather_rows(const Tensor<Scalar>& x, const std::vector<Index>& rows);
/// Rows of x placed at `rows` of an [n_rows, d] zero matrix.
template <typename Scalar>
Tensor<Scalar> scatter_rows(const Tensor<Scalar>& x, const std::vector<Index>& rows, Index n_rows);
/// Row i of x[n,d] multiplied by s[i].
template <typename Scalar> Tensor<Scalar> scale_rows(const Tensor<Scalar>& x, const Tensor<Scalar>& s);
/// Column means of x[n,d] -> [d].
template <typename Scalar> Tensor<Scalar> mean_rows(const Tensor<Scalar>& x);

// ---- spatial ---------------------------------------------------------------

/// x[H,W,Cin] conv w[kh,kw,Cin,Cout] + b[Cout].
template <typename Scalar>
Tensor<Scalar> conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& weight, const Tensor<Scalar>& bias,
                      Index stride = 1, Index padding = 0);

/// Convolution whose taps sample x bilinearly at positions shifted by
/// `offsets[Ho,Wo,2*kh*kw]` (channel 2t is the row shift of tap t, 2t+1 the
/// column shift). Samples outside the input read as zero.
template <typename Scalar>
Tensor<Scalar> deformable_conv2d(const Tensor<Scalar>& x, const Tensor<Scalar>& offsets,
                                 const Tensor<Scalar>& weight, const Tensor<Scalar>& bias, Index stride = 1,
                                 Index padding = 0);

/// Gradient goes to the first maximum in row-major window order.
template <typename Scalar> Tensor<Scalar> max_pool2d(const Tensor<Scalar>& x, Index kernel, Index stride);
template <typename Scalar> Tensor<Scalar> patch_average_pool(const Tensor<Scalar>& x, Index k);
/// Mean over every non-channel position -> [C].
template <typename Scalar> Tensor<Scalar> global_average_pool(const Tensor<Scalar>& x);
/// Per-channel normalization over spatial positions with learned scale/shift.
template <typename Scalar>
Tensor<Scalar> instance_norm(const Tensor<Scalar>& x, const Tensor<Scalar>& gamma, const Tensor<Scalar>& beta,
                             Scalar eps = Scalar(1e-5));
/// [H,W,C] -> [H,W,2] holding the channel mean and channel max.
template <typename Scalar> Tensor<Scalar> channel_stats(const Tensor<Scalar>& x);

/// [H,W,C] -> [p*p, k*k*C]; row r is the flattened k x k tile at grid
/// position (r / p, r % p).
template <typename Scalar> Tensor<Scalar> patch_tokens(const Tensor<Scalar>& x, Index k);
/// Inverse of patch_tokens.
template <typename Scalar>
Tensor<Scalar> tokens_to_image(const Tensor<Scalar>& tokens, Index p, Index k, Index channels);

}  // namespace expnet
