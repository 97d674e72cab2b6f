#pragma once

#include <string_view>

#include "lowpass/tensor.hpp"

namespace lowpass {

/// Boundary handling for odd "same" convolutions.
enum class Padding { same_circular, same_zero };

std::string_view to_string(Padding p);
Padding padding_from_string(std::string_view s);

/// Cross-correlation of x[B,Cin,H,W] with k[Cout,Cin,kh,kw]. With stride s the
/// output is [B,Cout,ceil(H/s),ceil(W/s)] and sample (i,j) equals the stride-1
/// output at (s*i, s*j).
Tensor conv2d(const Tensor& x, const Tensor& k, std::size_t stride = 1, Padding padding = Padding::same_circular);

/// Adjoint of conv2d with respect to its input (the transposed convolution).
Tensor conv2d_adjoint(const Tensor& grad_out, const Tensor& k, const Shape& input_shape, std::size_t stride = 1,
                      Padding padding = Padding::same_circular);

/// Gradient of <grad_out, conv2d(x, k)> with respect to k.
Tensor conv2d_kernel_grad(const Tensor& grad_out, const Tensor& x, const Shape& kernel_shape, std::size_t stride = 1,
                          Padding padding = Padding::same_circular);

}  // namespace lowpass
