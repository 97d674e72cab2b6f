#pragma once

#include <optional>

#include "lowpass/nn.hpp"

namespace fixture {

using namespace lowpass;

// Random 3x3 kernels scaled so each conv has operator norm c, estimated with
// 200 power iterations.
inline ResidualBlock normalized_block(ResidualBlockSpec spec, std::size_t resolution, Rng& rng,
                                      FilterKind filter = FilterKind::ideal) {
    ResidualBlock b(spec, resolution, filter, Padding::same_circular);
    b.conv1 = Tensor::randn(b.conv1.shape(), rng);
    b.conv2 = Tensor::randn(b.conv2.shape(), rng);
    if (spec.coefficient) {
        const double c = *spec.coefficient;
        const Shape mid{1, spec.out_channels, b.out_resolution(), b.out_resolution()};
        b.conv1 *= c / conv_operator_norm(b.conv1, b.input_shape(), Padding::same_circular, 200);
        b.conv2 *= c / conv_operator_norm(b.conv2, mid, Padding::same_circular, 200);
    }
    return b;
}

}  // namespace fixture
