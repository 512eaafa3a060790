#pragma once

#include "dynamar/encoder.hpp"

#include <cstdint>
#include <vector>

namespace dynamar {

/// Task-specific predictor head: a single linear map from the encoder
/// representation to class logits or a scalar.
struct Head {
    enum class Kind { Classification, Regression };

    Kind kind = Kind::Classification;
    int out_dim = 2;
    Parameter weight; // [dim, out]
    Parameter bias;   // [1, out]

    Head() = default;
    Head(Kind kind, int dim, int num_classes, std::uint64_t seed);

    std::vector<Parameter*> parameters() { return {&weight, &bias}; }
    std::vector<const Parameter*> parameters() const { return {&weight, &bias}; }
    void zero_grads() {
        weight.grad.zero();
        bias.grad.zero();
    }
};

} // namespace dynamar
