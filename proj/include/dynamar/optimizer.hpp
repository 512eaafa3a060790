#pragma once

#include "dynamar/encoder.hpp"

#include <vector>

namespace dynamar {

/// Adam with bias correction. Weight decay (decoupled) defaults to 0.
class AdamOptimizer {
public:
    explicit AdamOptimizer(std::vector<Parameter*> params, double lr, double beta1 = 0.9, double beta2 = 0.999,
                           double eps = 1e-8, double weight_decay = 0.0);

    /// Apply one update from the parameters' current gradient buffers.
    void step();

    long steps_taken() const { return t_; }

private:
    struct Slot {
        Tensor m, v;
    };
    std::vector<Parameter*> params_;
    std::vector<Slot> slots_;
    double lr_, beta1_, beta2_, eps_, weight_decay_;
    long t_ = 0;
};

} // namespace dynamar
