#include "dynamar/head.hpp"

#include "dynamar/error.hpp"

namespace dynamar {

Head::Head(Kind kind_, int dim, int num_classes, std::uint64_t seed) : kind(kind_) {
    if (dim < 1) fail(Errc::InvalidConfig, "head dim must be positive");
    if (kind == Kind::Classification) {
        if (num_classes < 2) fail(Errc::InvalidConfig, "classification head needs >= 2 classes");
        out_dim = num_classes;
    } else {
        out_dim = 1;
    }
    weight = Parameter("head.weight", dim, out_dim);
    bias = Parameter("head.bias", 1, out_dim);
    Rng rng(seed);
    for (double& x : weight.value.v) x = rand_normal(rng, 0.0, 0.02);
}

} // namespace dynamar
