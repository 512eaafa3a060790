#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dynamar/encoder.hpp"
#include "dynamar/error.hpp"
#include "dynamar/finetune.hpp"
#include "dynamar/head.hpp"

#include "test_util.hpp"

#include <cmath>
#include <filesystem>

using namespace dynamar;
using testutil::make_input;
using testutil::tiny_config;

namespace {

Errc thrown_code(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    FAIL("expected an Error");
    return Errc::IoError;
}

// Closed-form parameter count for the tied-head architecture: per layer
// 4 attention weights + 3 attention biases (no key bias), ffn 8d^2+5d,
// two layer norms.
std::size_t expected_param_count(const ModelConfig& c) {
    const std::size_t d = static_cast<std::size_t>(c.dim);
    const std::size_t per_layer = 12 * d * d + 12 * d;
    return static_cast<std::size_t>(c.vocab_size) * d  // token embeddings
           + static_cast<std::size_t>(c.max_len) * d   // positional embeddings
           + static_cast<std::size_t>(c.layers) * per_layer
           + 2 * d                                     // final layer norm
           + static_cast<std::size_t>(c.vocab_size);   // mlm bias
}

} // namespace

TEST_CASE("init_model is deterministic per seed") {
    const ModelConfig cfg = tiny_config();
    const Model a(cfg, 42);
    const Model b(cfg, 42);
    const Model c(cfg, 43);
    const auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
    bool all_equal = true, any_diff_seed = false;
    for (std::size_t i = 0; i < pa.size(); ++i) {
        all_equal = all_equal && pa[i]->value.v == pb[i]->value.v;
        any_diff_seed = any_diff_seed || pa[i]->value.v != pc[i]->value.v;
    }
    CHECK(all_equal);
    CHECK(any_diff_seed);
}

TEST_CASE("init_model rejects invalid configs") {
    ModelConfig cfg = tiny_config();
    cfg.dim = 6;
    cfg.heads = 4;
    CHECK(thrown_code([&] { Model m(cfg, 0); }) == Errc::InvalidConfig);

    ModelConfig bad_dropout = tiny_config();
    bad_dropout.dropout = 1.0;
    CHECK(thrown_code([&] { Model m(bad_dropout, 0); }) == Errc::InvalidConfig);

    ModelConfig short_seq = tiny_config();
    short_seq.max_len = 4;
    CHECK(thrown_code([&] { Model m(short_seq, 0); }) == Errc::InvalidConfig);
}

TEST_CASE("parameter count matches the closed form (desk config)") {
    ModelConfig desk;
    desk.layers = 4;
    desk.dim = 128;
    desk.heads = 4;
    desk.max_len = 128;
    desk.vocab_size = 2048;
    const Model model(desk, 0);
    CHECK(model.parameter_count() == expected_param_count(desk));

    const ModelConfig tiny = tiny_config();
    const Model small(tiny, 0);
    CHECK(small.parameter_count() == expected_param_count(tiny));
}

TEST_CASE("eval-mode forward is deterministic") {
    const ModelConfig cfg = tiny_config();
    const Model model(cfg, 7);
    Rng rng(1);
    const std::vector<EncodedInput> batch = {make_input(cfg.vocab_size, cfg.max_len, 6, rng)};
    const HiddenStates h1 = forward(model, batch);
    const HiddenStates h2 = forward(model, batch);
    CHECK(h1.states.v == h2.states.v);
}

TEST_CASE("PAD positions cannot influence non-PAD activations") {
    const ModelConfig cfg = tiny_config();
    const Model model(cfg, 7);
    Rng rng(2);
    std::vector<EncodedInput> batch = {make_input(cfg.vocab_size, cfg.max_len, 5, rng),
                                       make_input(cfg.vocab_size, cfg.max_len, 9, rng)};
    const HiddenStates base = forward(model, batch);

    // Overwrite ids in the padded region with arbitrary tokens: the
    // attended window must be bit-identical.
    std::vector<EncodedInput> mutated = batch;
    for (auto& in : mutated)
        for (std::size_t p = static_cast<std::size_t>(in.attention_length); p < in.ids.size(); ++p)
            in.ids[p] = static_cast<TokenId>(kNumSpecials + rand_below(rng, 10));
    const HiddenStates other = forward(model, mutated);

    for (int b = 0; b < base.batch; ++b)
        for (int p = 0; p < base.attention_length[static_cast<std::size_t>(b)]; ++p)
            for (int c = 0; c < base.dim; ++c) CHECK(base.row(b, p)[c] == other.row(b, p)[c]);
}

TEST_CASE("masked softmax rows sum to one and zero out masked columns") {
    ag::Graph g;
    Tensor scores(5, 8);
    Rng rng(3);
    for (double& x : scores.v) x = rand_normal(rng);
    ag::Node* in = g.leaf(scores, false);
    ag::Node* probs = g.masked_softmax_rows(in, 6);
    for (int r = 0; r < 5; ++r) {
        double sum = 0.0;
        for (int c = 0; c < 8; ++c) {
            sum += probs->val.at(r, c);
            if (c >= 6) CHECK(probs->val.at(r, c) == 0.0);
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
}

TEST_CASE("extract_representation") {
    HiddenStates h;
    h.batch = 1;
    h.seq = 4;
    h.dim = 2;
    h.states = Tensor(4, 2);
    h.states.at(0, 0) = 1.0;
    h.states.at(0, 1) = 1.0;
    h.states.at(1, 0) = 3.0;
    h.states.at(1, 1) = 3.0;
    h.attention_length = {2};
    h.mask_index = {std::optional<int>(1)};

    const Tensor avg = extract_representation(h, ReprKind::MeanPool);
    CHECK(avg.at(0, 0) == doctest::Approx(2.0));
    CHECK(avg.at(0, 1) == doctest::Approx(2.0));

    const Tensor cls = extract_representation(h, ReprKind::Cls);
    CHECK(cls.at(0, 0) == doctest::Approx(1.0));

    const Tensor mask = extract_representation(h, ReprKind::Mask);
    CHECK(mask.at(0, 0) == doctest::Approx(3.0));

    HiddenStates no_mask = h;
    no_mask.mask_index = {std::nullopt};
    CHECK(thrown_code([&] { extract_representation(no_mask, ReprKind::Mask); }) == Errc::MissingMaskIndex);

    HiddenStates singleton = h;
    singleton.attention_length = {1};
    const Tensor single_avg = extract_representation(singleton, ReprKind::MeanPool);
    CHECK(single_avg.at(0, 0) == doctest::Approx(1.0));
}

TEST_CASE("mlm_mask near-zero rate leaves the batch intact") {
    Rng rng(4);
    const std::vector<EncodedInput> batch = {make_input(32, 16, 8, rng)};
    Rng mask_rng(5);
    const MlmBatch out = mlm_mask(batch, mask_rng, 1e-12, 32);
    CHECK(out.targets.empty());
    CHECK(out.corrupted[0].ids == batch[0].ids);
}

TEST_CASE("mlm_mask never selects special positions") {
    Rng rng(6);
    const std::vector<EncodedInput> batch = {make_input(32, 16, 8, rng, /*with_mask=*/true)};
    Rng mask_rng(7);
    for (int trial = 0; trial < 10000; ++trial) {
        const MlmBatch out = mlm_mask(batch, mask_rng, 0.4, 32);
        for (const auto& t : out.targets) {
            CHECK(batch[0].ids[static_cast<std::size_t>(t.position)] >= kNumSpecials);
            CHECK(t.original_id >= kNumSpecials);
        }
    }
}

TEST_CASE("mlm_mask selection frequency approximates the mask rate") {
    Rng rng(8);
    const int n_tokens = 10;
    std::vector<EncodedInput> batch;
    for (int i = 0; i < 50; ++i) batch.push_back(make_input(64, 16, n_tokens, rng));
    const double rate = 0.15;
    Rng mask_rng(9);
    long selected = 0;
    long positions = 0;
    for (int rep = 0; rep < 200; ++rep) {
        const MlmBatch out = mlm_mask(batch, mask_rng, rate, 64);
        selected += static_cast<long>(out.targets.size());
        positions += 50L * n_tokens;
    }
    const double expected = rate * static_cast<double>(positions);
    const double sigma = std::sqrt(static_cast<double>(positions) * rate * (1.0 - rate));
    CHECK(std::abs(static_cast<double>(selected) - expected) <= 3.0 * sigma);
    CHECK(thrown_code([&] { mlm_mask(batch, mask_rng, 0.0, 64); }) == Errc::InvalidParams);
}

TEST_CASE("mlm loss with all-zero parameters equals ln(vocab)") {
    const ModelConfig cfg = tiny_config();
    Model model(cfg, 0);
    for (Parameter* p : model.parameters()) p->value.zero();
    // LN gains zeroed too: every position produces the zero vector, so the
    // tied logits are uniform zeros.
    Rng rng(10);
    const std::vector<EncodedInput> batch = {make_input(cfg.vocab_size, cfg.max_len, 6, rng)};
    const std::vector<MlmTarget> targets = {{0, 2, batch[0].ids[2]}};
    const double loss = mlm_loss_and_grads(model, batch, targets, /*train_mode=*/false);
    CHECK(loss == doctest::Approx(std::log(static_cast<double>(cfg.vocab_size))).epsilon(1e-9));
    CHECK(thrown_code([&] { mlm_loss_and_grads(model, batch, {}); }) == Errc::EmptyTargets);
}

TEST_CASE("regression head predicting the target exactly has zero loss and zero head gradients") {
    const ModelConfig cfg = tiny_config();
    Model model(cfg, 11);
    Head head(Head::Kind::Regression, cfg.dim, 1, 12);
    head.weight.value.zero();
    head.bias.value.zero();
    Rng rng(13);
    const std::vector<EncodedInput> batch = {make_input(cfg.vocab_size, cfg.max_len, 5, rng, true)};
    const double loss = regression_loss_and_grads(model, head, ReprKind::Mask, batch, {0.0}, false);
    CHECK(loss == doctest::Approx(0.0));
    for (double g : head.weight.grad.v) CHECK(g == doctest::Approx(0.0));
    CHECK(head.bias.grad.v[0] == doctest::Approx(0.0));
}

TEST_CASE("grad_check on a linear-MSE toy head is exact to rounding") {
    Head head(Head::Kind::Regression, 8, 1, 21);
    Tensor features(4, 8);
    Rng rng(22);
    for (double& x : features.v) x = rand_normal(rng);
    const std::vector<double> targets = {0.3, -0.7, 1.1, 0.0};

    auto loss_fn = [&]() {
        head.zero_grads();
        ag::Graph g;
        ag::Node* x = g.leaf(features, false);
        ag::Node* w = g.leaf(head.weight.value, true);
        ag::Node* b = g.leaf(head.bias.value, true);
        ag::Node* pred = g.add_row_broadcast(g.matmul(x, w), b);
        ag::Node* loss = g.mse_loss(pred, targets);
        g.backward(loss);
        if (w->grad_alloc) axpy(1.0, w->grad, head.weight.grad);
        if (b->grad_alloc) axpy(1.0, b->grad, head.bias.grad);
        return loss->val.at(0, 0);
    };

    Rng check_rng(23);
    const auto result = grad_check(head.parameters(), loss_fn, 1e-5, check_rng);
    CHECK(result.checked >= 9);
    CHECK(result.max_rel_error <= 1e-7);
}

TEST_CASE("grad_check rejects epsilon <= 0") {
    Head head(Head::Kind::Regression, 4, 1, 0);
    Rng rng(1);
    CHECK(thrown_code([&] { grad_check(head.parameters(), [] { return 0.0; }, 0.0, rng); }) == Errc::InvalidParams);
}

TEST_CASE("analytic gradients match central finite differences on the tiny encoder") {
    // 2 layers, dim 16, 2 heads, seq 16 — classification, regression and
    // MLM paths all bounded by 1e-3 relative error.
    const ModelConfig cfg = tiny_config();
    Model model(cfg, 33);
    Rng rng(34);
    std::vector<EncodedInput> batch = {make_input(cfg.vocab_size, cfg.max_len, 6, rng, true),
                                       make_input(cfg.vocab_size, cfg.max_len, 9, rng, true)};

    SUBCASE("classification path") {
        Head head(Head::Kind::Classification, cfg.dim, 3, 35);
        const std::vector<int> labels = {1, 2};
        auto loss_fn = [&]() {
            return classification_loss_and_grads(model, head, ReprKind::Mask, batch, labels, false);
        };
        std::vector<Parameter*> params = model.parameters();
        for (Parameter* p : head.parameters()) params.push_back(p);
        Rng check_rng(36);
        const auto result = grad_check(params, loss_fn, 1e-5, check_rng, 8);
        CHECK(result.max_rel_error <= 1e-3);
    }

    SUBCASE("mean-pool regression path") {
        Head head(Head::Kind::Regression, cfg.dim, 1, 37);
        const std::vector<double> targets = {0.4, -0.9};
        auto loss_fn = [&]() {
            return regression_loss_and_grads(model, head, ReprKind::MeanPool, batch, targets, false);
        };
        std::vector<Parameter*> params = model.parameters();
        for (Parameter* p : head.parameters()) params.push_back(p);
        Rng check_rng(38);
        const auto result = grad_check(params, loss_fn, 1e-5, check_rng, 8);
        CHECK(result.max_rel_error <= 1e-3);
    }

    SUBCASE("mlm path") {
        std::vector<MlmTarget> targets = {{0, 2, 7}, {1, 3, 9}, {1, 5, 11}};
        auto loss_fn = [&]() { return mlm_loss_and_grads(model, batch, targets, false); };
        Rng check_rng(39);
        const auto result = grad_check(model.parameters(), loss_fn, 1e-5, check_rng, 8);
        CHECK(result.max_rel_error <= 1e-3);
    }
}

TEST_CASE("dropout only affects train mode") {
    ModelConfig cfg = tiny_config();
    cfg.dropout = 0.5;
    const Model model(cfg, 40);
    Rng rng(41);
    const std::vector<EncodedInput> batch = {make_input(cfg.vocab_size, cfg.max_len, 6, rng)};

    const HiddenStates eval1 = forward(model, batch, false);
    const HiddenStates eval2 = forward(model, batch, false);
    CHECK(eval1.states.v == eval2.states.v);

    Rng d1(1), d2(2);
    const HiddenStates train1 = forward(model, batch, true, &d1);
    const HiddenStates train2 = forward(model, batch, true, &d2);
    CHECK(train1.states.v != train2.states.v);
    CHECK(thrown_code([&] { forward(model, batch, true); }) == Errc::InvalidParams);
}

TEST_CASE("forward validates inputs") {
    const ModelConfig cfg = tiny_config();
    const Model model(cfg, 42);
    Rng rng(43);
    EncodedInput bad_len = make_input(cfg.vocab_size, cfg.max_len, 4, rng);
    bad_len.ids.pop_back();
    CHECK(thrown_code([&] { forward(model, {bad_len}); }) == Errc::ShapeMismatch);

    EncodedInput bad_id = make_input(cfg.vocab_size, cfg.max_len, 4, rng);
    bad_id.ids[1] = static_cast<TokenId>(cfg.vocab_size);
    CHECK(thrown_code([&] { forward(model, {bad_id}); }) == Errc::ShapeMismatch);
}

TEST_CASE("checkpoint round trip is bit exact") {
    const ModelConfig cfg = tiny_config();
    const Model model(cfg, 44);
    const auto path = std::filesystem::temp_directory_path() / "dynamar_ckpt_test.bin";
    save_checkpoint(path, model_to_checkpoint(model));
    const Model loaded = model_from_checkpoint(load_checkpoint(path));
    const auto pa = model.parameters();
    const auto pb = loaded.parameters();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i]->name == pb[i]->name);
        CHECK(pa[i]->value.v == pb[i]->value.v);
    }
    CHECK(loaded.config() == model.config());
    std::filesystem::remove(path);
}

TEST_CASE("loss is invariant under batch permutation") {
    const ModelConfig cfg = tiny_config();
    Model model(cfg, 45);
    Head head(Head::Kind::Classification, cfg.dim, 2, 46);
    Rng rng(47);
    std::vector<EncodedInput> batch = {make_input(cfg.vocab_size, cfg.max_len, 5, rng, true),
                                       make_input(cfg.vocab_size, cfg.max_len, 7, rng, true),
                                       make_input(cfg.vocab_size, cfg.max_len, 3, rng, true)};
    const std::vector<int> labels = {0, 1, 0};
    const double loss = classification_loss_and_grads(model, head, ReprKind::Mask, batch, labels, false);

    const std::vector<EncodedInput> permuted = {batch[2], batch[0], batch[1]};
    const std::vector<int> permuted_labels = {0, 0, 1};
    const double loss2 = classification_loss_and_grads(model, head, ReprKind::Mask, permuted, permuted_labels, false);
    CHECK(loss == doctest::Approx(loss2).epsilon(1e-12));
}
