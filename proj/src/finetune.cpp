#include "dynamar/finetune.hpp"

#include "dynamar/error.hpp"
#include "dynamar/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace dynamar {

namespace {

constexpr int kEvalBatch = 16;
constexpr int kMaxMaskAttempts = 1000;

// [CLS] doc1 ([SEP] doc2) [SEP] with an optional MASK right after CLS or
// right before the final SEP. Shared by the promptless and null-prompt
// strategies.
EncodedInput encode_plain(const std::vector<TokenSeq>& docs, int max_len, bool mask_prefix, bool mask_suffix) {
    const long overhead = 1 /*CLS*/ + static_cast<long>(docs.size()) /*SEPs*/ + ((mask_prefix || mask_suffix) ? 1 : 0);
    const auto truncated = truncate_documents(docs, max_len - overhead);

    EncodedInput out;
    out.ids.reserve(static_cast<std::size_t>(max_len));
    out.ids.push_back(kClsId);
    if (mask_prefix) {
        out.mask_index = static_cast<int>(out.ids.size());
        out.ids.push_back(kMaskId);
    }
    for (std::size_t d = 0; d < truncated.size(); ++d) {
        out.ids.insert(out.ids.end(), truncated[d].ids.begin(), truncated[d].ids.end());
        if (d + 1 < truncated.size()) out.ids.push_back(kSepId);
    }
    if (mask_suffix) {
        out.mask_index = static_cast<int>(out.ids.size());
        out.ids.push_back(kMaskId);
    }
    out.ids.push_back(kSepId);
    out.attention_length = static_cast<int>(out.ids.size());
    out.ids.resize(static_cast<std::size_t>(max_len), kPadId);
    return out;
}

std::vector<TokenSeq> tokenize_docs(const Example& example, const Vocab& vocab) {
    std::vector<TokenSeq> docs;
    docs.reserve(example.docs.size());
    for (const auto& doc : example.docs) docs.push_back(vocab.encode(doc));
    return docs;
}

void check_metric_head(MetricKind metric, const Head& head) {
    switch (metric) {
    case MetricKind::Prauc:
        if (head.kind != Head::Kind::Classification || head.out_dim != 2)
            fail(Errc::MetricTaskMismatch, "PRAUC needs a binary classification head");
        break;
    case MetricKind::Accuracy:
        if (head.kind != Head::Kind::Classification)
            fail(Errc::MetricTaskMismatch, "accuracy needs a classification head");
        break;
    case MetricKind::Rmse:
        if (head.kind != Head::Kind::Regression) fail(Errc::MetricTaskMismatch, "RMSE needs a regression head");
        break;
    }
}

void check_head_dataset(const Head& head, const Dataset& data) {
    if (is_classification(data.task_kind)) {
        if (head.kind != Head::Kind::Classification || head.out_dim != data.num_classes)
            fail(Errc::MetricTaskMismatch, "head does not match the dataset's classes");
    } else if (head.kind != Head::Kind::Regression) {
        fail(Errc::MetricTaskMismatch, "regression dataset needs a regression head");
    }
}

double loss_for_batch(Model& model, Head& head, ReprKind repr, const std::vector<EncodedInput>& batch,
                      const Dataset& data, const std::vector<std::size_t>& idx, bool train_mode, Rng* rng) {
    if (head.kind == Head::Kind::Classification) {
        std::vector<int> labels;
        labels.reserve(idx.size());
        for (std::size_t i : idx) labels.push_back(*data.examples[i].label);
        return classification_loss_and_grads(model, head, repr, batch, labels, train_mode, rng);
    }
    std::vector<double> targets;
    targets.reserve(idx.size());
    for (std::size_t i : idx) targets.push_back(*data.examples[i].target);
    return regression_loss_and_grads(model, head, repr, batch, targets, train_mode, rng);
}

/// Metric over pre-encoded inputs (eval mode). Shared by evaluate() and the
/// in-loop validation so both produce identical numbers.
double evaluate_encoded(const Model& model, const Head& head, ReprKind repr, const std::vector<EncodedInput>& inputs,
                        const Dataset& data, MetricKind metric) {
    check_metric_head(metric, head);
    std::vector<double> scores;   // binary positive-class probability
    std::vector<int> predicted;   // argmax class
    std::vector<double> values;   // regression output
    for (std::size_t at = 0; at < inputs.size(); at += kEvalBatch) {
        const std::size_t end = std::min(inputs.size(), at + kEvalBatch);
        const std::vector<EncodedInput> batch(inputs.begin() + static_cast<std::ptrdiff_t>(at),
                                              inputs.begin() + static_cast<std::ptrdiff_t>(end));
        const Tensor out = head_outputs(model, head, repr, batch);
        for (int r = 0; r < out.rows; ++r) {
            if (head.kind == Head::Kind::Regression) {
                values.push_back(out.at(r, 0));
                continue;
            }
            int arg = 0;
            for (int c = 1; c < out.cols; ++c)
                if (out.at(r, c) > out.at(r, arg)) arg = c;
            predicted.push_back(arg);
            if (out.cols == 2) {
                // softmax positive-class probability
                const double mx = std::max(out.at(r, 0), out.at(r, 1));
                const double e0 = std::exp(out.at(r, 0) - mx);
                const double e1 = std::exp(out.at(r, 1) - mx);
                scores.push_back(e1 / (e0 + e1));
            }
        }
    }

    switch (metric) {
    case MetricKind::Prauc: {
        std::vector<int> labels;
        for (const auto& ex : data.examples) labels.push_back(*ex.label);
        return prauc(scores, labels);
    }
    case MetricKind::Accuracy: {
        std::vector<int> labels;
        for (const auto& ex : data.examples) labels.push_back(*ex.label);
        return accuracy(predicted, labels);
    }
    case MetricKind::Rmse: {
        std::vector<double> targets;
        for (const auto& ex : data.examples) targets.push_back(*ex.target);
        return rmse(values, targets);
    }
    }
    fail(Errc::InvalidParams, "unreachable metric kind");
}

std::vector<EncodedInput> encode_dataset(const Strategy& strategy, const Dataset& data, const Vocab& vocab,
                                         int max_len, Rng* rng = nullptr, bool training = false) {
    std::vector<EncodedInput> out;
    out.reserve(data.size());
    for (const auto& ex : data.examples) out.push_back(encode_for_strategy(strategy, ex, vocab, max_len, rng, training));
    return out;
}

/// Validation view of a strategy: DynaMaR pins the pool's first template so
/// consecutive validations are comparable.
Strategy validation_strategy(const Strategy& strategy) {
    if (strategy.kind != StrategyKind::Dynamar) return strategy;
    return Strategy::fiter(strategy.pool->templates.front());
}

} // namespace

std::string strategy_name(StrategyKind kind) {
    switch (kind) {
    case StrategyKind::PftCls: return "pft_cls";
    case StrategyKind::PftAvg: return "pft_avg";
    case StrategyKind::NpPrefix: return "np_prefix";
    case StrategyKind::NpSuffix: return "np_suffix";
    case StrategyKind::Fiter: return "fiter";
    case StrategyKind::Dynamar: return "dynamar";
    }
    return "?";
}

StrategyKind strategy_from_name(const std::string& name) {
    for (StrategyKind k : {StrategyKind::PftCls, StrategyKind::PftAvg, StrategyKind::NpPrefix, StrategyKind::NpSuffix,
                           StrategyKind::Fiter, StrategyKind::Dynamar})
        if (strategy_name(k) == name) return k;
    fail(Errc::ConfigError, "unknown strategy: " + name);
}

void TrainingSchedule::validate() const {
    if (max_steps < 0) fail(Errc::InvalidParams, "max_steps must be non-negative");
    if (validate_every < 1) fail(Errc::InvalidParams, "validate_every must be >= 1");
    if (patience < 1) fail(Errc::InvalidParams, "patience must be >= 1");
    if (batch_size < 1) fail(Errc::InvalidParams, "batch_size must be >= 1");
    if (!(learning_rate > 0.0)) fail(Errc::InvalidParams, "learning_rate must be positive");
}

EarlyStopDecision early_stop_update(EarlyStopState& state, double new_metric) {
    const bool improved = state.best_index < 0 ||
                          (state.higher_is_better ? new_metric > state.best : new_metric < state.best);
    if (improved) {
        state.best = new_metric;
        state.best_index = state.seen;
        state.counter = 0;
    } else {
        ++state.counter;
    }
    ++state.seen;
    if (state.counter >= state.patience) {
        state.stopped = true;
        return EarlyStopDecision::Stop;
    }
    return EarlyStopDecision::Continue;
}

EncodedInput encode_for_strategy(const Strategy& strategy, const Example& example, const Vocab& vocab, int max_len,
                                 Rng* rng, bool training) {
    const auto docs = tokenize_docs(example, vocab);
    switch (strategy.kind) {
    case StrategyKind::PftCls:
    case StrategyKind::PftAvg:
        return encode_plain(docs, max_len, false, false);
    case StrategyKind::NpPrefix:
        return encode_plain(docs, max_len, true, false);
    case StrategyKind::NpSuffix:
        return encode_plain(docs, max_len, false, true);
    case StrategyKind::Fiter:
        return render(*strategy.fixed_template, docs, max_len, vocab);
    case StrategyKind::Dynamar: {
        const PromptPool& pool = *strategy.pool;
        if (training) {
            if (rng == nullptr) fail(Errc::InvalidParams, "DynaMaR training encoding needs an rng");
            return render(pool.templates[sample_template(pool, *rng)], docs, max_len, vocab);
        }
        if (!strategy.inference_template_index)
            fail(Errc::InferenceTemplateUnset, "select an inference template before DynaMaR inference");
        return render(pool.templates[*strategy.inference_template_index], docs, max_len, vocab);
    }
    }
    fail(Errc::InvalidParams, "unreachable strategy kind");
}

double classification_loss_and_grads(Model& model, Head& head, ReprKind repr, const std::vector<EncodedInput>& batch,
                                     const std::vector<int>& labels, bool train_mode, Rng* dropout_rng) {
    if (labels.empty()) fail(Errc::EmptyTargets, "no labels");
    if (labels.size() != batch.size()) fail(Errc::ShapeMismatch, "labels/batch size mismatch");
    model.zero_grads();
    head.zero_grads();

    ag::Graph g;
    auto eg = detail::build_encoder_graph(g, model, batch, train_mode, dropout_rng);
    ag::Node* rep = detail::representation_node(g, eg, batch, repr);
    ag::Node* w = g.leaf(head.weight.value, true);
    ag::Node* b = g.leaf(head.bias.value, true);
    eg.param_leaves.push_back(w);
    eg.params.push_back(&head.weight);
    eg.param_leaves.push_back(b);
    eg.params.push_back(&head.bias);
    ag::Node* logits = g.add_row_broadcast(g.matmul(rep, w), b);
    ag::Node* loss = g.softmax_cross_entropy(logits, labels);
    g.backward(loss);
    detail::collect_gradients(eg);
    return loss->val.at(0, 0);
}

double regression_loss_and_grads(Model& model, Head& head, ReprKind repr, const std::vector<EncodedInput>& batch,
                                 const std::vector<double>& targets, bool train_mode, Rng* dropout_rng) {
    if (targets.empty()) fail(Errc::EmptyTargets, "no targets");
    if (targets.size() != batch.size()) fail(Errc::ShapeMismatch, "targets/batch size mismatch");
    model.zero_grads();
    head.zero_grads();

    ag::Graph g;
    auto eg = detail::build_encoder_graph(g, model, batch, train_mode, dropout_rng);
    ag::Node* rep = detail::representation_node(g, eg, batch, repr);
    ag::Node* w = g.leaf(head.weight.value, true);
    ag::Node* b = g.leaf(head.bias.value, true);
    eg.param_leaves.push_back(w);
    eg.params.push_back(&head.weight);
    eg.param_leaves.push_back(b);
    eg.params.push_back(&head.bias);
    ag::Node* pred = g.add_row_broadcast(g.matmul(rep, w), b);
    ag::Node* loss = g.mse_loss(pred, targets);
    g.backward(loss);
    detail::collect_gradients(eg);
    return loss->val.at(0, 0);
}

Tensor head_outputs(const Model& model, const Head& head, ReprKind repr, const std::vector<EncodedInput>& batch) {
    const HiddenStates hidden = forward(model, batch, /*train_mode=*/false);
    const Tensor rep = extract_representation(hidden, repr);
    Tensor out(rep.rows, head.out_dim);
    gemm_nn(rep, head.weight.value, out);
    for (int r = 0; r < out.rows; ++r)
        for (int c = 0; c < out.cols; ++c) out.at(r, c) += head.bias.value.at(0, c);
    return out;
}

PretrainResult pretrain_mlm(const ModelConfig& config, const std::vector<std::string>& corpus, const Vocab& vocab,
                            const TrainingSchedule& schedule, double mask_rate) {
    if (corpus.empty()) fail(Errc::EmptyCorpus, "pre-training corpus is empty");
    schedule.validate();

    std::vector<EncodedInput> encoded;
    encoded.reserve(corpus.size());
    for (const auto& doc : corpus) {
        TokenSeq toks = vocab.encode(doc);
        if (static_cast<int>(toks.size()) > config.max_len - 2)
            toks.ids.resize(static_cast<std::size_t>(config.max_len - 2));
        EncodedInput in;
        in.ids.push_back(kClsId);
        in.ids.insert(in.ids.end(), toks.ids.begin(), toks.ids.end());
        in.ids.push_back(kSepId);
        in.attention_length = static_cast<int>(in.ids.size());
        in.ids.resize(static_cast<std::size_t>(config.max_len), kPadId);
        encoded.push_back(std::move(in));
    }

    PretrainResult result{Model(config, config.seed), {}};
    if (schedule.max_steps == 0) return result;

    AdamOptimizer opt(result.model.parameters(), schedule.learning_rate, 0.9, 0.999, 1e-8, schedule.weight_decay);
    Rng rng(mix_seed(schedule.seed, "pretrain"));

    std::vector<std::size_t> order(encoded.size());
    std::iota(order.begin(), order.end(), 0);
    std::size_t cursor = order.size(); // trigger shuffle on first step

    for (int step = 1; step <= schedule.max_steps; ++step) {
        std::vector<EncodedInput> batch;
        batch.reserve(static_cast<std::size_t>(schedule.batch_size));
        for (int i = 0; i < schedule.batch_size; ++i) {
            if (cursor >= order.size()) {
                shuffle(order, rng);
                cursor = 0;
            }
            batch.push_back(encoded[order[cursor++]]);
        }

        MlmBatch masked = mlm_mask(batch, rng, mask_rate, vocab.size());
        for (int attempt = 0; masked.targets.empty(); ++attempt) {
            if (attempt >= kMaxMaskAttempts) fail(Errc::EmptyTargets, "corpus has no maskable tokens");
            masked = mlm_mask(batch, rng, mask_rate, vocab.size());
        }

        const double loss = mlm_loss_and_grads(result.model, masked.corrupted, masked.targets,
                                               /*train_mode=*/true, &rng);
        opt.step();
        result.loss_history.push_back(loss);
    }
    return result;
}

FinetuneResult finetune(const Model& start, const Head& head, const Strategy& strategy, const Dataset& train,
                        const Dataset& val, const TrainingSchedule& schedule, MetricKind metric, const Vocab& vocab) {
    if (train.empty() || val.empty()) fail(Errc::EmptyData, "train and validation sets must be non-empty");
    schedule.validate();
    check_metric_head(metric, head);
    check_head_dataset(head, train);

    const int max_len = start.config().max_len;
    const ReprKind repr = strategy.repr_kind();

    FinetuneResult best{start, head, {}};
    Model model = start;
    Head current_head = head;

    std::vector<Parameter*> params = model.parameters();
    for (Parameter* p : current_head.parameters()) params.push_back(p);
    AdamOptimizer opt(params, schedule.learning_rate, 0.9, 0.999, 1e-8, schedule.weight_decay);

    // Template draws come from their own stream: a degenerate pool then
    // consumes no shared randomness, and DynaMaR with pool size 1 matches
    // FiTeR exactly.
    Rng train_rng(mix_seed(schedule.seed, "train"));
    Rng template_rng(mix_seed(schedule.seed, "template"));

    const bool dynamic_encoding = strategy.kind == StrategyKind::Dynamar;
    std::vector<EncodedInput> static_train;
    if (!dynamic_encoding) static_train = encode_dataset(strategy, train, vocab, max_len);

    const Strategy val_strategy = validation_strategy(strategy);
    const std::vector<EncodedInput> val_inputs = encode_dataset(val_strategy, val, vocab, max_len);

    EarlyStopState stop_state;
    stop_state.patience = schedule.patience;
    stop_state.higher_is_better = higher_is_better(metric);

    RunHistory history;
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    std::size_t cursor = order.size();

    auto run_validation = [&](int step) {
        const double value = evaluate_encoded(model, current_head, repr, val_inputs, val, metric);
        history.records.push_back({step, value});
        const int before_best = stop_state.best_index;
        const EarlyStopDecision decision = early_stop_update(stop_state, value);
        if (stop_state.best_index != before_best) {
            best.model = model;
            best.head = current_head;
        }
        return decision;
    };

    for (int step = 1; step <= schedule.max_steps; ++step) {
        std::vector<std::size_t> idx;
        idx.reserve(static_cast<std::size_t>(schedule.batch_size));
        for (int i = 0; i < schedule.batch_size && idx.size() < train.size(); ++i) {
            if (cursor >= order.size()) {
                shuffle(order, train_rng);
                cursor = 0;
            }
            idx.push_back(order[cursor++]);
        }

        std::vector<EncodedInput> batch;
        batch.reserve(idx.size());
        for (std::size_t i : idx) {
            if (dynamic_encoding)
                batch.push_back(
                    encode_for_strategy(strategy, train.examples[i], vocab, max_len, &template_rng, /*training=*/true));
            else
                batch.push_back(static_train[i]);
        }

        loss_for_batch(model, current_head, repr, batch, train, idx, /*train_mode=*/true, &train_rng);
        opt.step();

        if (step % schedule.validate_every == 0) {
            if (run_validation(step) == EarlyStopDecision::Stop) break;
        }
    }

    if (history.records.empty()) run_validation(schedule.max_steps);

    history.best_step = history.records[static_cast<std::size_t>(stop_state.best_index)].step;
    history.best_metric = stop_state.best;
    history.stopped_early = stop_state.stopped;
    best.history = history;
    return best;
}

double evaluate(const Model& model, const Head& head, const Strategy& strategy, const Dataset& data, MetricKind metric,
                const Vocab& vocab) {
    if (data.empty()) fail(Errc::EmptyData, "evaluation dataset is empty");
    const auto inputs = encode_dataset(strategy, data, vocab, model.config().max_len);
    return evaluate_encoded(model, head, strategy.repr_kind(), inputs, data, metric);
}

std::size_t select_inference_template(const Model& model, const Head& head, const PromptPool& pool, const Dataset& val,
                                      MetricKind metric, const Vocab& vocab) {
    if (val.empty()) fail(Errc::EmptyValidation, "validation set is empty");
    return select_best_index(
        pool.size(),
        [&](std::size_t i) {
            return evaluate(model, head, Strategy::fiter(pool.templates[i]), val, metric, vocab);
        },
        higher_is_better(metric));
}

} // namespace dynamar
