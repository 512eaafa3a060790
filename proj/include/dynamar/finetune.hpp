#pragma once

#include "dynamar/data.hpp"
#include "dynamar/encoder.hpp"
#include "dynamar/head.hpp"
#include "dynamar/metrics.hpp"
#include "dynamar/templating.hpp"

#include <optional>
#include <string>
#include <vector>

namespace dynamar {

enum class StrategyKind { PftCls, PftAvg, NpPrefix, NpSuffix, Fiter, Dynamar };

std::string strategy_name(StrategyKind kind);
StrategyKind strategy_from_name(const std::string& name);

/// Which fine-tuning method governs input encoding and representation
/// extraction.
struct Strategy {
    StrategyKind kind = StrategyKind::PftCls;
    std::optional<PromptTemplate> fixed_template;          // Fiter
    std::optional<PromptPool> pool;                        // Dynamar
    std::optional<std::size_t> inference_template_index;   // Dynamar, set after selection

    static Strategy pft_cls() { return {StrategyKind::PftCls, {}, {}, {}}; }
    static Strategy pft_avg() { return {StrategyKind::PftAvg, {}, {}, {}}; }
    static Strategy np_prefix() { return {StrategyKind::NpPrefix, {}, {}, {}}; }
    static Strategy np_suffix() { return {StrategyKind::NpSuffix, {}, {}, {}}; }
    static Strategy fiter(PromptTemplate t) { return {StrategyKind::Fiter, std::move(t), {}, {}}; }
    static Strategy dynamar(PromptPool p) { return {StrategyKind::Dynamar, {}, std::move(p), {}}; }

    ReprKind repr_kind() const {
        switch (kind) {
        case StrategyKind::PftCls: return ReprKind::Cls;
        case StrategyKind::PftAvg: return ReprKind::MeanPool;
        default: return ReprKind::Mask;
        }
    }
};

struct TrainingSchedule {
    int max_steps = 2000;
    int validate_every = 2;
    int patience = 3;
    int batch_size = 8;
    double learning_rate = 1e-4;
    std::uint64_t seed = 0;
    double weight_decay = 0.0;

    void validate() const;
};

struct ValidationRecord {
    int step = 0;
    double metric = 0.0;
};

struct RunHistory {
    std::vector<ValidationRecord> records;
    int best_step = 0;
    double best_metric = 0.0;
    bool stopped_early = false;

    bool operator==(const RunHistory&) const = default;
};

// ---- early stopping state machine ----

enum class EarlyStopDecision { Continue, Stop };

struct EarlyStopState {
    int patience = 3;
    bool higher_is_better = true;
    double best = 0.0;
    int best_index = -1; // index into the validation sequence, -1 before any
    int counter = 0;     // consecutive non-improving validations
    int seen = 0;
    bool stopped = false;
};

/// Strict improvement resets the counter and records the new best;
/// anything else (including ties) increments it. Stops when the counter
/// reaches the patience.
EarlyStopDecision early_stop_update(EarlyStopState& state, double new_metric);

// ---- strategy encoding ----

/// Encode one example per the strategy's layout. DynaMaR draws a fresh
/// template per call during training (rng required) and uses the selected
/// inference template otherwise.
EncodedInput encode_for_strategy(const Strategy& strategy, const Example& example, const Vocab& vocab, int max_len,
                                 Rng* rng = nullptr, bool training = false);

// ---- supervised losses (head + encoder end-to-end) ----

double classification_loss_and_grads(Model& model, Head& head, ReprKind repr, const std::vector<EncodedInput>& batch,
                                     const std::vector<int>& labels, bool train_mode = true, Rng* dropout_rng = nullptr);
double regression_loss_and_grads(Model& model, Head& head, ReprKind repr, const std::vector<EncodedInput>& batch,
                                 const std::vector<double>& targets, bool train_mode = true, Rng* dropout_rng = nullptr);

/// Eval-mode head outputs [N, out] for pre-encoded inputs.
Tensor head_outputs(const Model& model, const Head& head, ReprKind repr, const std::vector<EncodedInput>& batch);

// ---- training loops ----

struct PretrainResult {
    Model model;
    std::vector<double> loss_history;
};

/// MLM pre-training with Adam. Deterministic per (config.seed,
/// schedule.seed); zero steps returns the freshly initialized model.
PretrainResult pretrain_mlm(const ModelConfig& config, const std::vector<std::string>& corpus, const Vocab& vocab,
                            const TrainingSchedule& schedule, double mask_rate = 0.15);

struct FinetuneResult {
    Model model;
    Head head;
    RunHistory history;
};

/// Fine-tune encoder and head jointly, validating every validate_every
/// steps with patience-based early stopping; returns the best-validation
/// checkpoint. DynaMaR validates with the pool's first template so the
/// stopping signal is stable.
FinetuneResult finetune(const Model& start, const Head& head, const Strategy& strategy, const Dataset& train,
                        const Dataset& val, const TrainingSchedule& schedule, MetricKind metric, const Vocab& vocab);

/// Metric over the full dataset in eval mode. DynaMaR requires the
/// inference template to have been selected.
double evaluate(const Model& model, const Head& head, const Strategy& strategy, const Dataset& data, MetricKind metric,
                const Vocab& vocab);

/// Pick the pool template with the best validation metric (ties -> lowest
/// index).
std::size_t select_inference_template(const Model& model, const Head& head, const PromptPool& pool, const Dataset& val,
                                      MetricKind metric, const Vocab& vocab);

} // namespace dynamar
