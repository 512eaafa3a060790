#pragma once

#include "dynamar/autograd.hpp"
#include "dynamar/rng.hpp"
#include "dynamar/templating.hpp"
#include "dynamar/tensor.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace dynamar {

struct ModelConfig {
    int layers = 4;
    int dim = 128;
    int heads = 4;
    int max_len = 128;
    int vocab_size = 2048;
    double dropout = 0.0;
    std::uint64_t seed = 0;
    bool tie_mlm_head = true;

    void validate() const; // InvalidConfig

    bool operator==(const ModelConfig&) const = default;
};

struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;

    Parameter() = default;
    Parameter(std::string n, int rows, int cols) : name(std::move(n)), value(rows, cols), grad(rows, cols) {}
};

/// Pre-norm transformer encoder with learned positional embeddings and a
/// (by default tied) MLM output head. Copyable; a copy is an independent
/// model with its own parameter and gradient buffers.
class Model {
public:
    Model(const ModelConfig& config, std::uint64_t seed);

    const ModelConfig& config() const { return config_; }

    std::vector<Parameter*> parameters();
    std::vector<const Parameter*> parameters() const;
    Parameter* find_parameter(const std::string& name);
    void zero_grads();
    std::size_t parameter_count() const;

    struct Layer {
        Parameter ln1_gain, ln1_bias;
        // No key-projection bias: a per-row constant shift of the attention
        // scores is softmax-invariant, so it would be a dead parameter.
        Parameter wq, bq, wk, wv, bv, wo, bo;
        Parameter ln2_gain, ln2_bias;
        Parameter w1, b1, w2, b2;
    };

    Parameter token_embedding;    // [vocab, dim]
    Parameter position_embedding; // [max_len, dim]
    std::vector<Layer> layers;
    Parameter final_ln_gain, final_ln_bias;
    Parameter mlm_bias;                    // [1, vocab]
    std::optional<Parameter> mlm_decoder;  // [vocab, dim] when untied

private:
    ModelConfig config_;
};

Model init_model(const ModelConfig& config, std::uint64_t seed);

/// Final-layer activations. `states` is [batch*seq, dim] with rows beyond
/// each example's window zeroed; padded positions must be excluded from
/// pooling.
struct HiddenStates {
    int batch = 0;
    int seq = 0; // == max_len
    int dim = 0;
    Tensor states;
    std::vector<int> attention_length;
    std::vector<std::optional<int>> mask_index;

    const double* row(int example, int position) const {
        return states.data() + (static_cast<std::size_t>(example) * seq + position) * dim;
    }
};

HiddenStates forward(const Model& model, const std::vector<EncodedInput>& batch, bool train_mode = false,
                     Rng* dropout_rng = nullptr);

enum class ReprKind { Cls, MeanPool, Mask };

/// Per-example representation: CLS vector, mean over non-PAD positions, or
/// the MASK position's vector.
Tensor extract_representation(const HiddenStates& hidden, ReprKind kind);

struct MlmTarget {
    int example = 0;
    int position = 0;
    TokenId original_id = 0;
};

struct MlmBatch {
    std::vector<EncodedInput> corrupted;
    std::vector<MlmTarget> targets;
};

/// BERT-style corruption: each non-special position is selected with
/// probability mask_rate; a selected token becomes MASK (p=0.8), a random
/// ordinary token (p=0.1), or stays unchanged (p=0.1).
MlmBatch mlm_mask(const std::vector<EncodedInput>& batch, Rng& rng, double mask_rate, int vocab_size);

/// Mean cross-entropy over MLM target positions; fills every parameter's
/// gradient buffer.
double mlm_loss_and_grads(Model& model, const std::vector<EncodedInput>& corrupted,
                          const std::vector<MlmTarget>& targets, bool train_mode = true, Rng* dropout_rng = nullptr);

/// Graph-building internals shared with the fine-tuning loop.
namespace detail {

struct EncoderGraph {
    ag::Node* hidden = nullptr;            // [batch*window, dim]
    ag::Node* token_leaf = nullptr;        // embedding table leaf (tied MLM head reuses it)
    int window = 0;                        // max attention_length in batch
    std::vector<ag::Node*> param_leaves;   // aligned with `params`
    std::vector<Parameter*> params;
};

EncoderGraph build_encoder_graph(ag::Graph& g, Model& model, const std::vector<EncodedInput>& batch, bool train_mode,
                                 Rng* dropout_rng);

/// Representation rows for the batch as a graph node [batch, dim].
ag::Node* representation_node(ag::Graph& g, const EncoderGraph& eg, const std::vector<EncodedInput>& batch,
                              ReprKind kind);

/// Copy accumulated leaf gradients back into the model's buffers.
void collect_gradients(const EncoderGraph& eg);

} // namespace detail

struct GradCheckResult {
    double max_rel_error = 0.0;
    int checked = 0;
};

/// Central-difference gradient verification. `loss_and_grads` must compute
/// the loss for the current parameter values and refresh every gradient
/// buffer. Samples at least `samples_per_tensor` entries from each
/// parameter tensor.
GradCheckResult grad_check(const std::vector<Parameter*>& params, const std::function<double()>& loss_and_grads,
                           double epsilon, Rng& rng, int samples_per_tensor = 20);

// ---- checkpoint I/O ("DMR1": magic, u64 header length, JSON header, raw
// little-endian doubles in manifest order) ----

struct Checkpoint {
    ModelConfig config;
    std::vector<std::pair<std::string, Tensor>> tensors;
    std::string extra_json; // optional consumer payload, "{}" if unused
};

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Checkpoint model_to_checkpoint(const Model& model);
Model model_from_checkpoint(const Checkpoint& ckpt);

} // namespace dynamar
