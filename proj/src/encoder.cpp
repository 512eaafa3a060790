#include "dynamar/encoder.hpp"

#include "dynamar/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

namespace dynamar {

namespace {

using json = nlohmann::ordered_json;

constexpr double kInitStd = 0.02;

void init_normal(Tensor& t, Rng& rng) {
    for (double& x : t.v) x = rand_normal(rng, 0.0, kInitStd);
}

} // namespace

void ModelConfig::validate() const {
    if (layers < 1) fail(Errc::InvalidConfig, "layers must be >= 1");
    if (dim < 1 || heads < 1 || dim % heads != 0)
        fail(Errc::InvalidConfig, "dim must be a positive multiple of heads");
    if (max_len < 8) fail(Errc::InvalidConfig, "max_len must be >= 8");
    if (vocab_size <= kNumSpecials) fail(Errc::InvalidConfig, "vocab_size must exceed the reserved specials");
    if (!(dropout >= 0.0 && dropout < 1.0)) fail(Errc::InvalidConfig, "dropout must be in [0,1)");
}

Model::Model(const ModelConfig& config, std::uint64_t seed) : config_(config) {
    config_.validate();
    config_.seed = seed;

    const int d = config_.dim;
    const int ff = 4 * d;

    token_embedding = Parameter("token_embedding", config_.vocab_size, d);
    position_embedding = Parameter("position_embedding", config_.max_len, d);
    layers.reserve(static_cast<std::size_t>(config_.layers));
    for (int l = 0; l < config_.layers; ++l) {
        const std::string p = "layer" + std::to_string(l) + ".";
        Layer layer;
        layer.ln1_gain = Parameter(p + "ln1_gain", 1, d);
        layer.ln1_bias = Parameter(p + "ln1_bias", 1, d);
        layer.wq = Parameter(p + "wq", d, d);
        layer.bq = Parameter(p + "bq", 1, d);
        layer.wk = Parameter(p + "wk", d, d);
        layer.wv = Parameter(p + "wv", d, d);
        layer.bv = Parameter(p + "bv", 1, d);
        layer.wo = Parameter(p + "wo", d, d);
        layer.bo = Parameter(p + "bo", 1, d);
        layer.ln2_gain = Parameter(p + "ln2_gain", 1, d);
        layer.ln2_bias = Parameter(p + "ln2_bias", 1, d);
        layer.w1 = Parameter(p + "w1", d, ff);
        layer.b1 = Parameter(p + "b1", 1, ff);
        layer.w2 = Parameter(p + "w2", ff, d);
        layer.b2 = Parameter(p + "b2", 1, d);
        layers.push_back(std::move(layer));
    }
    final_ln_gain = Parameter("final_ln_gain", 1, d);
    final_ln_bias = Parameter("final_ln_bias", 1, d);
    mlm_bias = Parameter("mlm_bias", 1, config_.vocab_size);
    if (!config_.tie_mlm_head) mlm_decoder = Parameter("mlm_decoder", config_.vocab_size, d);

    // Weights ~ N(0, 0.02), biases 0, layer-norm gains 1. Drawn in
    // parameters() order so the same seed always gives the same model.
    Rng rng(seed);
    init_normal(token_embedding.value, rng);
    init_normal(position_embedding.value, rng);
    for (auto& layer : layers) {
        layer.ln1_gain.value.fill(1.0);
        init_normal(layer.wq.value, rng);
        init_normal(layer.wk.value, rng);
        init_normal(layer.wv.value, rng);
        init_normal(layer.wo.value, rng);
        layer.ln2_gain.value.fill(1.0);
        init_normal(layer.w1.value, rng);
        init_normal(layer.w2.value, rng);
    }
    final_ln_gain.value.fill(1.0);
    if (mlm_decoder) init_normal(mlm_decoder->value, rng);
}

Model init_model(const ModelConfig& config, std::uint64_t seed) { return Model(config, seed); }

std::vector<Parameter*> Model::parameters() {
    std::vector<Parameter*> out;
    out.push_back(&token_embedding);
    out.push_back(&position_embedding);
    for (auto& l : layers) {
        for (Parameter* p : {&l.ln1_gain, &l.ln1_bias, &l.wq, &l.bq, &l.wk, &l.wv, &l.bv, &l.wo, &l.bo,
                             &l.ln2_gain, &l.ln2_bias, &l.w1, &l.b1, &l.w2, &l.b2})
            out.push_back(p);
    }
    out.push_back(&final_ln_gain);
    out.push_back(&final_ln_bias);
    out.push_back(&mlm_bias);
    if (mlm_decoder) out.push_back(&*mlm_decoder);
    return out;
}

std::vector<const Parameter*> Model::parameters() const {
    auto mutable_params = const_cast<Model*>(this)->parameters();
    return {mutable_params.begin(), mutable_params.end()};
}

Parameter* Model::find_parameter(const std::string& name) {
    for (Parameter* p : parameters())
        if (p->name == name) return p;
    return nullptr;
}

void Model::zero_grads() {
    for (Parameter* p : parameters()) p->grad.zero();
}

std::size_t Model::parameter_count() const {
    std::size_t n = 0;
    for (const Parameter* p : parameters()) n += p->value.size();
    return n;
}

namespace detail {

EncoderGraph build_encoder_graph(ag::Graph& g, Model& model, const std::vector<EncodedInput>& batch, bool train_mode,
                                 Rng* dropout_rng) {
    const auto& cfg = model.config();
    if (batch.empty()) fail(Errc::ShapeMismatch, "empty batch");
    for (const auto& in : batch) {
        if (static_cast<int>(in.ids.size()) != cfg.max_len)
            fail(Errc::ShapeMismatch, "input length != max_len");
        if (in.attention_length < 1 || in.attention_length > cfg.max_len)
            fail(Errc::ShapeMismatch, "attention_length out of range");
        for (TokenId id : in.ids)
            if (id < 0 || id >= cfg.vocab_size) fail(Errc::ShapeMismatch, "token id outside vocabulary");
    }

    const bool use_dropout = train_mode && cfg.dropout > 0.0;
    if (use_dropout && dropout_rng == nullptr)
        fail(Errc::InvalidParams, "train-mode forward with dropout needs an rng");

    EncoderGraph eg;
    const int B = static_cast<int>(batch.size());
    // Trailing all-PAD columns carry no information; restrict compute to the
    // widest attended window in the batch.
    int window = 1;
    for (const auto& in : batch) window = std::max(window, in.attention_length);
    eg.window = window;

    auto leaf = [&](Parameter& p) {
        ag::Node* n = g.leaf(p.value, true);
        eg.param_leaves.push_back(n);
        eg.params.push_back(&p);
        return n;
    };

    ag::Node* tok = leaf(model.token_embedding);
    ag::Node* pos = leaf(model.position_embedding);
    eg.token_leaf = tok;

    std::vector<int> flat_ids;
    std::vector<int> pos_ids;
    flat_ids.reserve(static_cast<std::size_t>(B) * window);
    pos_ids.reserve(static_cast<std::size_t>(B) * window);
    for (const auto& in : batch)
        for (int s = 0; s < window; ++s) {
            flat_ids.push_back(in.ids[static_cast<std::size_t>(s)]);
            pos_ids.push_back(s);
        }

    ag::Node* x = g.add(g.embedding_rows(tok, flat_ids), g.embedding_rows(pos, pos_ids));
    if (use_dropout) x = g.dropout(x, cfg.dropout, *dropout_rng);

    const int d = cfg.dim;
    const int head_dim = d / cfg.heads;
    const double att_scale = 1.0 / std::sqrt(static_cast<double>(head_dim));

    for (auto& layer : model.layers) {
        ag::Node* ln1g = leaf(layer.ln1_gain);
        ag::Node* ln1b = leaf(layer.ln1_bias);
        ag::Node* h = g.layer_norm(x, ln1g, ln1b);

        ag::Node* q = g.add_row_broadcast(g.matmul(h, leaf(layer.wq)), leaf(layer.bq));
        ag::Node* k = g.matmul(h, leaf(layer.wk));
        ag::Node* v = g.add_row_broadcast(g.matmul(h, leaf(layer.wv)), leaf(layer.bv));

        std::vector<std::tuple<ag::Node*, int, int>> pieces;
        pieces.reserve(static_cast<std::size_t>(B) * cfg.heads);
        for (int b = 0; b < B; ++b) {
            const int valid = batch[static_cast<std::size_t>(b)].attention_length;
            for (int head = 0; head < cfg.heads; ++head) {
                ag::Node* qb = g.block(q, b * window, window, head * head_dim, head_dim);
                ag::Node* kb = g.block(k, b * window, window, head * head_dim, head_dim);
                ag::Node* vb = g.block(v, b * window, window, head * head_dim, head_dim);
                ag::Node* scores = g.scale(g.matmul_nt(qb, kb), att_scale);
                ag::Node* probs = g.masked_softmax_rows(scores, valid);
                ag::Node* ctx = g.matmul(probs, vb);
                pieces.emplace_back(ctx, b * window, head * head_dim);
            }
        }
        ag::Node* ctx_all = g.assemble(B * window, d, pieces);
        ag::Node* att = g.add_row_broadcast(g.matmul(ctx_all, leaf(layer.wo)), leaf(layer.bo));
        if (use_dropout) att = g.dropout(att, cfg.dropout, *dropout_rng);
        x = g.add(x, att);

        ag::Node* h2 = g.layer_norm(x, leaf(layer.ln2_gain), leaf(layer.ln2_bias));
        ag::Node* ff = g.add_row_broadcast(g.matmul(h2, leaf(layer.w1)), leaf(layer.b1));
        ff = g.gelu(ff);
        ff = g.add_row_broadcast(g.matmul(ff, leaf(layer.w2)), leaf(layer.b2));
        if (use_dropout) ff = g.dropout(ff, cfg.dropout, *dropout_rng);
        x = g.add(x, ff);
    }

    x = g.layer_norm(x, leaf(model.final_ln_gain), leaf(model.final_ln_bias));
    eg.hidden = x;
    return eg;
}

ag::Node* representation_node(ag::Graph& g, const EncoderGraph& eg, const std::vector<EncodedInput>& batch,
                              ReprKind kind) {
    const int W = eg.window;
    switch (kind) {
    case ReprKind::Cls: {
        std::vector<int> rows;
        rows.reserve(batch.size());
        for (std::size_t b = 0; b < batch.size(); ++b)
            rows.push_back(static_cast<int>(b) * W + batch[b].cls_index);
        return g.gather_rows(eg.hidden, rows);
    }
    case ReprKind::MeanPool: {
        std::vector<std::pair<int, int>> ranges;
        ranges.reserve(batch.size());
        for (std::size_t b = 0; b < batch.size(); ++b)
            ranges.emplace_back(static_cast<int>(b) * W, batch[b].attention_length);
        return g.mean_rows_ranges(eg.hidden, ranges);
    }
    case ReprKind::Mask: {
        std::vector<int> rows;
        rows.reserve(batch.size());
        for (std::size_t b = 0; b < batch.size(); ++b) {
            if (!batch[b].mask_index)
                fail(Errc::MissingMaskIndex, "mask-based representation on input without [MASK]");
            rows.push_back(static_cast<int>(b) * W + *batch[b].mask_index);
        }
        return g.gather_rows(eg.hidden, rows);
    }
    }
    fail(Errc::InvalidParams, "unreachable representation kind");
}

void collect_gradients(const EncoderGraph& eg) {
    for (std::size_t i = 0; i < eg.params.size(); ++i) {
        const ag::Node* leaf = eg.param_leaves[i];
        if (leaf->grad_alloc) axpy(1.0, leaf->grad, eg.params[i]->grad);
    }
}

} // namespace detail

HiddenStates forward(const Model& model, const std::vector<EncodedInput>& batch, bool train_mode, Rng* dropout_rng) {
    ag::Graph g;
    // The graph copies parameter values; forward never mutates the model.
    auto& mutable_model = const_cast<Model&>(model);
    const auto eg = detail::build_encoder_graph(g, mutable_model, batch, train_mode, dropout_rng);

    HiddenStates out;
    out.batch = static_cast<int>(batch.size());
    out.seq = model.config().max_len;
    out.dim = model.config().dim;
    out.states = Tensor(out.batch * out.seq, out.dim);
    for (int b = 0; b < out.batch; ++b) {
        out.attention_length.push_back(batch[static_cast<std::size_t>(b)].attention_length);
        out.mask_index.push_back(batch[static_cast<std::size_t>(b)].mask_index);
        for (int s = 0; s < eg.window; ++s)
            for (int c = 0; c < out.dim; ++c)
                out.states.at(b * out.seq + s, c) = eg.hidden->val.at(b * eg.window + s, c);
    }
    return out;
}

Tensor extract_representation(const HiddenStates& hidden, ReprKind kind) {
    Tensor out(hidden.batch, hidden.dim);
    for (int b = 0; b < hidden.batch; ++b) {
        switch (kind) {
        case ReprKind::Cls:
            for (int c = 0; c < hidden.dim; ++c) out.at(b, c) = hidden.row(b, 0)[c];
            break;
        case ReprKind::MeanPool: {
            const int len = hidden.attention_length[static_cast<std::size_t>(b)];
            for (int c = 0; c < hidden.dim; ++c) {
                double s = 0.0;
                for (int p = 0; p < len; ++p) s += hidden.row(b, p)[c];
                out.at(b, c) = s / len;
            }
            break;
        }
        case ReprKind::Mask: {
            const auto& mi = hidden.mask_index[static_cast<std::size_t>(b)];
            if (!mi) fail(Errc::MissingMaskIndex, "mask-based representation on input without [MASK]");
            for (int c = 0; c < hidden.dim; ++c) out.at(b, c) = hidden.row(b, *mi)[c];
            break;
        }
        }
    }
    return out;
}

MlmBatch mlm_mask(const std::vector<EncodedInput>& batch, Rng& rng, double mask_rate, int vocab_size) {
    if (!(mask_rate > 0.0 && mask_rate < 1.0)) fail(Errc::InvalidParams, "mask_rate must be in (0,1)");
    if (vocab_size <= kNumSpecials) fail(Errc::InvalidParams, "vocab_size must exceed specials");

    MlmBatch out;
    out.corrupted = batch;
    for (std::size_t b = 0; b < batch.size(); ++b) {
        auto& ids = out.corrupted[b].ids;
        for (int p = 0; p < batch[b].attention_length; ++p) {
            const TokenId id = ids[static_cast<std::size_t>(p)];
            if (id < kNumSpecials) continue;
            if (rand_unit(rng) >= mask_rate) continue;
            out.targets.push_back({static_cast<int>(b), p, id});
            const double r = rand_unit(rng);
            if (r < 0.8)
                ids[static_cast<std::size_t>(p)] = kMaskId;
            else if (r < 0.9)
                ids[static_cast<std::size_t>(p)] =
                    static_cast<TokenId>(kNumSpecials + rand_below(rng, static_cast<std::uint64_t>(vocab_size - kNumSpecials)));
            // else: keep the original token
        }
    }
    return out;
}

double mlm_loss_and_grads(Model& model, const std::vector<EncodedInput>& corrupted,
                          const std::vector<MlmTarget>& targets, bool train_mode, Rng* dropout_rng) {
    if (targets.empty()) fail(Errc::EmptyTargets, "no MLM targets");

    model.zero_grads();
    ag::Graph g;
    auto eg = detail::build_encoder_graph(g, model, corrupted, train_mode, dropout_rng);

    std::vector<int> rows;
    std::vector<int> target_ids;
    rows.reserve(targets.size());
    target_ids.reserve(targets.size());
    for (const auto& t : targets) {
        rows.push_back(t.example * eg.window + t.position);
        target_ids.push_back(t.original_id);
    }
    ag::Node* rep = g.gather_rows(eg.hidden, rows);

    ag::Node* decoder = eg.token_leaf;
    if (model.mlm_decoder) {
        decoder = g.leaf(model.mlm_decoder->value, true);
        eg.param_leaves.push_back(decoder);
        eg.params.push_back(&*model.mlm_decoder);
    }
    ag::Node* bias = g.leaf(model.mlm_bias.value, true);
    eg.param_leaves.push_back(bias);
    eg.params.push_back(&model.mlm_bias);

    ag::Node* logits = g.add_row_broadcast(g.matmul_nt(rep, decoder), bias);
    ag::Node* loss = g.softmax_cross_entropy(logits, target_ids);
    g.backward(loss);
    detail::collect_gradients(eg);
    return loss->val.at(0, 0);
}

GradCheckResult grad_check(const std::vector<Parameter*>& params, const std::function<double()>& loss_and_grads,
                           double epsilon, Rng& rng, int samples_per_tensor) {
    if (!(epsilon > 0.0)) fail(Errc::InvalidParams, "epsilon must be positive");

    loss_and_grads();
    std::vector<Tensor> analytic;
    analytic.reserve(params.size());
    for (const Parameter* p : params) analytic.push_back(p->grad);

    GradCheckResult result;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Parameter& p = *params[pi];
        const std::size_t n = p.value.size();
        std::set<std::size_t> indices;
        if (n <= static_cast<std::size_t>(samples_per_tensor)) {
            for (std::size_t i = 0; i < n; ++i) indices.insert(i);
        } else {
            while (indices.size() < static_cast<std::size_t>(samples_per_tensor))
                indices.insert(static_cast<std::size_t>(rand_below(rng, n)));
        }
        for (std::size_t i : indices) {
            const double saved = p.value.v[i];
            p.value.v[i] = saved + epsilon;
            const double plus = loss_and_grads();
            p.value.v[i] = saved - epsilon;
            const double minus = loss_and_grads();
            p.value.v[i] = saved;
            const double numeric = (plus - minus) / (2.0 * epsilon);
            const double exact = analytic[pi].v[i];
            const double denom = std::max({std::abs(exact), std::abs(numeric), 1e-8});
            result.max_rel_error = std::max(result.max_rel_error, std::abs(exact - numeric) / denom);
            ++result.checked;
        }
    }
    // Leave the analytic gradients in place for the caller.
    loss_and_grads();
    return result;
}

// ---- checkpoint I/O ----

namespace {

json config_to_json(const ModelConfig& c) {
    return json{{"layers", c.layers},       {"dim", c.dim},
                {"heads", c.heads},         {"max_len", c.max_len},
                {"vocab_size", c.vocab_size}, {"dropout", c.dropout},
                {"seed", c.seed},           {"tie_mlm_head", c.tie_mlm_head}};
}

ModelConfig config_from_json(const json& j) {
    ModelConfig c;
    c.layers = j.at("layers").get<int>();
    c.dim = j.at("dim").get<int>();
    c.heads = j.at("heads").get<int>();
    c.max_len = j.at("max_len").get<int>();
    c.vocab_size = j.at("vocab_size").get<int>();
    c.dropout = j.at("dropout").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.tie_mlm_head = j.at("tie_mlm_head").get<bool>();
    return c;
}

} // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(Errc::IoError, "cannot open for writing: " + path.string());

    json manifest = json::array();
    for (const auto& [name, tensor] : ckpt.tensors)
        manifest.push_back({{"name", name}, {"rows", tensor.rows}, {"cols", tensor.cols}});
    json header = {{"config", config_to_json(ckpt.config)},
                   {"manifest", std::move(manifest)},
                   {"extra", ckpt.extra_json.empty() ? json::object() : json::parse(ckpt.extra_json)}};
    const std::string header_text = header.dump();

    out.write("DMR1", 4);
    const std::uint64_t len = header_text.size();
    out.write(reinterpret_cast<const char*>(&len), sizeof(len));
    out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
    for (const auto& [name, tensor] : ckpt.tensors)
        out.write(reinterpret_cast<const char*>(tensor.data()),
                  static_cast<std::streamsize>(tensor.size() * sizeof(double)));
    if (!out) fail(Errc::IoError, "write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(Errc::IoError, "cannot open for reading: " + path.string());

    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "DMR1", 4) != 0) fail(Errc::ParseError, "bad checkpoint magic");
    std::uint64_t len = 0;
    in.read(reinterpret_cast<char*>(&len), sizeof(len));
    std::string header_text(len, '\0');
    in.read(header_text.data(), static_cast<std::streamsize>(len));
    if (!in) fail(Errc::ParseError, "truncated checkpoint header");

    json header;
    try {
        header = json::parse(header_text);
    } catch (const json::exception& e) {
        fail(Errc::ParseError, std::string("checkpoint header: ") + e.what());
    }

    Checkpoint ckpt;
    ckpt.config = config_from_json(header.at("config"));
    ckpt.extra_json = header.at("extra").dump();
    for (const auto& entry : header.at("manifest")) {
        Tensor t(entry.at("rows").get<int>(), entry.at("cols").get<int>());
        in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
        if (!in) fail(Errc::ParseError, "truncated checkpoint tensors");
        ckpt.tensors.emplace_back(entry.at("name").get<std::string>(), std::move(t));
    }
    return ckpt;
}

Checkpoint model_to_checkpoint(const Model& model) {
    Checkpoint ckpt;
    ckpt.config = model.config();
    for (const Parameter* p : model.parameters()) ckpt.tensors.emplace_back(p->name, p->value);
    return ckpt;
}

Model model_from_checkpoint(const Checkpoint& ckpt) {
    Model model(ckpt.config, ckpt.config.seed);
    for (const auto& [name, tensor] : ckpt.tensors) {
        Parameter* p = model.find_parameter(name);
        if (p == nullptr) continue; // consumer payloads (e.g. heads) live elsewhere
        if (!p->value.same_shape(tensor)) fail(Errc::SchemaViolation, "checkpoint tensor shape mismatch: " + name);
        p->value = tensor;
    }
    return model;
}

} // namespace dynamar
