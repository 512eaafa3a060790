#include "dynamar/data.hpp"
#include "dynamar/embedding_scorer.hpp"
#include "dynamar/error.hpp"
#include "dynamar/harness.hpp"
#include "dynamar/tokenizer.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <sstream>

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfigError = 2;
constexpr int kExitRunFailure = 3;

bool is_config_error(dynamar::Errc code) {
    using dynamar::Errc;
    switch (code) {
    case Errc::ConfigError:
    case Errc::MissingBaseline:
    case Errc::InvalidParams:
    case Errc::InvalidConfig:
    case Errc::InvalidFraction:
    case Errc::NotEnoughCandidates:
    case Errc::VocabTooSmall:
    case Errc::NoMask:
    case Errc::MultipleMasks:
    case Errc::BadSlots:
    case Errc::ArityMismatch:
        return true;
    default:
        return false;
    }
}

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in) dynamar::fail(dynamar::Errc::IoError, "cannot open corpus: " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line))
        if (!line.empty()) lines.push_back(line);
    return lines;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"DynaMaR prompt fine-tuning experiments"};
    app.require_subcommand(1);

    // tokenizer train
    auto* tokenizer_cmd = app.add_subcommand("tokenizer", "Tokenizer operations");
    tokenizer_cmd->require_subcommand(1);
    auto* tok_train = tokenizer_cmd->add_subcommand("train", "Train a BPE vocabulary");
    std::string tok_corpus, tok_out;
    int tok_vocab_size = 2048;
    tok_train->add_option("--corpus", tok_corpus, "Text corpus, one document per line")->required();
    tok_train->add_option("--vocab-size", tok_vocab_size, "Target vocabulary size");
    tok_train->add_option("--out", tok_out, "Output vocabulary JSON")->required();

    // pool select
    auto* pool_cmd = app.add_subcommand("pool", "Prompt pool operations");
    pool_cmd->require_subcommand(1);
    auto* pool_select = pool_cmd->add_subcommand("select", "Select a diverse template pool");
    std::string pool_templates, pool_out, pool_scorer = "jaccard", pool_checkpoint, pool_probe;
    int pool_k = 5;
    double pool_min_dissim = -1.0;
    pool_select->add_option("--templates", pool_templates, "Candidate template JSON file")->required();
    pool_select->add_option("--k", pool_k, "Pool size");
    pool_select->add_option("--scorer", pool_scorer, "jaccard or embedding");
    pool_select->add_option("--min-dissimilarity", pool_min_dissim, "Drop near-duplicate candidates below this score");
    pool_select->add_option("--checkpoint", pool_checkpoint, "Model checkpoint for the embedding scorer");
    pool_select->add_option("--probe", pool_probe, "Probe document for the embedding scorer (use '|' between paired docs)");
    pool_select->add_option("--out", pool_out, "Output pool JSON")->required();

    // data gen
    auto* data_cmd = app.add_subcommand("data", "Dataset operations");
    data_cmd->require_subcommand(1);
    auto* data_gen = data_cmd->add_subcommand("gen", "Generate a synthetic dataset");
    std::string gen_task = "toy_pair", gen_out;
    int gen_size = 600;
    std::uint64_t gen_seed = 7;
    double gen_noise = 0.0;
    bool gen_long_docs = false;
    data_gen->add_option("--task", gen_task, "toy_pair | toy_genre | toy_price")->required();
    data_gen->add_option("--size", gen_size, "Number of examples");
    data_gen->add_option("--seed", gen_seed, "Generator seed");
    data_gen->add_option("--noise", gen_noise, "Label-flip probability / target noise sigma");
    data_gen->add_flag("--long-docs", gen_long_docs, "Generate documents exceeding typical budgets");
    data_gen->add_option("--out", gen_out, "Output JSONL path")->required();

    // run
    auto* run_cmd = app.add_subcommand("run", "Run the strategy comparison");
    std::string run_config, run_out;
    run_cmd->add_option("--config", run_config, "Experiment config JSON")->required();
    run_cmd->add_option("--out", run_out, "Output directory")->required();

    // ablate
    auto* ablate_cmd = app.add_subcommand("ablate", "Run the pool-size ablation");
    std::string ablate_config, ablate_out, ablate_sizes = "1,3,5";
    ablate_cmd->add_option("--config", ablate_config, "Experiment config JSON")->required();
    ablate_cmd->add_option("--pool-sizes", ablate_sizes, "Comma-separated pool sizes");
    ablate_cmd->add_option("--out", ablate_out, "Output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfigError;
    }

    try {
        if (tok_train->parsed()) {
            const auto vocab = dynamar::train_bpe(read_lines(tok_corpus), tok_vocab_size);
            vocab.save(tok_out);
            std::cout << "vocab size " << vocab.size() << " (" << vocab.merges().size() << " merges) -> " << tok_out
                      << "\n";
        } else if (pool_select->parsed()) {
            const auto tf = dynamar::load_template_file(pool_templates);
            std::vector<dynamar::PromptTemplate> candidates;
            for (const auto& spec : tf.candidates) candidates.push_back(dynamar::PromptTemplate::parse(spec));
            std::optional<double> min_dissim;
            if (pool_min_dissim >= 0.0) min_dissim = pool_min_dissim;

            std::optional<dynamar::PromptPool> pool;
            if (pool_scorer == "jaccard") {
                pool = dynamar::select_pool(candidates, static_cast<std::size_t>(pool_k), dynamar::JaccardScorer{},
                                            min_dissim);
            } else if (pool_scorer == "embedding") {
                if (pool_checkpoint.empty() || pool_probe.empty())
                    dynamar::fail(dynamar::Errc::ConfigError,
                                  "embedding scorer needs --checkpoint and --probe");
                const auto ckpt = dynamar::load_checkpoint(pool_checkpoint);
                const auto model = dynamar::model_from_checkpoint(ckpt);
                std::filesystem::path vocab_path = std::filesystem::path(pool_checkpoint).replace_extension(".vocab.json");
                const auto vocab = dynamar::Vocab::load(vocab_path);
                std::vector<std::string> probe_docs;
                std::stringstream probe_stream(pool_probe);
                std::string doc;
                while (std::getline(probe_stream, doc, '|')) probe_docs.push_back(doc);
                dynamar::EmbeddingScorer scorer(model, vocab, probe_docs, model.config().max_len);
                pool = dynamar::select_pool(candidates, static_cast<std::size_t>(pool_k), scorer, min_dissim);
            } else {
                dynamar::fail(dynamar::Errc::ConfigError, "unknown scorer: " + pool_scorer);
            }
            dynamar::save_pool_file(pool_out, tf.task, *pool);
            std::cout << "selected " << pool->size() << " of " << candidates.size() << " templates -> " << pool_out
                      << "\n";
        } else if (data_gen->parsed()) {
            const auto dataset = dynamar::gen_synthetic(dynamar::toy_task_from_name(gen_task), gen_size, gen_seed,
                                                        gen_noise, gen_long_docs);
            dynamar::save_jsonl(dataset, gen_out);
            std::cout << dataset.size() << " examples -> " << gen_out << "\n";
        } else if (run_cmd->parsed()) {
            const auto config = dynamar::ExperimentConfig::load(run_config);
            const auto report = dynamar::run_comparison(config);
            dynamar::emit_report(report, run_out);
            std::cout << "report -> " << run_out << "\n";
        } else if (ablate_cmd->parsed()) {
            const auto config = dynamar::ExperimentConfig::load(ablate_config);
            std::vector<int> sizes;
            std::stringstream size_stream(ablate_sizes);
            std::string token;
            while (std::getline(size_stream, token, ',')) sizes.push_back(std::stoi(token));
            const auto curve = dynamar::run_pool_ablation(config, sizes);
            dynamar::emit_ablation(curve, ablate_out);
            std::cout << "plotdata -> " << ablate_out << "\n";
        }
    } catch (const dynamar::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return is_config_error(e.code()) ? kExitConfigError : kExitRunFailure;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitRunFailure;
    }
    return kExitOk;
}
