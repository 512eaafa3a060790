#include "dynamar/data.hpp"

#include "dynamar/error.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

namespace dynamar {

namespace {

using json = nlohmann::ordered_json;

const std::vector<std::string> kBaseWords = {
    "anchor", "breeze", "cobalt", "dune",   "ember",  "frost",  "glacier", "harbor",
    "ivory",  "jade",   "krill",  "lumen",  "meadow", "nectar", "onyx",    "prism"};

const std::vector<std::string> kAttributeWords = {
    "red",  "blue",  "green",  "small",  "large", "soft",   "heavy", "light",
    "round", "square", "matte", "glossy", "wide",  "narrow", "warm",  "cool"};

const std::vector<std::string> kGenreWords = {"rock", "jazz", "folk", "blues", "metal", "opera", "disco", "punk"};

const std::vector<std::string> kGenreDistractors = {"track", "album", "sound", "tempo",  "rhythm", "melody",
                                                    "vocal", "studio", "live",  "remix", "audio",  "record"};

const std::vector<std::string> kPriceFillers = {"item", "price", "value", "tag", "cost", "deal", "sale", "pack"};

const std::vector<std::string> kLongDocFillers = {"spare", "extra", "plain", "basic", "stock", "bulk"};

std::string join_words(const std::vector<std::string>& words) {
    std::string out;
    for (std::size_t i = 0; i < words.size(); ++i) {
        if (i) out += ' ';
        out += words[i];
    }
    return out;
}

const std::string& pick(const std::vector<std::string>& pool, Rng& rng) {
    return pool[static_cast<std::size_t>(rand_below(rng, pool.size()))];
}

void append_long_tail(std::vector<std::string>& words, Rng& rng) {
    // Enough filler to push the document past typical max_len budgets.
    for (int i = 0; i < 160; ++i) words.push_back(pick(kLongDocFillers, rng));
}

void validate_example(const Example& ex, TaskKind kind, int arity, int num_classes, std::size_t line) {
    if (static_cast<int>(ex.docs.size()) != arity)
        fail(Errc::SchemaViolation, "line " + std::to_string(line) + ": expected arity " + std::to_string(arity));
    if (is_classification(kind)) {
        if (!ex.label)
            fail(Errc::SchemaViolation, "line " + std::to_string(line) + ": classification record needs a label");
        if (*ex.label < 0 || (num_classes > 0 && *ex.label >= num_classes))
            fail(Errc::SchemaViolation, "line " + std::to_string(line) + ": label out of range");
    } else if (!ex.target) {
        fail(Errc::SchemaViolation, "line " + std::to_string(line) + ": regression record needs a target");
    }
}

Dataset with_examples(const Dataset& base, std::vector<Example> examples) {
    Dataset out = base;
    out.examples = std::move(examples);
    return out;
}

} // namespace

bool is_classification(TaskKind kind) { return kind != TaskKind::Regression; }

std::string task_kind_name(TaskKind kind) {
    switch (kind) {
    case TaskKind::Binary: return "binary";
    case TaskKind::Multiclass: return "multiclass";
    case TaskKind::Regression: return "regression";
    }
    return "?";
}

Dataset load_jsonl(const std::filesystem::path& path, TaskKind task_kind, int arity, int num_classes) {
    std::ifstream in(path);
    if (!in) fail(Errc::IoError, "cannot open dataset: " + path.string());
    if (arity != 1 && arity != 2) fail(Errc::InvalidParams, "arity must be 1 or 2");

    Dataset dataset;
    dataset.task_kind = task_kind;
    dataset.arity = arity;

    std::string line;
    std::size_t line_no = 0;
    int max_label = -1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            fail(Errc::ParseError, "line " + std::to_string(line_no) + ": " + e.what());
        }
        Example ex;
        try {
            ex.id = j.at("id").get<std::string>();
            if (arity == 1) {
                ex.docs.push_back(j.at("doc").get<std::string>());
            } else {
                ex.docs.push_back(j.at("doc1").get<std::string>());
                ex.docs.push_back(j.at("doc2").get<std::string>());
            }
            if (is_classification(task_kind))
                ex.label = j.at("label").get<int>();
            else
                ex.target = j.at("target").get<double>();
        } catch (const json::exception& e) {
            fail(Errc::SchemaViolation, "line " + std::to_string(line_no) + ": " + e.what());
        }
        validate_example(ex, task_kind, arity, num_classes, line_no);
        if (ex.label) max_label = std::max(max_label, *ex.label);
        dataset.examples.push_back(std::move(ex));
    }

    if (task_kind == TaskKind::Binary)
        dataset.num_classes = 2;
    else if (task_kind == TaskKind::Multiclass)
        dataset.num_classes = num_classes > 0 ? num_classes : max_label + 1;
    return dataset;
}

void save_jsonl(const Dataset& dataset, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) fail(Errc::IoError, "cannot open for writing: " + path.string());
    for (const auto& ex : dataset.examples) {
        json j;
        j["id"] = ex.id;
        if (dataset.arity == 1) {
            j["doc"] = ex.docs[0];
        } else {
            j["doc1"] = ex.docs[0];
            j["doc2"] = ex.docs[1];
        }
        if (ex.label) j["label"] = *ex.label;
        if (ex.target) j["target"] = *ex.target;
        out << j.dump() << '\n';
    }
}

Dataset few_shot_sample(const Dataset& dataset, int k_per_class, Rng& rng) {
    if (!is_classification(dataset.task_kind))
        fail(Errc::NotClassification, "few-shot per-class sampling needs labels");
    if (k_per_class < 0) fail(Errc::InvalidParams, "k_per_class must be non-negative");

    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < dataset.examples.size(); ++i) by_class[*dataset.examples[i].label].push_back(i);

    std::vector<std::size_t> chosen;
    for (auto& [label, indices] : by_class) {
        shuffle(indices, rng);
        const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(k_per_class), indices.size());
        chosen.insert(chosen.end(), indices.begin(), indices.begin() + take);
    }
    shuffle(chosen, rng);

    std::vector<Example> examples;
    examples.reserve(chosen.size());
    for (std::size_t i : chosen) examples.push_back(dataset.examples[i]);
    return with_examples(dataset, std::move(examples));
}

Dataset fraction_sample(const Dataset& dataset, double fraction, Rng& rng) {
    if (!(fraction > 0.0 && fraction <= 1.0)) fail(Errc::InvalidFraction, "fraction must be in (0,1]");
    std::vector<std::size_t> indices(dataset.examples.size());
    std::iota(indices.begin(), indices.end(), 0);
    shuffle(indices, rng);
    const std::size_t take = std::max<std::size_t>(
        1, static_cast<std::size_t>(std::lround(fraction * static_cast<double>(dataset.examples.size()))));
    indices.resize(std::min(take, indices.size()));

    std::vector<Example> examples;
    examples.reserve(indices.size());
    for (std::size_t i : indices) examples.push_back(dataset.examples[i]);
    return with_examples(dataset, std::move(examples));
}

Split split_train_val_test(const Dataset& dataset, double val_fraction, double test_fraction, Rng& rng) {
    if (val_fraction < 0 || test_fraction < 0 || val_fraction + test_fraction >= 1.0)
        fail(Errc::InvalidParams, "val+test fractions must leave room for train");

    std::vector<std::vector<std::size_t>> groups;
    if (is_classification(dataset.task_kind)) {
        std::map<int, std::vector<std::size_t>> by_class;
        for (std::size_t i = 0; i < dataset.examples.size(); ++i) by_class[*dataset.examples[i].label].push_back(i);
        for (auto& [label, indices] : by_class) groups.push_back(std::move(indices));
    } else {
        std::vector<std::size_t> all(dataset.examples.size());
        std::iota(all.begin(), all.end(), 0);
        groups.push_back(std::move(all));
    }

    std::vector<std::size_t> train_idx, val_idx, test_idx;
    for (auto& group : groups) {
        shuffle(group, rng);
        const std::size_t n = group.size();
        const auto n_val = static_cast<std::size_t>(std::lround(val_fraction * static_cast<double>(n)));
        const auto n_test = static_cast<std::size_t>(std::lround(test_fraction * static_cast<double>(n)));
        for (std::size_t i = 0; i < n; ++i) {
            if (i < n_val)
                val_idx.push_back(group[i]);
            else if (i < n_val + n_test)
                test_idx.push_back(group[i]);
            else
                train_idx.push_back(group[i]);
        }
    }

    auto build = [&](std::vector<std::size_t>& idx) {
        std::sort(idx.begin(), idx.end()); // restore original relative order
        std::vector<Example> examples;
        examples.reserve(idx.size());
        for (std::size_t i : idx) examples.push_back(dataset.examples[i]);
        return with_examples(dataset, std::move(examples));
    };
    return {build(train_idx), build(val_idx), build(test_idx)};
}

ToyTask toy_task_from_name(const std::string& name) {
    if (name == "toy_pair") return ToyTask::Pair;
    if (name == "toy_genre") return ToyTask::Genre;
    if (name == "toy_price") return ToyTask::Price;
    fail(Errc::ConfigError, "unknown toy task: " + name);
}

std::string toy_task_name(ToyTask task) {
    switch (task) {
    case ToyTask::Pair: return "toy_pair";
    case ToyTask::Genre: return "toy_genre";
    case ToyTask::Price: return "toy_price";
    }
    return "?";
}

Dataset gen_synthetic(ToyTask task, int size, std::uint64_t seed, double noise, bool long_docs) {
    if (size < 10) fail(Errc::InvalidParams, "size must be >= 10");
    if (!(noise >= 0.0 && noise < 0.5)) fail(Errc::InvalidParams, "noise must be in [0, 0.5)");

    Rng rng(splitmix64(seed));
    Dataset out;

    switch (task) {
    case ToyTask::Pair: {
        out.task_kind = TaskKind::Binary;
        out.num_classes = 2;
        out.arity = 2;
        auto make_doc = [&](const std::string& base) {
            std::vector<std::string> words{base};
            const int n_attrs = 2 + static_cast<int>(rand_below(rng, 3));
            for (int a = 0; a < n_attrs; ++a) words.push_back(pick(kAttributeWords, rng));
            if (long_docs) append_long_tail(words, rng);
            return join_words(words);
        };
        for (int i = 0; i < size; ++i) {
            Example ex;
            ex.id = "toy_pair-" + std::to_string(i);
            const bool positive = i % 2 == 0; // balanced by construction
            const std::string& base1 = pick(kBaseWords, rng);
            std::string base2 = base1;
            if (!positive) {
                do {
                    base2 = pick(kBaseWords, rng);
                } while (base2 == base1);
            }
            ex.docs.push_back(make_doc(base1));
            ex.docs.push_back(make_doc(base2));
            int label = positive ? 1 : 0;
            if (noise > 0.0 && rand_unit(rng) < noise) label = 1 - label;
            ex.label = label;
            out.examples.push_back(std::move(ex));
        }
        break;
    }
    case ToyTask::Genre: {
        out.task_kind = TaskKind::Multiclass;
        out.num_classes = static_cast<int>(kGenreWords.size());
        out.arity = 1;
        for (int i = 0; i < size; ++i) {
            Example ex;
            ex.id = "toy_genre-" + std::to_string(i);
            int label = i % out.num_classes; // balanced round-robin
            std::vector<std::string> words;
            const int n_distract = 4 + static_cast<int>(rand_below(rng, 4));
            for (int w = 0; w < n_distract; ++w) words.push_back(pick(kGenreDistractors, rng));
            const auto at = static_cast<std::size_t>(rand_below(rng, words.size() + 1));
            int written = label;
            if (noise > 0.0 && rand_unit(rng) < noise)
                written = static_cast<int>(rand_below(rng, static_cast<std::uint64_t>(out.num_classes)));
            words.insert(words.begin() + static_cast<std::ptrdiff_t>(at),
                         kGenreWords[static_cast<std::size_t>(written)]);
            if (long_docs) append_long_tail(words, rng);
            ex.docs.push_back(join_words(words));
            ex.label = label;
            out.examples.push_back(std::move(ex));
        }
        break;
    }
    case ToyTask::Price: {
        out.task_kind = TaskKind::Regression;
        out.arity = 1;
        for (int i = 0; i < size; ++i) {
            Example ex;
            ex.id = "toy_price-" + std::to_string(i);
            std::vector<std::string> words;
            const int n_digits = 2 + static_cast<int>(rand_below(rng, 2));
            int digit_sum = 0;
            const int n_fillers = 2 + static_cast<int>(rand_below(rng, 3));
            for (int w = 0; w < n_fillers; ++w) words.push_back(pick(kPriceFillers, rng));
            for (int d = 0; d < n_digits; ++d) {
                const int digit = static_cast<int>(rand_below(rng, 10));
                digit_sum += digit;
                const auto at = static_cast<std::size_t>(rand_below(rng, words.size() + 1));
                words.insert(words.begin() + static_cast<std::ptrdiff_t>(at), std::to_string(digit));
            }
            if (long_docs) append_long_tail(words, rng);
            ex.docs.push_back(join_words(words));
            double target = kPriceScale * digit_sum;
            if (noise > 0.0) target += rand_normal(rng, 0.0, noise);
            ex.target = target;
            out.examples.push_back(std::move(ex));
        }
        break;
    }
    }
    return out;
}

} // namespace dynamar
