#pragma once

#include "dynamar/rng.hpp"

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace dynamar {

struct Example {
    std::string id;
    std::vector<std::string> docs; // 1 or 2 text fields
    std::optional<int> label;      // classification
    std::optional<double> target;  // regression
};

enum class TaskKind { Binary, Multiclass, Regression };

bool is_classification(TaskKind kind);
std::string task_kind_name(TaskKind kind);

struct Dataset {
    std::vector<Example> examples;
    TaskKind task_kind = TaskKind::Binary;
    int num_classes = 2; // 2 for binary, k for multiclass, unused for regression
    int arity = 1;

    std::size_t size() const { return examples.size(); }
    bool empty() const { return examples.empty(); }
};

/// Parse a JSONL dataset. Single-doc records are {"id","doc","label"|"target"},
/// pairwise records are {"id","doc1","doc2","label"}. File order is preserved.
Dataset load_jsonl(const std::filesystem::path& path, TaskKind task_kind, int arity, int num_classes = -1);

void save_jsonl(const Dataset& dataset, const std::filesystem::path& path);

/// Uniform sample without replacement of min(k, class size) per class,
/// shuffled. Classification datasets only.
Dataset few_shot_sample(const Dataset& dataset, int k_per_class, Rng& rng);

/// Uniform sample without replacement of round(fraction * n), at least 1.
Dataset fraction_sample(const Dataset& dataset, double fraction, Rng& rng);

struct Split {
    Dataset train;
    Dataset val;
    Dataset test;
};

/// Deterministic shuffle-and-partition; classification splits are
/// stratified so every class appears in every part.
Split split_train_val_test(const Dataset& dataset, double val_fraction, double test_fraction, Rng& rng);

enum class ToyTask { Pair, Genre, Price };

ToyTask toy_task_from_name(const std::string& name);
std::string toy_task_name(ToyTask task);

/// Synthetic stand-ins for the proprietary evaluation tasks.
/// Pair: pairwise binary, label 1 iff the two base tokens match (flipped
///       with probability `noise`).
/// Genre: single-doc 8-way classification keyed by one keyword among
///        distractors.
/// Price: single-doc regression, target = 0.1 * sum of digit tokens plus
///        Gaussian noise with sigma = `noise`.
Dataset gen_synthetic(ToyTask task, int size, std::uint64_t seed, double noise, bool long_docs = false);

/// Scale factor of the Price generator's target.
inline constexpr double kPriceScale = 0.1;

} // namespace dynamar
