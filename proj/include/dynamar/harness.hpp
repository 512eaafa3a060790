#pragma once

#include "dynamar/data.hpp"
#include "dynamar/encoder.hpp"
#include "dynamar/finetune.hpp"
#include "dynamar/metrics.hpp"
#include "dynamar/templating.hpp"
#include "dynamar/tokenizer.hpp"

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace dynamar {

struct GeneratorSpec {
    ToyTask task = ToyTask::Pair;
    int size = 600;
    std::uint64_t seed = 7;
    double noise = 0.0;
    bool long_docs = false;
};

struct DataFileSpec {
    std::string path;
    TaskKind task_kind = TaskKind::Binary;
    int arity = 1;
    int num_classes = -1;
};

struct TaskConfig {
    std::string name;
    MetricKind metric = MetricKind::Prauc;
    std::optional<GeneratorSpec> generator;
    std::optional<DataFileSpec> data_file;
    std::vector<std::string> candidate_specs; // template spec strings
    int pool_size = 5;
    std::string scorer = "jaccard"; // or "embedding"
    std::optional<double> min_dissimilarity;
    std::optional<std::string> fiter_template; // default: first pool template
};

struct PretrainConfig {
    int steps = 300;
    int batch_size = 8;
    double learning_rate = 1e-3;
    double mask_rate = 0.15;
};

struct FewShotConfig {
    int k_per_class = 20;   // classification tasks
    double fraction = 0.05; // regression tasks
    int val_max = 32;       // cap on validation examples used during fine-tuning
};

struct ExperimentConfig {
    std::string regime = "few_shot"; // or "data_rich"
    std::vector<std::uint64_t> seeds;
    std::vector<StrategyKind> strategies;
    ModelConfig model;
    int tokenizer_vocab_size = 2048;
    PretrainConfig pretrain;
    TrainingSchedule schedule; // validate_every/patience default by regime
    double val_fraction = 0.2;
    double test_fraction = 0.2;
    FewShotConfig few_shot;
    std::vector<TaskConfig> tasks;

    static ExperimentConfig load(const std::filesystem::path& path);
    static ExperimentConfig from_json_string(const std::string& text, const std::filesystem::path& base_dir);
    void validate() const; // ConfigError / MissingBaseline
};

// ---- template candidate files ({"task", "arity", "candidates": [...]}) ----

struct TemplateFile {
    std::string task;
    int arity = 1;
    std::vector<std::string> candidates;
};

TemplateFile load_template_file(const std::filesystem::path& path);
void save_pool_file(const std::filesystem::path& path, const std::string& task, const PromptPool& pool);
PromptPool load_pool_file(const std::filesystem::path& path);

// ---- prepared experiment (datasets, splits, vocab, pools) ----

struct PreparedTask {
    TaskConfig config;
    Split split;
    std::vector<PromptTemplate> candidates;
    std::optional<PromptPool> pool;            // set when candidates exist
    std::optional<PromptTemplate> fiter_template;
};

struct PreparedExperiment {
    ExperimentConfig config;
    std::vector<PreparedTask> tasks;
    Vocab vocab;
    ModelConfig model_config; // vocab_size bound to the trained vocabulary
};

PreparedExperiment prepare_experiment(const ExperimentConfig& config);

// ---- reports ----

struct ArmResult {
    std::string task;
    StrategyKind strategy = StrategyKind::PftCls;
    std::uint64_t seed = 0;
    double metric = 0.0;
};

/// Tables 1-2 shaped summary: raw per-arm metrics, per-cell means,
/// improvement percentages vs the PFt-CLS baseline, and per-strategy
/// averages across tasks.
struct RunReport {
    std::vector<std::string> task_names;
    std::vector<MetricKind> task_metrics; // aligned with task_names
    std::vector<StrategyKind> strategies;
    std::vector<ArmResult> raw;
    std::map<std::pair<std::string, StrategyKind>, double> mean_metric;
    std::map<std::pair<std::string, StrategyKind>, double> improvement;
    std::map<StrategyKind, double> avg_improvement;
};

/// Compute means, improvements and averages from raw arm results.
/// Requires the PFt-CLS baseline among the strategies.
RunReport aggregate_report(std::vector<ArmResult> raw, std::vector<std::string> task_names,
                           std::vector<MetricKind> task_metrics, std::vector<StrategyKind> strategies);

RunReport run_comparison(const PreparedExperiment& prepared);
RunReport run_comparison(const ExperimentConfig& config);

struct AblationPoint {
    int pool_size = 0;
    double avg_improvement = 0.0;
};

struct AblationCurve {
    std::vector<AblationPoint> points;
    bool monotone_non_decreasing = false;
    // Per (size, task) mean DynaMaR metric, for equivalence checks.
    std::map<std::pair<int, std::string>, double> mean_metric;
};

AblationCurve build_ablation_curve(std::vector<AblationPoint> points);

AblationCurve run_pool_ablation(const PreparedExperiment& prepared, const std::vector<int>& pool_sizes);
AblationCurve run_pool_ablation(const ExperimentConfig& config, const std::vector<int>& pool_sizes);

enum class ReportFormat { Csv, Markdown };

/// Write raw.csv + summary.csv (Csv) and report.md (Markdown) into
/// out_dir. Identical reports produce byte-identical files.
void emit_report(const RunReport& report, const std::filesystem::path& out_dir,
                 const std::set<ReportFormat>& formats = {ReportFormat::Csv, ReportFormat::Markdown});

/// Write plotdata.csv with one (pool_size, avg_improvement) row per point.
void emit_ablation(const AblationCurve& curve, const std::filesystem::path& out_dir);

/// Worker cap: DYNAMAR_THREADS env var if set, else hardware concurrency.
int worker_count();

std::string strategy_display_name(StrategyKind kind);

} // namespace dynamar
