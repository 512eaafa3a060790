#include "dynamar/harness.hpp"

#include "dynamar/embedding_scorer.hpp"
#include "dynamar/error.hpp"

#include <nlohmann/json.hpp>

#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

namespace dynamar {

namespace {

using json = nlohmann::ordered_json;

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.10g", v);
    return buf;
}

std::string fmt_pct(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%+.1f%%", v);
    return buf;
}

TaskKind task_kind_from_name(const std::string& name) {
    if (name == "binary") return TaskKind::Binary;
    if (name == "multiclass") return TaskKind::Multiclass;
    if (name == "regression") return TaskKind::Regression;
    fail(Errc::ConfigError, "unknown task_kind: " + name);
}

Dataset materialize_dataset(const TaskConfig& task) {
    if (task.generator) {
        const auto& g = *task.generator;
        return gen_synthetic(g.task, g.size, g.seed, g.noise, g.long_docs);
    }
    if (task.data_file) {
        const auto& d = *task.data_file;
        return load_jsonl(d.path, d.task_kind, d.arity, d.num_classes);
    }
    fail(Errc::ConfigError, "task '" + task.name + "' needs a generator or a data file");
}

Dataset subsample_max(const Dataset& dataset, int max_n, Rng& rng) {
    if (max_n <= 0 || dataset.size() <= static_cast<std::size_t>(max_n)) return dataset;
    return fraction_sample(dataset, static_cast<double>(max_n) / static_cast<double>(dataset.size()), rng);
}

void run_jobs(std::size_t n, const std::function<void(std::size_t)>& job) {
    const int workers = std::min<int>(worker_count(), static_cast<int>(n));
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) job(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&] {
            for (std::size_t i = next.fetch_add(1); i < n; i = next.fetch_add(1)) job(i);
        });
    for (auto& t : pool) t.join();
}

struct Arm {
    std::size_t task_index;
    StrategyKind strategy;
    std::uint64_t seed;
};

/// One fine-tune/evaluate unit. Training seeds depend on (seed, task) but
/// not on the strategy, so strategy arms are paired.
double run_arm(const PreparedExperiment& prepared, const Model& pretrained, const PreparedTask& task,
               StrategyKind strategy_kind, std::uint64_t seed) {
    const auto& cfg = prepared.config;
    const bool few_shot = cfg.regime == "few_shot";

    Rng sample_rng(mix_seed(seed, task.config.name + "/fewshot"));
    Dataset train = task.split.train;
    if (few_shot) {
        if (is_classification(train.task_kind))
            train = few_shot_sample(train, cfg.few_shot.k_per_class, sample_rng);
        else
            train = fraction_sample(train, cfg.few_shot.fraction, sample_rng);
    }
    Rng val_rng(mix_seed(seed, task.config.name + "/val"));
    const Dataset val = few_shot ? subsample_max(task.split.val, cfg.few_shot.val_max, val_rng) : task.split.val;

    Strategy strategy;
    switch (strategy_kind) {
    case StrategyKind::PftCls: strategy = Strategy::pft_cls(); break;
    case StrategyKind::PftAvg: strategy = Strategy::pft_avg(); break;
    case StrategyKind::NpPrefix: strategy = Strategy::np_prefix(); break;
    case StrategyKind::NpSuffix: strategy = Strategy::np_suffix(); break;
    case StrategyKind::Fiter:
        if (!task.fiter_template) fail(Errc::ConfigError, "FiTeR needs candidate templates");
        strategy = Strategy::fiter(*task.fiter_template);
        break;
    case StrategyKind::Dynamar:
        if (!task.pool) fail(Errc::ConfigError, "DynaMaR needs candidate templates");
        strategy = Strategy::dynamar(*task.pool);
        break;
    }

    const Dataset& base = task.split.train;
    Head head(is_classification(base.task_kind) ? Head::Kind::Classification : Head::Kind::Regression,
              prepared.model_config.dim, base.num_classes, mix_seed(seed, task.config.name + "/head"));

    TrainingSchedule schedule = cfg.schedule;
    schedule.seed = mix_seed(seed, task.config.name + "/arm");

    FinetuneResult result =
        finetune(pretrained, head, strategy, train, val, schedule, task.config.metric, prepared.vocab);

    if (strategy_kind == StrategyKind::Dynamar) {
        strategy.inference_template_index = select_inference_template(result.model, result.head, *task.pool, val,
                                                                      task.config.metric, prepared.vocab);
    }
    return evaluate(result.model, result.head, strategy, task.split.test, task.config.metric, prepared.vocab);
}

std::vector<Model> pretrain_per_seed(const PreparedExperiment& prepared) {
    const auto& cfg = prepared.config;

    std::vector<std::string> corpus;
    for (const auto& task : prepared.tasks)
        for (const auto& ex : task.split.train.examples)
            for (const auto& doc : ex.docs) corpus.push_back(doc);

    std::vector<Model> models;
    models.reserve(cfg.seeds.size());
    for (std::uint64_t seed : cfg.seeds) models.emplace_back(prepared.model_config, 0); // placeholders

    run_jobs(cfg.seeds.size(), [&](std::size_t i) {
        const std::uint64_t seed = cfg.seeds[i];
        ModelConfig mc = prepared.model_config;
        mc.seed = mix_seed(seed, "init");
        TrainingSchedule ps;
        ps.max_steps = cfg.pretrain.steps;
        ps.batch_size = cfg.pretrain.batch_size;
        ps.learning_rate = cfg.pretrain.learning_rate;
        ps.seed = mix_seed(seed, "pretrain");
        models[i] = pretrain_mlm(mc, corpus, prepared.vocab, ps, cfg.pretrain.mask_rate).model;
    });
    return models;
}

} // namespace

int worker_count() {
    if (const char* env = std::getenv("DYNAMAR_THREADS")) {
        const int n = std::atoi(env);
        if (n >= 1) return n;
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

std::string strategy_display_name(StrategyKind kind) {
    switch (kind) {
    case StrategyKind::PftCls: return "PFt-CLS";
    case StrategyKind::PftAvg: return "PFt-Avg";
    case StrategyKind::NpPrefix: return "NP-Prefix";
    case StrategyKind::NpSuffix: return "NP-Suffix";
    case StrategyKind::Fiter: return "FiTeR";
    case StrategyKind::Dynamar: return "DPMR";
    }
    return "?";
}

// ---- config parsing ----

ExperimentConfig ExperimentConfig::from_json_string(const std::string& text, const std::filesystem::path& base_dir) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        fail(Errc::ConfigError, std::string("config json: ") + e.what());
    }

    ExperimentConfig cfg;
    try {
        cfg.regime = j.value("regime", std::string("few_shot"));
        if (cfg.regime != "few_shot" && cfg.regime != "data_rich")
            fail(Errc::ConfigError, "regime must be few_shot or data_rich");

        for (const auto& s : j.at("seeds")) cfg.seeds.push_back(s.get<std::uint64_t>());
        for (const auto& s : j.at("strategies")) cfg.strategies.push_back(strategy_from_name(s.get<std::string>()));

        if (j.contains("model")) {
            const auto& m = j["model"];
            cfg.model.layers = m.value("layers", cfg.model.layers);
            cfg.model.dim = m.value("dim", cfg.model.dim);
            cfg.model.heads = m.value("heads", cfg.model.heads);
            cfg.model.max_len = m.value("max_len", cfg.model.max_len);
            cfg.model.dropout = m.value("dropout", cfg.model.dropout);
            cfg.model.tie_mlm_head = m.value("tie_mlm_head", cfg.model.tie_mlm_head);
        }
        if (j.contains("tokenizer")) cfg.tokenizer_vocab_size = j["tokenizer"].value("vocab_size", cfg.tokenizer_vocab_size);

        if (j.contains("pretrain")) {
            const auto& p = j["pretrain"];
            cfg.pretrain.steps = p.value("steps", cfg.pretrain.steps);
            cfg.pretrain.batch_size = p.value("batch_size", cfg.pretrain.batch_size);
            cfg.pretrain.learning_rate = p.value("learning_rate", cfg.pretrain.learning_rate);
            cfg.pretrain.mask_rate = p.value("mask_rate", cfg.pretrain.mask_rate);
        }

        // Validation cadence defaults per regime.
        cfg.schedule.validate_every = cfg.regime == "few_shot" ? 2 : 100;
        cfg.schedule.patience = 3;
        cfg.schedule.max_steps = cfg.regime == "few_shot" ? 2000 : 20000;
        if (j.contains("schedule")) {
            const auto& s = j["schedule"];
            cfg.schedule.max_steps = s.value("max_steps", cfg.schedule.max_steps);
            cfg.schedule.validate_every = s.value("validate_every", cfg.schedule.validate_every);
            cfg.schedule.patience = s.value("patience", cfg.schedule.patience);
            cfg.schedule.batch_size = s.value("batch_size", cfg.schedule.batch_size);
            cfg.schedule.learning_rate = s.value("learning_rate", cfg.schedule.learning_rate);
            cfg.schedule.weight_decay = s.value("weight_decay", cfg.schedule.weight_decay);
        }

        if (j.contains("split")) {
            cfg.val_fraction = j["split"].value("val_fraction", cfg.val_fraction);
            cfg.test_fraction = j["split"].value("test_fraction", cfg.test_fraction);
        }
        if (j.contains("few_shot")) {
            const auto& f = j["few_shot"];
            cfg.few_shot.k_per_class = f.value("k_per_class", cfg.few_shot.k_per_class);
            cfg.few_shot.fraction = f.value("fraction", cfg.few_shot.fraction);
            cfg.few_shot.val_max = f.value("val_max", cfg.few_shot.val_max);
        }

        for (const auto& t : j.at("tasks")) {
            TaskConfig task;
            task.name = t.at("name").get<std::string>();
            task.metric = metric_from_name(t.at("metric").get<std::string>());
            if (t.contains("generator")) {
                GeneratorSpec g;
                const auto& gen = t["generator"];
                g.task = toy_task_from_name(gen.at("task").get<std::string>());
                g.size = gen.value("size", g.size);
                g.seed = gen.value("seed", g.seed);
                g.noise = gen.value("noise", g.noise);
                g.long_docs = gen.value("long_docs", g.long_docs);
                task.generator = g;
            }
            if (t.contains("data")) {
                DataFileSpec d;
                const auto& df = t["data"];
                d.path = (base_dir / df.at("path").get<std::string>()).string();
                d.task_kind = task_kind_from_name(df.at("task_kind").get<std::string>());
                d.arity = df.value("arity", 1);
                d.num_classes = df.value("num_classes", -1);
                task.data_file = d;
            }
            if (t.contains("templates")) {
                const auto tf = load_template_file(base_dir / t["templates"].get<std::string>());
                task.candidate_specs = tf.candidates;
            }
            if (t.contains("candidates"))
                for (const auto& c : t["candidates"]) task.candidate_specs.push_back(c.get<std::string>());
            task.pool_size = t.value("pool_size", task.pool_size);
            task.scorer = t.value("scorer", task.scorer);
            if (t.contains("min_dissimilarity")) task.min_dissimilarity = t["min_dissimilarity"].get<double>();
            if (t.contains("fiter_template")) task.fiter_template = t["fiter_template"].get<std::string>();
            cfg.tasks.push_back(std::move(task));
        }
    } catch (const json::exception& e) {
        fail(Errc::ConfigError, std::string("config: ") + e.what());
    }

    cfg.validate();
    return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(Errc::ConfigError, "cannot open config: " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return from_json_string(buf.str(), path.parent_path());
}

void ExperimentConfig::validate() const {
    if (tasks.empty()) fail(Errc::ConfigError, "at least one task is required");
    if (strategies.empty()) fail(Errc::ConfigError, "at least one strategy is required");
    if (seeds.empty()) fail(Errc::ConfigError, "at least one seed is required");
    if (std::find(strategies.begin(), strategies.end(), StrategyKind::PftCls) == strategies.end())
        fail(Errc::MissingBaseline, "PFt-CLS must be among the strategies (it is the improvement baseline)");
    model.validate();
    const bool needs_templates =
        std::find(strategies.begin(), strategies.end(), StrategyKind::Fiter) != strategies.end() ||
        std::find(strategies.begin(), strategies.end(), StrategyKind::Dynamar) != strategies.end();
    for (const auto& t : tasks) {
        if (!t.generator && !t.data_file) fail(Errc::ConfigError, "task '" + t.name + "' has no data source");
        if (needs_templates && t.candidate_specs.empty())
            fail(Errc::ConfigError, "task '" + t.name + "' needs candidate templates for prompt strategies");
    }
}

// ---- template files ----

TemplateFile load_template_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(Errc::IoError, "cannot open template file: " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        fail(Errc::ParseError, std::string("template file: ") + e.what());
    }
    TemplateFile tf;
    tf.task = j.value("task", std::string());
    tf.arity = j.value("arity", 1);
    for (const auto& c : j.at("candidates")) tf.candidates.push_back(c.get<std::string>());
    for (const auto& spec : tf.candidates) {
        const auto parsed = PromptTemplate::parse(spec);
        if (parsed.arity() != tf.arity)
            fail(Errc::SchemaViolation, "template arity differs from declared arity: " + spec);
    }
    return tf;
}

void save_pool_file(const std::filesystem::path& path, const std::string& task, const PromptPool& pool) {
    json j;
    j["task"] = task;
    j["arity"] = pool.arity();
    json templates = json::array();
    for (const auto& t : pool.templates) templates.push_back(t.spec_string());
    j["templates"] = std::move(templates);
    std::ofstream out(path);
    if (!out) fail(Errc::IoError, "cannot open for writing: " + path.string());
    out << j.dump(2) << '\n';
}

PromptPool load_pool_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) fail(Errc::IoError, "cannot open pool file: " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        fail(Errc::ParseError, std::string("pool file: ") + e.what());
    }
    std::vector<PromptTemplate> templates;
    for (const auto& t : j.at("templates")) templates.push_back(PromptTemplate::parse(t.get<std::string>()));
    return PromptPool(std::move(templates));
}

// ---- preparation ----

PreparedExperiment prepare_experiment(const ExperimentConfig& config) {
    config.validate();

    std::vector<PreparedTask> tasks;
    for (const auto& task_cfg : config.tasks) {
        Dataset dataset = materialize_dataset(task_cfg);
        if (dataset.empty()) fail(Errc::DatasetError, "task '" + task_cfg.name + "' resolved to an empty dataset");
        Rng split_rng(mix_seed(task_cfg.generator ? task_cfg.generator->seed : 0, task_cfg.name + "/split"));
        Split split = split_train_val_test(dataset, config.val_fraction, config.test_fraction, split_rng);

        std::vector<PromptTemplate> candidates;
        for (const auto& spec : task_cfg.candidate_specs) candidates.push_back(PromptTemplate::parse(spec));
        for (const auto& c : candidates)
            if (c.arity() != dataset.arity)
                fail(Errc::ArityMismatch, "task '" + task_cfg.name + "': template arity differs from dataset arity");

        tasks.push_back({task_cfg, std::move(split), std::move(candidates), std::nullopt, std::nullopt});
    }

    // Tokenizer and pre-training share one corpus: every training-split
    // document across tasks.
    std::vector<std::string> corpus;
    for (const auto& task : tasks)
        for (const auto& ex : task.split.train.examples)
            for (const auto& doc : ex.docs) corpus.push_back(doc);

    PreparedExperiment prepared{config, std::move(tasks), train_bpe(corpus, config.tokenizer_vocab_size), config.model};
    prepared.model_config.vocab_size = prepared.vocab.size();
    prepared.model_config.validate();

    // Pool selection needs the vocabulary (embedding scorer) so it happens
    // after tokenizer training.
    for (auto& task : prepared.tasks) {
        if (task.candidates.empty()) continue;
        if (task.config.scorer == "embedding") {
            Model probe_model(prepared.model_config, mix_seed(0, "scorer"));
            std::vector<std::string> probe_docs = task.split.train.examples.front().docs;
            EmbeddingScorer scorer(probe_model, prepared.vocab, probe_docs, prepared.model_config.max_len);
            task.pool = select_pool(task.candidates, static_cast<std::size_t>(task.config.pool_size), scorer,
                                    task.config.min_dissimilarity);
        } else if (task.config.scorer == "jaccard") {
            task.pool = select_pool(task.candidates, static_cast<std::size_t>(task.config.pool_size), JaccardScorer{},
                                    task.config.min_dissimilarity);
        } else {
            fail(Errc::ConfigError, "unknown scorer: " + task.config.scorer);
        }
        task.fiter_template =
            task.config.fiter_template ? PromptTemplate::parse(*task.config.fiter_template) : task.pool->templates.front();
    }
    return prepared;
}

// ---- aggregation ----

RunReport aggregate_report(std::vector<ArmResult> raw, std::vector<std::string> task_names,
                           std::vector<MetricKind> task_metrics, std::vector<StrategyKind> strategies) {
    if (std::find(strategies.begin(), strategies.end(), StrategyKind::PftCls) == strategies.end())
        fail(Errc::MissingBaseline, "improvement percentages need the PFt-CLS baseline");

    RunReport report;
    report.task_names = std::move(task_names);
    report.task_metrics = std::move(task_metrics);
    report.strategies = std::move(strategies);
    report.raw = std::move(raw);

    for (std::size_t ti = 0; ti < report.task_names.size(); ++ti) {
        const std::string& task = report.task_names[ti];
        for (StrategyKind strategy : report.strategies) {
            double sum = 0.0;
            int n = 0;
            for (const auto& arm : report.raw) {
                if (arm.task == task && arm.strategy == strategy) {
                    sum += arm.metric;
                    ++n;
                }
            }
            if (n == 0) fail(Errc::DatasetError, "missing arm results for " + task + "/" + strategy_name(strategy));
            report.mean_metric[{task, strategy}] = sum / n;
        }
    }

    for (std::size_t ti = 0; ti < report.task_names.size(); ++ti) {
        const std::string& task = report.task_names[ti];
        const double baseline = report.mean_metric.at({task, StrategyKind::PftCls});
        const bool higher = higher_is_better(report.task_metrics[ti]);
        for (StrategyKind strategy : report.strategies)
            report.improvement[{task, strategy}] =
                improvement_pct(baseline, report.mean_metric.at({task, strategy}), higher);
    }

    for (StrategyKind strategy : report.strategies) {
        std::vector<double> row;
        for (const std::string& task : report.task_names) row.push_back(report.improvement.at({task, strategy}));
        report.avg_improvement[strategy] = average_improvement(row);
    }
    return report;
}

// ---- experiment drivers ----

RunReport run_comparison(const PreparedExperiment& prepared) {
    const auto& cfg = prepared.config;
    const std::vector<Model> pretrained = pretrain_per_seed(prepared);

    std::vector<Arm> arms;
    for (std::size_t ti = 0; ti < prepared.tasks.size(); ++ti)
        for (StrategyKind strategy : cfg.strategies)
            for (std::uint64_t seed : cfg.seeds) arms.push_back({ti, strategy, seed});

    std::vector<ArmResult> results(arms.size());
    run_jobs(arms.size(), [&](std::size_t i) {
        const Arm& arm = arms[i];
        std::size_t seed_index = 0;
        while (cfg.seeds[seed_index] != arm.seed) ++seed_index;
        const double metric = run_arm(prepared, pretrained[seed_index], prepared.tasks[arm.task_index], arm.strategy,
                                      arm.seed);
        results[i] = {prepared.tasks[arm.task_index].config.name, arm.strategy, arm.seed, metric};
    });

    std::vector<std::string> names;
    std::vector<MetricKind> metrics;
    for (const auto& t : prepared.tasks) {
        names.push_back(t.config.name);
        metrics.push_back(t.config.metric);
    }
    return aggregate_report(std::move(results), std::move(names), std::move(metrics), cfg.strategies);
}

RunReport run_comparison(const ExperimentConfig& config) { return run_comparison(prepare_experiment(config)); }

AblationCurve build_ablation_curve(std::vector<AblationPoint> points) {
    AblationCurve curve;
    curve.monotone_non_decreasing = true;
    for (std::size_t i = 1; i < points.size(); ++i)
        if (points[i].avg_improvement < points[i - 1].avg_improvement) curve.monotone_non_decreasing = false;
    curve.points = std::move(points);
    return curve;
}

AblationCurve run_pool_ablation(const PreparedExperiment& prepared, const std::vector<int>& pool_sizes) {
    if (pool_sizes.empty()) fail(Errc::ConfigError, "at least one pool size is required");
    const auto& cfg = prepared.config;

    int max_size = 0;
    for (int s : pool_sizes) {
        if (s < 1) fail(Errc::ConfigError, "pool sizes must be >= 1");
        max_size = std::max(max_size, s);
    }
    for (const auto& task : prepared.tasks)
        if (task.candidates.size() < static_cast<std::size_t>(max_size))
            fail(Errc::NotEnoughCandidates, "task '" + task.config.name + "' has " +
                                                std::to_string(task.candidates.size()) + " candidates, need " +
                                                std::to_string(max_size));

    const std::vector<Model> pretrained = pretrain_per_seed(prepared);

    // PFt-CLS baseline arms are pool-size independent; run them once.
    struct Job {
        int pool_size; // 0 => baseline
        std::size_t task_index;
        std::size_t seed_index;
    };
    std::vector<Job> jobs;
    for (std::size_t ti = 0; ti < prepared.tasks.size(); ++ti)
        for (std::size_t si = 0; si < cfg.seeds.size(); ++si) jobs.push_back({0, ti, si});
    for (int size : pool_sizes)
        for (std::size_t ti = 0; ti < prepared.tasks.size(); ++ti)
            for (std::size_t si = 0; si < cfg.seeds.size(); ++si) jobs.push_back({size, ti, si});

    // Pools per (size, task), selected up front.
    std::map<std::pair<int, std::size_t>, PreparedTask> variants;
    for (int size : pool_sizes) {
        for (std::size_t ti = 0; ti < prepared.tasks.size(); ++ti) {
            PreparedTask variant = prepared.tasks[ti];
            variant.pool = select_pool(variant.candidates, static_cast<std::size_t>(size), JaccardScorer{},
                                       variant.config.min_dissimilarity);
            variants.emplace(std::make_pair(size, ti), std::move(variant));
        }
    }

    std::vector<double> metrics(jobs.size());
    run_jobs(jobs.size(), [&](std::size_t i) {
        const Job& job = jobs[i];
        const PreparedTask& task = job.pool_size == 0 ? prepared.tasks[job.task_index]
                                                      : variants.at({job.pool_size, job.task_index});
        metrics[i] = run_arm(prepared, pretrained[job.seed_index], task,
                             job.pool_size == 0 ? StrategyKind::PftCls : StrategyKind::Dynamar,
                             cfg.seeds[job.seed_index]);
    });

    // Aggregate: mean per (pool_size, task), improvement vs the baseline
    // mean, averaged across tasks.
    std::map<std::pair<int, std::size_t>, double> mean;
    std::map<std::pair<int, std::size_t>, int> count;
    for (std::size_t i = 0; i < jobs.size(); ++i) {
        mean[{jobs[i].pool_size, jobs[i].task_index}] += metrics[i];
        count[{jobs[i].pool_size, jobs[i].task_index}] += 1;
    }
    for (auto& [key, value] : mean) value /= count.at(key);

    AblationCurve curve;
    std::vector<AblationPoint> points;
    for (int size : pool_sizes) {
        std::vector<double> improvements;
        for (std::size_t ti = 0; ti < prepared.tasks.size(); ++ti) {
            const double baseline = mean.at({0, ti});
            const bool higher = higher_is_better(prepared.tasks[ti].config.metric);
            improvements.push_back(improvement_pct(baseline, mean.at({size, ti}), higher));
            curve.mean_metric[{size, prepared.tasks[ti].config.name}] = mean.at({size, ti});
        }
        points.push_back({size, average_improvement(improvements)});
    }
    auto built = build_ablation_curve(std::move(points));
    built.mean_metric = std::move(curve.mean_metric);
    return built;
}

AblationCurve run_pool_ablation(const ExperimentConfig& config, const std::vector<int>& pool_sizes) {
    return run_pool_ablation(prepare_experiment(config), pool_sizes);
}

// ---- emitters ----

void emit_report(const RunReport& report, const std::filesystem::path& out_dir, const std::set<ReportFormat>& formats) {
    if (report.strategies.empty()) fail(Errc::InvalidParams, "report has no strategies");
    if (report.task_names.empty()) fail(Errc::InvalidParams, "report has no tasks");
    std::filesystem::create_directories(out_dir);

    if (formats.count(ReportFormat::Csv)) {
        {
            std::ofstream raw(out_dir / "raw.csv");
            if (!raw) fail(Errc::IoError, "cannot write raw.csv");
            raw << "task,strategy,seed,metric\n";
            for (const auto& arm : report.raw)
                raw << arm.task << ',' << strategy_name(arm.strategy) << ',' << arm.seed << ','
                    << fmt_double(arm.metric) << '\n';
        }
        {
            std::ofstream summary(out_dir / "summary.csv");
            if (!summary) fail(Errc::IoError, "cannot write summary.csv");
            summary << "task,strategy,mean,improvement_pct\n";
            for (const auto& task : report.task_names)
                for (StrategyKind strategy : report.strategies)
                    summary << task << ',' << strategy_name(strategy) << ','
                            << fmt_double(report.mean_metric.at({task, strategy})) << ','
                            << fmt_double(report.improvement.at({task, strategy})) << '\n';
        }
    }

    if (formats.count(ReportFormat::Markdown)) {
        std::ofstream md(out_dir / "report.md");
        if (!md) fail(Errc::IoError, "cannot write report.md");
        md << "| Ft Method |";
        for (const auto& task : report.task_names) md << ' ' << task << " |";
        md << " Avg |\n|---|";
        for (std::size_t i = 0; i < report.task_names.size(); ++i) md << "---|";
        md << "---|\n";
        for (StrategyKind strategy : report.strategies) {
            md << "| " << strategy_display_name(strategy) << " |";
            for (const auto& task : report.task_names) {
                if (strategy == StrategyKind::PftCls)
                    md << " 0 |";
                else
                    md << ' ' << fmt_pct(report.improvement.at({task, strategy})) << " |";
            }
            if (strategy == StrategyKind::PftCls)
                md << " 0 |\n";
            else
                md << ' ' << fmt_pct(report.avg_improvement.at(strategy)) << " |\n";
        }
    }
}

void emit_ablation(const AblationCurve& curve, const std::filesystem::path& out_dir) {
    if (curve.points.empty()) fail(Errc::InvalidParams, "ablation curve has no points");
    std::filesystem::create_directories(out_dir);
    std::ofstream out(out_dir / "plotdata.csv");
    if (!out) fail(Errc::IoError, "cannot write plotdata.csv");
    out << "pool_size,avg_improvement\n";
    for (const auto& p : curve.points) out << p.pool_size << ',' << fmt_double(p.avg_improvement) << '\n';
}

} // namespace dynamar
