#include "dynamar/metrics.hpp"

#include "dynamar/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace dynamar {

bool higher_is_better(MetricKind kind) { return kind != MetricKind::Rmse; }

std::string metric_name(MetricKind kind) {
    switch (kind) {
    case MetricKind::Prauc: return "prauc";
    case MetricKind::Accuracy: return "accuracy";
    case MetricKind::Rmse: return "rmse";
    }
    return "?";
}

MetricKind metric_from_name(const std::string& name) {
    if (name == "prauc") return MetricKind::Prauc;
    if (name == "accuracy") return MetricKind::Accuracy;
    if (name == "rmse") return MetricKind::Rmse;
    fail(Errc::ConfigError, "unknown metric: " + name);
}

double prauc(const std::vector<double>& scores, const std::vector<int>& labels) {
    if (scores.size() != labels.size())
        fail(Errc::LengthMismatch, std::to_string(scores.size()) + " scores vs " + std::to_string(labels.size()) +
                                       " labels");
    if (scores.empty()) fail(Errc::LengthMismatch, "empty input");

    const long positives = std::count(labels.begin(), labels.end(), 1);
    if (positives == 0) fail(Errc::NoPositives, "PRAUC needs at least one positive label");

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    double ap = 0.0;
    long hits = 0;
    for (std::size_t rank = 0; rank < order.size(); ++rank) {
        if (labels[order[rank]] == 1) {
            ++hits;
            ap += static_cast<double>(hits) / static_cast<double>(rank + 1);
        }
    }
    return ap / static_cast<double>(positives);
}

double accuracy(const std::vector<int>& predicted, const std::vector<int>& gold) {
    if (predicted.size() != gold.size()) fail(Errc::LengthMismatch, "prediction/gold length mismatch");
    if (predicted.empty()) fail(Errc::LengthMismatch, "empty input");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < predicted.size(); ++i)
        if (predicted[i] == gold[i]) ++correct;
    return static_cast<double>(correct) / static_cast<double>(predicted.size());
}

double rmse(const std::vector<double>& predicted, const std::vector<double>& gold) {
    if (predicted.size() != gold.size()) fail(Errc::LengthMismatch, "prediction/gold length mismatch");
    if (predicted.empty()) fail(Errc::LengthMismatch, "empty input");
    double sq = 0.0;
    for (std::size_t i = 0; i < predicted.size(); ++i) {
        const double d = predicted[i] - gold[i];
        sq += d * d;
    }
    return std::sqrt(sq / static_cast<double>(predicted.size()));
}

double improvement_pct(double baseline, double candidate, bool metric_higher_is_better) {
    if (baseline == 0.0) fail(Errc::ZeroBaseline, "improvement undefined for zero baseline");
    const double delta = metric_higher_is_better ? candidate - baseline : baseline - candidate;
    return 100.0 * delta / baseline;
}

double average_improvement(const std::vector<double>& row) {
    if (row.empty()) fail(Errc::LengthMismatch, "empty improvement row");
    return std::accumulate(row.begin(), row.end(), 0.0) / static_cast<double>(row.size());
}

} // namespace dynamar
