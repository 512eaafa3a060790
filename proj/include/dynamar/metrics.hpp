#pragma once

#include <string>
#include <vector>

namespace dynamar {

enum class MetricKind { Prauc, Accuracy, Rmse };

/// RMSE is lower-better; PRAUC and accuracy are higher-better.
bool higher_is_better(MetricKind kind);
std::string metric_name(MetricKind kind);
MetricKind metric_from_name(const std::string& name);

/// Average precision over a binary ranking: sort by score descending
/// (ties stable by input index), then sum precision@rank * delta-recall
/// over the positive ranks.
double prauc(const std::vector<double>& scores, const std::vector<int>& labels);

double accuracy(const std::vector<int>& predicted, const std::vector<int>& gold);

double rmse(const std::vector<double>& predicted, const std::vector<double>& gold);

/// Signed percent change where positive always means improvement,
/// regardless of the metric direction.
double improvement_pct(double baseline, double candidate, bool metric_higher_is_better);

double average_improvement(const std::vector<double>& row);

} // namespace dynamar
