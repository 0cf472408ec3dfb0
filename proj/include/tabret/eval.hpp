#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "tabret/data.hpp"
#include "tabret/model.hpp"

namespace tabret {

// Mann-Whitney AUC with half-credit ties, rank-sum implementation.
double roc_auc(const std::vector<double>& scores, const std::vector<int>& labels);

struct WelchResult {
    double t = 0.0;
    double df = 0.0;
    double p = 1.0;  // two-sided
};

WelchResult welch_t(const std::vector<double>& a, const std::vector<double>& b);

// Regularized incomplete beta I_x(a, b), continued-fraction evaluation.
double regularized_incomplete_beta(double a, double b, double x);

struct ColumnMetric {
    std::optional<double> rmse;      // numerical columns
    std::optional<double> accuracy;  // categorical columns
    int count = 0;                   // masked, unshuffled entries considered
};

// Per-column reconstruction diagnostics over masked (and unshuffled) entries.
std::map<std::string, ColumnMetric> reconstruction_metrics(
    const Batch& batch, const std::map<std::string, Matrix>& predictions,
    const MaskPlan& plan, const std::vector<ColumnSpec>& features,
    const std::vector<int>* shuffled_columns = nullptr);

}  // namespace tabret
