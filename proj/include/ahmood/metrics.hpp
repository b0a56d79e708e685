#pragma once

#include <span>
#include <vector>

#include "ahmood/linalg.hpp"

namespace ahmood {

struct BinaryScoreSet {
    std::vector<double> id_scores;
    std::vector<double> ood_scores;
};

struct MetricSummary {
    double auroc_mean = 0.0;
    double auroc_std = 0.0;
    double fpr_mean = 0.0;
    double fpr_std = 0.0;
    std::size_t n_runs = 0;
};

// P(id > ood) + ½·P(id = ood). Exact pair enumeration up to 1e7 pairs,
// rank-based (midranks) beyond. Both throw ContractError on an empty side.
double auroc(const BinaryScoreSet& scores);
double auroc_pairwise(const BinaryScoreSet& scores);
double auroc_ranked(const BinaryScoreSet& scores);

// Threshold τ is the largest value with fraction(id ≥ τ) ≥ tpr_target;
// returns fraction(ood ≥ τ).
double fpr_at_tpr(const BinaryScoreSet& scores, double tpr_target = 0.95);

// Mean silhouette coefficient with euclidean distances. Singleton clusters
// and points with a = b = 0 contribute s(i) = 0.
double silhouette(const Matrix& features, std::span<const int> labels);

struct RunAggregate {
    double mean = 0.0;
    double stddev = 0.0;  // population
};

RunAggregate aggregate_values(std::span<const double> values);
MetricSummary aggregate_runs(std::span<const double> aurocs, std::span<const double> fprs);

}  // namespace ahmood
