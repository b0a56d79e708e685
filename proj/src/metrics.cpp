#include "ahmood/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <string>

#include "ahmood/errors.hpp"

namespace ahmood {

namespace {

void check_non_empty(const BinaryScoreSet& s) {
    if (s.id_scores.empty() || s.ood_scores.empty())
        throw ContractError("metric needs at least one ID and one OOD score");
}

}  // namespace

double auroc_pairwise(const BinaryScoreSet& s) {
    check_non_empty(s);
    // Counted in half-units so the sum stays an exact integer.
    unsigned long long twice_wins = 0;
    for (double a : s.id_scores) {
        for (double b : s.ood_scores) {
            if (a > b) twice_wins += 2;
            else if (a == b) twice_wins += 1;
        }
    }
    const double pairs = static_cast<double>(s.id_scores.size()) * static_cast<double>(s.ood_scores.size());
    return static_cast<double>(twice_wins) / (2.0 * pairs);
}

double auroc_ranked(const BinaryScoreSet& s) {
    check_non_empty(s);
    struct Entry {
        double score;
        bool is_id;
    };
    std::vector<Entry> all;
    all.reserve(s.id_scores.size() + s.ood_scores.size());
    for (double v : s.id_scores) all.push_back({v, true});
    for (double v : s.ood_scores) all.push_back({v, false});
    std::sort(all.begin(), all.end(), [](const Entry& a, const Entry& b) { return a.score < b.score; });

    // Sum of doubled midranks (1-based) of ID scores.
    unsigned long long twice_rank_sum = 0;
    for (std::size_t i = 0; i < all.size();) {
        std::size_t j = i;
        while (j < all.size() && all[j].score == all[i].score) ++j;
        const unsigned long long twice_mid = (i + 1) + j;  // 2 × average of ranks i+1..j
        for (std::size_t k = i; k < j; ++k)
            if (all[k].is_id) twice_rank_sum += twice_mid;
        i = j;
    }
    const unsigned long long n_id = s.id_scores.size();
    const unsigned long long twice_u = twice_rank_sum - n_id * (n_id + 1);
    const double pairs = static_cast<double>(n_id) * static_cast<double>(s.ood_scores.size());
    return static_cast<double>(twice_u) / (2.0 * pairs);
}

double auroc(const BinaryScoreSet& s) {
    check_non_empty(s);
    const double pairs = static_cast<double>(s.id_scores.size()) * static_cast<double>(s.ood_scores.size());
    return pairs <= 1e7 ? auroc_pairwise(s) : auroc_ranked(s);
}

double fpr_at_tpr(const BinaryScoreSet& s, double tpr_target) {
    check_non_empty(s);
    if (!(tpr_target > 0.0 && tpr_target <= 1.0))
        throw ContractError("tpr_target must be in (0, 1]");
    std::vector<double> id = s.id_scores;
    std::sort(id.begin(), id.end(), std::greater<>());
    const double n_id = static_cast<double>(id.size());
    // Walking thresholds downward, the first ID score reaching the target TPR is τ.
    double tau = id.back();
    for (std::size_t i = 0; i < id.size(); ++i) {
        std::size_t j = i;
        while (j + 1 < id.size() && id[j + 1] == id[i]) ++j;
        if (static_cast<double>(j + 1) / n_id >= tpr_target) {
            tau = id[i];
            break;
        }
        i = j;
    }
    const auto accepted = std::count_if(s.ood_scores.begin(), s.ood_scores.end(),
                                        [&](double v) { return v >= tau; });
    return static_cast<double>(accepted) / static_cast<double>(s.ood_scores.size());
}

double silhouette(const Matrix& features, std::span<const int> labels) {
    if (labels.size() != features.rows()) throw ShapeError("silhouette: labels/features mismatch");
    std::map<int, std::size_t> cluster_index;
    for (int l : labels) cluster_index.emplace(l, 0);
    if (cluster_index.size() < 2) throw ContractError("silhouette needs at least two clusters");
    std::size_t next = 0;
    for (auto& [label, idx] : cluster_index) idx = next++;

    const std::size_t n = features.rows();
    const std::size_t k = cluster_index.size();
    std::vector<std::size_t> cluster(n);
    std::vector<std::size_t> sizes(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
        cluster[i] = cluster_index[labels[i]];
        ++sizes[cluster[i]];
    }

    double total = 0.0;
    std::vector<double> dist_sum(k);
    for (std::size_t i = 0; i < n; ++i) {
        std::fill(dist_sum.begin(), dist_sum.end(), 0.0);
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            dist_sum[cluster[j]] += std::sqrt(squared_distance(features.row(i), features.row(j)));
        }
        const std::size_t own = cluster[i];
        if (sizes[own] < 2) continue;
        const double a = dist_sum[own] / static_cast<double>(sizes[own] - 1);
        double b = std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < k; ++c)
            if (c != own) b = std::min(b, dist_sum[c] / static_cast<double>(sizes[c]));
        const double denom = std::max(a, b);
        if (denom > 0.0) total += (b - a) / denom;
    }
    return total / static_cast<double>(n);
}

RunAggregate aggregate_values(std::span<const double> values) {
    if (values.empty()) throw ContractError("cannot aggregate zero runs");
    RunAggregate r;
    for (double v : values) r.mean += v;
    r.mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - r.mean) * (v - r.mean);
    r.stddev = std::sqrt(var / static_cast<double>(values.size()));
    return r;
}

MetricSummary aggregate_runs(std::span<const double> aurocs, std::span<const double> fprs) {
    if (aurocs.size() != fprs.size()) throw ShapeError("aggregate_runs: AUROC/FPR run counts differ");
    const RunAggregate a = aggregate_values(aurocs);
    const RunAggregate f = aggregate_values(fprs);
    return {a.mean, a.stddev, f.mean, f.stddev, aurocs.size()};
}

}  // namespace ahmood
