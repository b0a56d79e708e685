// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fail.
// Usage: acceptance <path-to-ahm-ood> <config.json> [criterion number...]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <sstream>
#include <string>

#include "ahmood/ahm_search.hpp"
#include "ahmood/harness.hpp"
#include "data_checks.hpp"
#include "metric_oracles.hpp"
#include "test_support.hpp"

using namespace ahmood;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

Outcome gradient_check() {
    const auto t0 = std::chrono::steady_clock::now();
    std::mt19937_64 rng(2024);
    double worst = 0.0;
    std::string where;
    std::size_t coords = 0;
    const int configs = 5;
    for (int t = 0; t < configs; ++t) {
        const auto c = testsupport::random_tiny_config(rng);
        const auto params = testsupport::random_params(c, rng);
        const auto doc = testsupport::random_document(c, rng);
        const auto r = testsupport::finite_difference_check(params, doc, *doc.label, rng, 5, 1e-4);
        coords += r.coordinates;
        if (r.worst_error > worst) {
            worst = r.worst_error;
            where = r.worst_tensor;
        }
    }
    const double secs = seconds_since(t0);
    return {worst < 1e-4 && secs < 60.0,
            std::to_string(configs) + " configs, " + std::to_string(coords) + " coordinates, max rel err " +
                fmt("%.2e", worst) + " (" + where + "), " + fmt("%.2fs", secs)};
}

Outcome identity_mask() {
    std::mt19937_64 rng(7);
    const ModelConfig c;
    const auto params = testsupport::random_params(c, rng, 0.3);
    std::size_t mismatched = 0;
    for (int i = 0; i < 100; ++i) {
        const auto doc = testsupport::random_document(c, rng);
        if (forward(params, doc, AttentionHeadMask::all_ones(c)).logits != testsupport::reference_logits(params, doc))
            ++mismatched;
    }
    return {mismatched == 0, "100 documents, " + std::to_string(mismatched) + " not bit-identical"};
}

Outcome mask_counts() {
    std::mt19937_64 rng(11);
    std::size_t bad = 0, total = 0;
    for (std::size_t h : {4u, 8u, 12u}) {
        for (double p : {0.1, 0.2}) {
            ModelConfig c;
            c.num_heads = h;
            c.hidden = h * 4;
            const std::size_t m = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(p * h)));
            for (int t = 0; t < 167; ++t) {
                const auto mask = sample_mask(c, p, rng);
                ++total;
                for (std::size_t l = 0; l < c.num_layers; ++l)
                    if (mask.zeros_in_layer(l) != m) {
                        ++bad;
                        break;
                    }
            }
        }
    }
    return {bad == 0 && total >= 1000, std::to_string(total) + " masks, " + std::to_string(bad) + " with a wrong row count"};
}

Outcome identity_ensemble() {
    SyntheticSpec spec;
    spec.num_classes = 5;
    spec.docs_per_class = 20;
    const auto split = with_contiguous_labels(make_intra_split(generate(spec), 4, SplitRatios{}, 3));
    ModelConfig mc;
    mc.num_classes = 4;
    const auto params = ModelParams::initialize(mc, 5);
    const auto pretrained = ModelParams::initialize(mc, 6);
    AhmEnsemble identity;
    identity.selected_masks = {AttentionHeadMask::all_ones(mc)};
    const auto train = build_feature_bank(params, pretrained, split.train, &identity);
    const auto ctx = fit_scorer_context(train, mc.num_classes, params.classifier_weight, params.classifier_bias);
    double worst = 0.0;
    for (const auto* docs : {&split.test_id, &split.test_ood}) {
        const auto bank = build_feature_bank(params, pretrained, *docs, &identity);
        for (const auto& [ahm, base] : {std::pair{"knn_AHM", "knn"}, std::pair{"mah_AHM", "Mahalanobis"},
                                        std::pair{"mah_AvgAvg_AHM", "mah_AvgAvg"}}) {
            const auto a = score_dataset(method_from_name(ahm), bank, ctx);
            const auto b = score_dataset(method_from_name(base), bank, ctx);
            for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i].value - b[i].value));
        }
    }
    return {worst <= 1e-12, "max |AHM − baseline| = " + fmt("%.2e", worst)};
}

Outcome metric_oracles() {
    std::mt19937_64 rng(13);
    std::size_t auroc_bad = 0, fpr_bad = 0;
    double sil_worst = 0.0;
    std::normal_distribution<double> n(0.0, 1.0);
    for (int t = 0; t < 200; ++t) {
        const auto s = oracles::random_scores(rng, 100);
        if (auroc(s) != oracles::auroc(s) || auroc_ranked(s) != oracles::auroc(s)) ++auroc_bad;
        if (fpr_at_tpr(s, 0.95) != oracles::fpr_at_tpr(s, 0.95)) ++fpr_bad;

        const std::size_t rows = 2 + rng() % 99;
        Matrix x(rows, 4);
        std::vector<int> labels;
        for (std::size_t i = 0; i < rows; ++i) {
            labels.push_back(static_cast<int>(i < 2 ? i : rng() % 5));
            for (std::size_t c = 0; c < 4; ++c) x(i, c) = n(rng) + 0.5 * labels.back();
        }
        sil_worst = std::max(sil_worst, std::abs(silhouette(x, labels) - oracles::silhouette(x, labels)));
    }
    return {auroc_bad == 0 && fpr_bad == 0 && sil_worst <= 1e-10,
            "200 instances: AUROC mismatches " + std::to_string(auroc_bad) + ", FPR@95 mismatches " +
                std::to_string(fpr_bad) + ", silhouette max err " + fmt("%.2e", sil_worst)};
}

Outcome scorer_identities() {
    std::mt19937_64 rng(17);
    std::normal_distribution<double> n(0.0, 1.0);
    double mah = 0, vim = 0, kl = 0, gn = 0, en = 0;
    for (int t = 0; t < 100; ++t) {
        const std::size_t d = 2 + rng() % 6, k = 2 + rng() % 5;
        GaussianStats g;
        g.precision = Matrix::identity(d);
        for (std::size_t c = 0; c < k; ++c) {
            Vector mu(d);
            for (double& v : mu) v = 3.0 * n(rng);
            g.class_means.push_back(mu);
        }
        Vector x(d);
        for (double& v : x) v = 3.0 * n(rng);
        double nearest = INFINITY;
        for (const auto& mu : g.class_means) nearest = std::min(nearest, squared_distance(x, mu));
        mah = std::max(mah, std::abs(mahalanobis_score(x, g) + nearest));

        Vector z(k);
        for (double& v : z) v = 4.0 * n(rng);
        // A training set spanning 2 dimensions exactly plus off-subspace noise on one axis.
        Matrix feats(30, d);
        for (std::size_t i = 0; i < 30; ++i)
            for (std::size_t j = 0; j < d; ++j) feats(i, j) = n(rng) * (j < 2 ? 5.0 : 0.01);
        const auto pca = fit_pca(feats, std::min<std::size_t>(2, d - 1));
        Vector inside = pca.mean;
        for (std::size_t r = 0; r < pca.components.rows(); ++r) {
            const double coef = 3.0 * n(rng);
            for (std::size_t j = 0; j < d; ++j) inside[j] += coef * pca.components(r, j);
        }
        vim = std::max(vim, std::abs(vim_score(inside, z, pca, 0.5 + std::abs(n(rng))) - energy(z)));

        const Vector p = softmax(z);
        Matrix templates(2, k, 1.0 / static_cast<double>(k));
        for (std::size_t j = 0; j < k; ++j) templates(1, j) = p[j];
        kl = std::max(kl, std::abs(kl_matching(z, templates)));

        Vector flat(k, n(rng));
        gn = std::max(gn, std::abs(grad_norm(x, flat)));

        const double c = 10.0 * n(rng);
        Vector shifted = z;
        for (double& v : shifted) v += c;
        en = std::max(en, std::abs(energy(shifted) - energy(z) - c));
    }
    const bool ok = mah <= 1e-10 && vim <= 1e-12 && kl == 0.0 && gn == 0.0 && en <= 1e-12;
    return {ok, "mahalanobis vs nearest-mean " + fmt("%.1e", mah) + ", vim vs energy " + fmt("%.1e", vim) +
                    ", kl at template " + fmt("%.1e", kl) + ", gradNorm at uniform " + fmt("%.1e", gn) +
                    ", energy shift " + fmt("%.1e", en)};
}

Outcome end_to_end(const std::string& config_path) {
    ExperimentConfig c = load_config(config_path);
    const auto t0 = std::chrono::steady_clock::now();
    OodEvalReport report;
    try {
        report = run_experiment(c);
    } catch (const std::exception& e) {
        return {false, std::string("experiment failed: ") + e.what()};
    }
    const double secs = seconds_since(t0);
    std::map<std::string, double> mean;
    for (const auto& row : report.rows) mean[std::string(method_name(row.method))] = row.summary.auroc_mean;

    bool ok = secs < 15 * 60;
    std::ostringstream os;
    for (const auto& [ahm, base] : {std::pair{"mah_AHM", "Mahalanobis"}, std::pair{"knn_AHM", "knn"},
                                    std::pair{"mah_AvgAvg_AHM", "mah_AvgAvg"}}) {
        const bool pair_ok = mean.count(ahm) && mean.count(base) && mean[ahm] >= mean[base] - 0.01;
        ok = ok && pair_ok;
        os << ahm << ' ' << fmt("%.4f", mean[ahm]) << " vs " << base << ' ' << fmt("%.4f", mean[base]) << "; ";
    }
    double lowest = 1.0;
    std::string lowest_name;
    for (const auto& [name, v] : mean)
        if (v < lowest) {
            lowest = v;
            lowest_name = name;
        }
    ok = ok && lowest > 0.5 && mean.size() == all_methods().size();
    os << "min AUROC " << fmt("%.4f", lowest) << " (" << lowest_name << "); " << c.seeds.size() << " seeds in "
       << fmt("%.1fs", secs);
    return {ok, os.str()};
}

Outcome cli_reproducible(const std::string& binary, const std::string& config_path) {
    const fs::path root = fs::temp_directory_path() / "ahmood_acceptance_repro";
    fs::remove_all(root);
    std::string reports[2];
    for (int i = 0; i < 2; ++i) {
        const fs::path out = root / ("run" + std::to_string(i));
        const std::string cmd = "\"" + binary + "\" run-all --config \"" + config_path +
                                "\" --seed 0 --seed 1 --out \"" + out.string() + "\" --format csv > \"" +
                                (root / ("stdout" + std::to_string(i))).string() + "\" 2>&1";
        fs::create_directories(root);
        if (std::system(cmd.c_str()) != 0) return {false, "run-all exited nonzero: " + cmd};
        std::ifstream in(out / "report.csv");
        std::ostringstream s;
        s << in.rdbuf();
        reports[i] = s.str();
    }
    const bool same = !reports[0].empty() && reports[0] == reports[1];
    fs::remove_all(root);
    return {same, "two run-all invocations (seeds 0,1): report.csv " + std::string(same ? "identical" : "differs") +
                      ", " + std::to_string(reports[0].size()) + " bytes"};
}

Outcome data_round_trip() {
    std::mt19937_64 rng(19);
    std::size_t bad_io = 0, bad_split = 0;
    std::string first;
    for (int t = 0; t < 100; ++t) {
        const auto spec = datachecks::random_spec(rng);
        const auto corpus = generate(spec);
        const auto split = make_intra_split(corpus, static_cast<int>(rng() % spec.num_classes),
                                            datachecks::random_ratios(rng), rng());
        if (!datachecks::round_trips(split)) ++bad_io;
    }
    for (int t = 0; t < 100; ++t) {
        const auto spec = datachecks::random_spec(rng);
        DatasetSplit split;
        if (t % 2 == 0) {
            split = make_intra_split(generate(spec), static_cast<int>(rng() % spec.num_classes),
                                     datachecks::random_ratios(rng), rng());
        } else {
            auto other = datachecks::random_spec(rng);
            other.id_prefix = "ext";
            split = make_cross_split(generate(spec), generate(other), datachecks::random_ratios(rng), rng());
        }
        const auto v = datachecks::split_violation(split);
        if (!v.empty()) {
            ++bad_split;
            if (first.empty()) first = v;
        }
    }
    return {bad_io == 0 && bad_split == 0,
            "100 corpora: " + std::to_string(bad_io) + " round-trip failures; 100 splits: " +
                std::to_string(bad_split) + " violations" + (first.empty() ? "" : " (" + first + ")")};
}

}  // namespace

int main(int argc, char** argv) {
    if (argc < 3) {
        std::fprintf(stderr, "usage: %s <ahm-ood binary> <config.json> [criterion...]\n", argv[0]);
        return 2;
    }
    const std::string binary = argv[1], config = argv[2];
    const std::pair<const char*, std::function<Outcome()>> criteria[] = {
        {"gradient check", gradient_check},
        {"all-ones mask is bit-identical", identity_mask},
        {"sampled mask row counts", mask_counts},
        {"single all-ones ensemble equals baselines", identity_ensemble},
        {"metrics match brute-force oracles", metric_oracles},
        {"scorer identities", scorer_identities},
        {"end-to-end synthetic benchmark", [&] { return end_to_end(config); }},
        {"run-all reproducibility", [&] { return cli_reproducible(binary, config); }},
        {"dataset round trip and split invariants", data_round_trip},
    };
    std::vector<int> only;
    for (int i = 3; i < argc; ++i) only.push_back(std::atoi(argv[i]));
    int failures = 0, run = 0;
    int index = 0;
    for (const auto& [name, fn] : criteria) {
        ++index;
        if (!only.empty() && std::find(only.begin(), only.end(), index) == only.end()) continue;
        ++run;
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        failures += !o.pass;
        std::printf("%s [%d] %s: %s\n", o.pass ? "PASS" : "FAIL", index, name, o.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%d of %d criteria passed\n", run - failures, run);
    return failures == 0 ? 0 : 1;
}
