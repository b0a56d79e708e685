#include <cmath>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "ahmood/data.hpp"
#include "ahmood/errors.hpp"
#include "data_checks.hpp"
#include "doctest.h"

using namespace ahmood;
using namespace datachecks;

namespace {

std::map<int, std::size_t> label_counts(const std::vector<DocumentInput>& docs) {
    std::map<int, std::size_t> out;
    for (const auto& d : docs) ++out[d.label.value_or(-1)];
    return out;
}

}  // namespace

TEST_CASE("generation is deterministic and follows the corpus settings") {
    SyntheticSpec s;
    const auto a = generate(s), b = generate(s);
    CHECK(a == b);
    CHECK(a.size() == s.num_classes * s.docs_per_class);
    s.seed = 1;
    CHECK_FALSE(generate(s) == a);
    for (const auto& d : a) {
        CHECK(d.text_token_ids.size() >= s.min_tokens);
        CHECK(d.text_token_ids.size() <= s.max_tokens);
        CHECK(d.patch_vectors.size() >= s.min_tokens);
        CHECK(d.patch_vectors.size() <= s.max_tokens);
        for (int t : d.text_token_ids) CHECK(static_cast<std::size_t>(t) < s.text_vocab);
        for (const auto& p : d.patch_vectors) CHECK(p.size() == s.num_patch_features);
    }
    std::set<std::string> ids;
    for (const auto& d : a) ids.insert(d.id);
    CHECK(ids.size() == a.size());
}

TEST_CASE("class vocabularies share exactly the overlap pool") {
    SyntheticSpec s;
    s.num_classes = 4;
    s.text_vocab = 50;  // slices of 10
    s.class_vocab_overlap = 0.0;
    s.docs_per_class = 200;
    const auto corpus = generate(s);
    std::vector<std::set<int>> vocab(4);
    for (const auto& d : corpus)
        for (int t : d.text_token_ids) vocab[static_cast<std::size_t>(*d.label)].insert(t);
    for (std::size_t a = 0; a < 4; ++a) {
        CHECK(vocab[a].size() == 10);
        for (std::size_t b = a + 1; b < 4; ++b)
            for (int t : vocab[a]) CHECK(vocab[b].count(t) == 0);
    }
    s.class_vocab_overlap = 1.0;
    std::vector<std::set<int>> shared(4);
    for (const auto& d : generate(s))
        for (int t : d.text_token_ids) shared[static_cast<std::size_t>(*d.label)].insert(t);
    for (std::size_t c = 1; c < 4; ++c) CHECK(shared[c] == shared[0]);
}

TEST_CASE("patch means sit on distinct scaled vertices") {
    SyntheticSpec s;
    s.num_classes = 3;
    s.num_patch_features = 5;
    s.patch_noise_std = 0.0;
    s.patch_mean_separation = 2.5;
    std::map<int, std::set<std::size_t>> hot;
    for (const auto& d : generate(s))
        for (const auto& p : d.patch_vectors) {
            double total = 0;
            for (std::size_t f = 0; f < p.size(); ++f)
                if (p[f] != 0.0) {
                    CHECK(p[f] == 2.5);
                    hot[*d.label].insert(f);
                }
            for (double v : p) total += v;
            CHECK(total == 2.5);
        }
    std::set<std::size_t> all;
    for (const auto& [label, features] : hot) {
        CHECK(features.size() == 1);
        all.insert(*features.begin());
    }
    CHECK(all.size() == 3);
}

TEST_CASE("spec validation") {
    SyntheticSpec s;
    s.text_vocab = 5;
    CHECK_THROWS_AS(generate(s), ContractError);
    s = SyntheticSpec{};
    s.docs_per_class = 3;
    CHECK_THROWS_AS(generate(s), ContractError);
    s = SyntheticSpec{};
    s.max_tokens = 40;
    CHECK_THROWS_AS(generate(s, 64), ContractError);
    s = SyntheticSpec{};
    s.num_patch_features = 4;
    CHECK_THROWS_AS(generate(s), ContractError);
}

TEST_CASE("intra split") {
    const auto corpus = generate(SyntheticSpec{});
    const auto split = make_intra_split(corpus, 3, SplitRatios{}, 7);
    CHECK(split_violation(split).empty());
    CHECK(train_label_set(split).size() == 9);
    CHECK(split.test_ood.size() == 60);
    for (const auto& d : split.test_ood) CHECK(*d.label == 3);
    const auto train = label_counts(split.train), eval = label_counts(split.eval_id),
               test = label_counts(split.test_id);
    for (const auto& [label, n] : train) {
        CHECK(std::abs(static_cast<double>(n) - 0.70 * 60) <= 1.0);
        CHECK(std::abs(static_cast<double>(eval.at(label)) - 0.15 * 60) <= 1.0);
        CHECK(std::abs(static_cast<double>(test.at(label)) - 0.15 * 60) <= 1.0);
    }
    CHECK(make_intra_split(corpus, 3, SplitRatios{}, 7) == split);
    CHECK_FALSE(make_intra_split(corpus, 3, SplitRatios{}, 8) == split);
    CHECK_THROWS_AS(make_intra_split(corpus, 42, SplitRatios{}, 0), ContractError);
    CHECK_THROWS_AS(make_intra_split(corpus, 0, SplitRatios{0.5, 0.5, 0.5}, 0), ContractError);
}

TEST_CASE("cross split") {
    SyntheticSpec sa, sb;
    sa.num_classes = 4;
    sb.num_classes = 3;
    sb.seed = 9;
    sb.id_prefix = "ext";
    const auto a = generate(sa), b = generate(sb);
    const auto split = make_cross_split(a, b, SplitRatios{}, 1);
    CHECK(split.test_ood.size() == b.size());
    CHECK(split.train.size() + split.eval_id.size() + split.test_id.size() == a.size());
    CHECK(split_violation(split).empty());
    const auto swapped = make_cross_split(b, a, SplitRatios{}, 1);
    CHECK(swapped.test_ood.size() == a.size());
    CHECK(swapped.train.size() + swapped.eval_id.size() + swapped.test_id.size() == b.size());
    CHECK(split_violation(swapped).empty());
    CHECK_THROWS_AS(make_cross_split(a, a, SplitRatios{}, 1), ContractError);
}

TEST_CASE("contiguous relabelling") {
    const auto split = make_intra_split(generate(SyntheticSpec{}), 0, SplitRatios{}, 2);
    const auto c = with_contiguous_labels(split);
    CHECK(train_label_set(c) == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7, 8});
    for (std::size_t i = 0; i < split.train.size(); ++i) CHECK(*c.train[i].label == *split.train[i].label - 1);
    CHECK(c.test_ood == split.test_ood);
}

TEST_CASE("random corpora and splits survive save and load") {
    std::mt19937_64 rng(11);
    for (int t = 0; t < 100; ++t) {
        const auto spec = random_spec(rng);
        const auto corpus = generate(spec);
        const int ood = static_cast<int>(rng() % spec.num_classes);
        auto split = make_intra_split(corpus, ood, random_ratios(rng), rng());
        if (!split.test_ood.empty()) split.test_ood.front().label.reset();
        INFO("trial " << t);
        CHECK(split_violation(split).empty());
        CHECK(round_trips(split));
    }
}

TEST_CASE("jsonl format details") {
    DatasetSplit s;
    s.ood_descriptor = "class 1";
    DocumentInput d;
    d.id = "x";
    d.text_token_ids = {1, 2};
    d.patch_vectors = {{0.1, 1e-300}};
    s.test_ood.push_back(d);
    std::stringstream buf;
    save_split(s, buf);
    CHECK(buf.str().find("\"label\":null") != std::string::npos);
    CHECK(load_split(buf) == s);

    std::stringstream bad;
    bad << "{\"protocol\":\"intra\",\"ood_descriptor\":\"x\"}\n";
    bad << "{\"id\":\"a\",\"split\":\"train\",\"label\":0,\"text_token_ids\":[1],\"patch_vectors\":[]}\n";
    bad << "{\"id\":\"b\",\"split\":\"train\",\"lab";
    try {
        load_split(bad);
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(e.line() == 3);
    }
    std::stringstream empty;
    CHECK_THROWS_AS(load_split(empty), ParseError);
}
