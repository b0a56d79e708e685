#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "ahmood/model.hpp"

namespace ahmood {

// Two-modality synthetic documents. Each class draws text tokens uniformly
// from its own vocabulary slice (a fraction `class_vocab_overlap` of which is
// shared by all classes) and patch vectors from a Gaussian centred on a
// scaled simplex vertex.
struct SyntheticSpec {
    std::size_t num_classes = 10;
    std::size_t docs_per_class = 60;
    std::size_t text_vocab = 220;
    std::size_t num_patch_features = 16;
    double class_vocab_overlap = 0.25;
    double patch_mean_separation = 3.0;
    double patch_noise_std = 1.0;
    std::size_t min_tokens = 4;  // per modality
    std::size_t max_tokens = 10;
    std::uint64_t seed = 0;
    std::string id_prefix = "doc";

    // Throws ContractError when the spec cannot be realised, including a
    // vocabulary too small for the class slices.
    void validate(std::size_t max_seq_len) const;
    std::size_t slice_size() const { return text_vocab / (num_classes + 1); }
};

using Corpus = std::vector<DocumentInput>;

Corpus generate(const SyntheticSpec& spec, std::size_t max_seq_len = 64);

struct SplitRatios {
    double train = 0.70;
    double eval = 0.15;
    double test = 0.15;

    void validate() const;
};

enum class Protocol { intra, cross };

std::string protocol_name(Protocol p);
Protocol protocol_from_name(const std::string& s);

struct DatasetSplit {
    std::vector<DocumentInput> train;
    std::vector<DocumentInput> eval_id;
    std::vector<DocumentInput> test_id;
    std::vector<DocumentInput> test_ood;
    Protocol protocol = Protocol::intra;
    std::string ood_descriptor;

    friend bool operator==(const DatasetSplit&, const DatasetSplit&) = default;
};

// Every document of `ood_class` goes to test_ood; the rest are split per
// class into train / eval_id / test_id.
DatasetSplit make_intra_split(const Corpus& corpus, int ood_class, const SplitRatios& ratios,
                              std::uint64_t seed);

// corpus_a provides the ID splits and all of corpus_b becomes test_ood. OOD
// labels are shifted past the largest corpus_a label so the two label sets
// stay disjoint.
DatasetSplit make_cross_split(const Corpus& corpus_a, const Corpus& corpus_b, const SplitRatios& ratios,
                              std::uint64_t seed);

// Sorted distinct labels of the training split.
std::vector<int> train_label_set(const DatasetSplit& split);

// Copy whose ID splits carry labels remapped to 0..k-1 in train_label_set order.
DatasetSplit with_contiguous_labels(const DatasetSplit& split);

// JSON Lines: a header line {"protocol", "ood_descriptor"} followed by one
// document per line {id, split, label, text_token_ids, patch_vectors}.
void save_split(const DatasetSplit& split, std::ostream& out);
void save_split(const DatasetSplit& split, const std::string& path);
// Throws ParseError naming the 1-based line of the first malformed record.
DatasetSplit load_split(std::istream& in);
DatasetSplit load_split(const std::string& path);

}  // namespace ahmood
