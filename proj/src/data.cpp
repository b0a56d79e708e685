#include "ahmood/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <set>
#include <sstream>

#include "ahmood/errors.hpp"
#include "ahmood/json_io.hpp"

namespace ahmood {

void SyntheticSpec::validate(std::size_t max_seq_len) const {
    if (num_classes < 1) throw ContractError("synthetic spec: need at least one class");
    if (docs_per_class < 4) throw ContractError("synthetic spec: docs_per_class must be >= 4");
    if (class_vocab_overlap < 0.0 || class_vocab_overlap > 1.0)
        throw ContractError("synthetic spec: class_vocab_overlap must be in [0, 1]");
    if (patch_noise_std < 0.0) throw ContractError("synthetic spec: patch_noise_std must be >= 0");
    if (slice_size() < 1)
        throw ContractError("synthetic spec: text_vocab=" + std::to_string(text_vocab) +
                            " is too small for " + std::to_string(num_classes) + " class slices");
    if (num_patch_features < num_classes)
        throw ContractError("synthetic spec: num_patch_features must be >= num_classes");
    if (min_tokens < 1 || min_tokens > max_tokens)
        throw ContractError("synthetic spec: token count range is empty");
    if (1 + 2 * max_tokens > max_seq_len)
        throw ContractError("synthetic spec: documents may exceed max_seq_len=" + std::to_string(max_seq_len));
}

Corpus generate(const SyntheticSpec& spec, std::size_t max_seq_len) {
    spec.validate(max_seq_len);
    std::mt19937_64 rng(spec.seed);

    // Class vocabulary slices over a seeded permutation of the vocabulary.
    std::vector<int> vocab(spec.text_vocab);
    std::iota(vocab.begin(), vocab.end(), 0);
    std::shuffle(vocab.begin(), vocab.end(), rng);
    const std::size_t slice = spec.slice_size();
    const auto shared = static_cast<std::size_t>(std::llround(spec.class_vocab_overlap * static_cast<double>(slice)));
    const std::size_t own = slice - shared;
    std::vector<std::vector<int>> class_vocab(spec.num_classes);
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
        class_vocab[c].assign(vocab.begin(), vocab.begin() + static_cast<std::ptrdiff_t>(shared));
        const auto first = vocab.begin() + static_cast<std::ptrdiff_t>(shared + c * own);
        class_vocab[c].insert(class_vocab[c].end(), first, first + static_cast<std::ptrdiff_t>(own));
    }

    std::vector<std::size_t> vertex(spec.num_patch_features);
    std::iota(vertex.begin(), vertex.end(), 0);
    std::shuffle(vertex.begin(), vertex.end(), rng);

    std::uniform_int_distribution<std::size_t> length(spec.min_tokens, spec.max_tokens);
    std::normal_distribution<double> noise(0.0, 1.0);
    const std::size_t width = std::to_string(spec.num_classes * spec.docs_per_class).size();

    Corpus corpus;
    corpus.reserve(spec.num_classes * spec.docs_per_class);
    for (std::size_t c = 0; c < spec.num_classes; ++c) {
        std::uniform_int_distribution<std::size_t> pick(0, class_vocab[c].size() - 1);
        for (std::size_t d = 0; d < spec.docs_per_class; ++d) {
            DocumentInput doc;
            std::string index = std::to_string(corpus.size());
            doc.id = spec.id_prefix + "-" + std::string(width - index.size(), '0') + index;
            doc.label = static_cast<int>(c);
            const std::size_t n_text = length(rng);
            for (std::size_t t = 0; t < n_text; ++t) doc.text_token_ids.push_back(class_vocab[c][pick(rng)]);
            const std::size_t n_patch = length(rng);
            for (std::size_t p = 0; p < n_patch; ++p) {
                Vector v(spec.num_patch_features);
                for (double& x : v) x = spec.patch_noise_std * noise(rng);
                v[vertex[c]] += spec.patch_mean_separation;
                doc.patch_vectors.push_back(std::move(v));
            }
            corpus.push_back(std::move(doc));
        }
    }
    return corpus;
}

void SplitRatios::validate() const {
    if (train <= 0.0 || eval <= 0.0 || test < 0.0 || std::abs(train + eval + test - 1.0) > 1e-9)
        throw ContractError("split ratios must be positive and sum to 1");
}

std::string protocol_name(Protocol p) { return p == Protocol::intra ? "intra" : "cross"; }

Protocol protocol_from_name(const std::string& s) {
    if (s == "intra") return Protocol::intra;
    if (s == "cross") return Protocol::cross;
    throw ConfigError("unknown protocol '" + s + "'");
}

namespace {

void stratified_split(const std::vector<const DocumentInput*>& docs, const SplitRatios& ratios,
                      std::uint64_t seed, DatasetSplit& out) {
    std::map<int, std::vector<const DocumentInput*>> by_class;
    for (const auto* d : docs) by_class[d->label.value_or(-1)].push_back(d);
    std::mt19937_64 rng(seed);
    for (auto& [label, members] : by_class) {
        std::shuffle(members.begin(), members.end(), rng);
        const double n = static_cast<double>(members.size());
        const auto n_train = static_cast<std::size_t>(std::llround(ratios.train * n));
        const auto n_eval = std::min(members.size() - n_train,
                                     static_cast<std::size_t>(std::llround(ratios.eval * n)));
        for (std::size_t i = 0; i < members.size(); ++i) {
            auto& dst = i < n_train ? out.train : i < n_train + n_eval ? out.eval_id : out.test_id;
            dst.push_back(*members[i]);
        }
    }
}

}  // namespace

DatasetSplit make_intra_split(const Corpus& corpus, int ood_class, const SplitRatios& ratios, std::uint64_t seed) {
    ratios.validate();
    std::vector<const DocumentInput*> id_docs;
    DatasetSplit split;
    split.protocol = Protocol::intra;
    split.ood_descriptor = "class " + std::to_string(ood_class);
    for (const auto& d : corpus) {
        if (d.label == ood_class) split.test_ood.push_back(d);
        else id_docs.push_back(&d);
    }
    if (split.test_ood.empty())
        throw ContractError("OOD class " + std::to_string(ood_class) + " does not occur in the corpus");
    stratified_split(id_docs, ratios, seed, split);
    return split;
}

DatasetSplit make_cross_split(const Corpus& corpus_a, const Corpus& corpus_b, const SplitRatios& ratios,
                              std::uint64_t seed) {
    ratios.validate();
    std::set<std::string> ids;
    int max_label = -1;
    for (const auto& d : corpus_a) {
        ids.insert(d.id);
        max_label = std::max(max_label, d.label.value_or(-1));
    }
    for (const auto& d : corpus_b)
        if (ids.count(d.id)) throw ContractError("document id '" + d.id + "' occurs in both corpora");

    DatasetSplit split;
    split.protocol = Protocol::cross;
    split.ood_descriptor = corpus_b.empty() ? "empty corpus" : "corpus of " + corpus_b.front().id;
    std::vector<const DocumentInput*> id_docs;
    for (const auto& d : corpus_a) id_docs.push_back(&d);
    stratified_split(id_docs, ratios, seed, split);
    for (const auto& d : corpus_b) {
        DocumentInput o = d;
        if (o.label) o.label = *o.label + max_label + 1;
        split.test_ood.push_back(std::move(o));
    }
    return split;
}

std::vector<int> train_label_set(const DatasetSplit& split) {
    std::set<int> labels;
    for (const auto& d : split.train)
        if (d.label) labels.insert(*d.label);
    return {labels.begin(), labels.end()};
}

DatasetSplit with_contiguous_labels(const DatasetSplit& split) {
    const auto labels = train_label_set(split);
    std::map<int, int> remap;
    for (std::size_t i = 0; i < labels.size(); ++i) remap[labels[i]] = static_cast<int>(i);
    DatasetSplit out = split;
    for (auto* part : {&out.train, &out.eval_id, &out.test_id}) {
        for (auto& d : *part) {
            if (!d.label) continue;
            auto it = remap.find(*d.label);
            if (it == remap.end())
                throw ContractError("document '" + d.id + "' has a label absent from the training split");
            d.label = it->second;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// JSON Lines

namespace {

json document_to_json(const DocumentInput& d, const char* split) {
    json j{{"id", d.id}, {"split", split}, {"label", nullptr}, {"text_token_ids", d.text_token_ids}};
    if (d.label) j["label"] = *d.label;
    json patches = json::array();
    for (const auto& p : d.patch_vectors) patches.push_back(p);
    j["patch_vectors"] = std::move(patches);
    return j;
}

}  // namespace

void save_split(const DatasetSplit& split, std::ostream& out) {
    out << json{{"protocol", protocol_name(split.protocol)}, {"ood_descriptor", split.ood_descriptor}}.dump()
        << '\n';
    const std::pair<const char*, const std::vector<DocumentInput>*> parts[] = {
        {"train", &split.train}, {"eval_id", &split.eval_id}, {"test_id", &split.test_id}, {"test_ood", &split.test_ood}};
    for (const auto& [name, docs] : parts)
        for (const auto& d : *docs) out << document_to_json(d, name).dump() << '\n';
}

void save_split(const DatasetSplit& split, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write '" + path + "'");
    save_split(split, out);
}

DatasetSplit load_split(std::istream& in) {
    DatasetSplit split;
    std::string line;
    std::size_t line_no = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            const json j = json::parse(line);
            if (!have_header) {
                split.protocol = protocol_from_name(j.at("protocol").get<std::string>());
                split.ood_descriptor = j.at("ood_descriptor").get<std::string>();
                have_header = true;
                continue;
            }
            DocumentInput d;
            d.id = j.at("id").get<std::string>();
            if (!j.at("label").is_null()) d.label = j.at("label").get<int>();
            d.text_token_ids = j.at("text_token_ids").get<std::vector<int>>();
            d.patch_vectors = j.at("patch_vectors").get<std::vector<Vector>>();
            const auto part = j.at("split").get<std::string>();
            if (part == "train") split.train.push_back(std::move(d));
            else if (part == "eval_id") split.eval_id.push_back(std::move(d));
            else if (part == "test_id") split.test_id.push_back(std::move(d));
            else if (part == "test_ood") split.test_ood.push_back(std::move(d));
            else throw ParseError("unknown split '" + part + "'", line_no);
        } catch (const ParseError&) {
            throw;
        } catch (const std::exception& e) {
            throw ParseError("line " + std::to_string(line_no) + ": " + e.what(), line_no);
        }
    }
    if (!have_header) throw ParseError("dataset file has no header line", line_no);
    return split;
}

DatasetSplit load_split(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open '" + path + "'");
    return load_split(in);
}

}  // namespace ahmood
