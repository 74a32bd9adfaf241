#pragma once

#include "fairstamp/core.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace fairstamp {

struct KnowledgeTriplet {
    TokenSeq subject;
    TokenSeq relation;
    TokenSeq object;

    TokenSeq prompt() const { return concat(subject, relation); }
    bool operator==(const KnowledgeTriplet&) const = default;
};

enum class Contrast { subject_swap, object_swap };

const char* to_string(Contrast contrast);

// A stereotyped association and its counterfactual.
struct BiasPair {
    KnowledgeTriplet stereotyped;
    KnowledgeTriplet counterfactual;
    Contrast contrast = Contrast::subject_swap;
    std::optional<TokenSeq> irrelevant_object;

    bool operator==(const BiasPair&) const = default;
};

struct Paraphrase {
    BiasPair pair;
    std::size_t source = 0;  // index into DatasetBundle::bias_set

    bool operator==(const Paraphrase&) const = default;
};

struct RetentionItem {
    TokenSeq prompt;
    std::vector<TokenSeq> candidates;
    std::string note;

    bool operator==(const RetentionItem&) const = default;
};

struct DatasetBundle {
    std::vector<BiasPair> bias_set;
    std::vector<Paraphrase> paraphrase_set;
    std::vector<RetentionItem> retention_set;
    // Set when empty sets are intentional (an empty file, or a file that
    // simply has no records of some kind).
    bool empty_ok = false;

    bool operator==(const DatasetBundle&) const = default;
};

// nullopt when the pair satisfies every invariant, otherwise the first
// violation found.
std::optional<std::string> validate_pair(const BiasPair& pair);

// All violations in the bundle; with a config, also checks that every
// prompt+object fits in max_seq_len and uses in-vocabulary tokens.
std::vector<std::string> validate_bundle(const DatasetBundle& bundle,
                                         const ModelConfig* config = nullptr);

void save_jsonl(const DatasetBundle& bundle, const std::filesystem::path& path);
// Throws LoadError("line N: ...") on malformed records or broken links.
DatasetBundle load_jsonl(const std::filesystem::path& path);

// One JSON array of token ids per line.
void save_corpus(const std::vector<TokenSeq>& corpus, const std::filesystem::path& path);
std::vector<TokenSeq> load_corpus(const std::filesystem::path& path);

struct WorldSpec {
    int num_groups = 16;  // even: groups are contrasted in fixed pairs
    int num_attributes = 16;
    int num_bias_pairs = 32;
    int num_retention = 24;
    int num_paraphrases_per_pair = 1;
    int corpus_size = 6000;
    double bias_strength = 0.95;
    std::uint64_t seed = 0;
    int vocab_size = 256;
    int max_filler_prefix = 3;
};

// One biased (subject, relation) context of the generated world.
struct Association {
    TokenSeq subject;
    TokenSeq relation;
    TokenSeq stereotyped_object;
    TokenSeq counter_object;
    double strength = 0.0;
};

struct SyntheticWorld {
    std::vector<TokenSeq> corpus;
    DatasetBundle bundle;
    std::vector<Association> ground_truth;
    TokenSeq template_relation;  // p'(s) = subject ++ template_relation
    std::vector<Token> filler_tokens;
};

// Subjects are [group, noun] (always two tokens), bias relations and their
// synonyms one token, attribute objects [marker, attribute]. Each group also
// states a single-token fact after "group noun relation fact_marker"; these
// facts form the retention set, so retention prompts never coincide with
// bias prompts. Template statements pair each
// subject with a group descriptor. Every statement in the corpus is preceded
// by 0..max_filler_prefix filler tokens.
SyntheticWorld gen_synthetic_world(const WorldSpec& spec);

void save_ground_truth(const SyntheticWorld& world, const std::filesystem::path& path);

}  // namespace fairstamp
