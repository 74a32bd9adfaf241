#include "fairstamp/data.hpp"

#include "fairstamp/errors.hpp"
#include "fairstamp/random.hpp"

#include "tensor_file.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace fairstamp {

using nlohmann::json;

const char* to_string(Contrast contrast) {
    return contrast == Contrast::subject_swap ? "subject-swap" : "object-swap";
}

std::optional<std::string> validate_pair(const BiasPair& pair) {
    const auto& k1 = pair.stereotyped;
    const auto& k2 = pair.counterfactual;
    for (const auto* k : {&k1, &k2}) {
        if (k->subject.empty() || k->relation.empty() || k->object.empty()) {
            return std::string("triplet has an empty subject, relation or object span");
        }
    }
    if (pair.contrast == Contrast::subject_swap) {
        if (k1.relation != k2.relation) {
            return std::string("subject-swap pair has differing relations");
        }
        if (k1.object != k2.object) {
            return std::string("subject-swap pair has differing objects");
        }
        if (k1.subject == k2.subject) {
            return std::string("subject-swap pair has identical subjects");
        }
    } else {
        if (k1.subject != k2.subject) {
            return std::string("object-swap pair has differing subjects");
        }
        if (k1.relation != k2.relation) {
            return std::string("object-swap pair has differing relations");
        }
        if (k1.object == k2.object) {
            return std::string("object-swap pair has identical objects");
        }
    }
    if (pair.irrelevant_object) {
        if (pair.irrelevant_object->empty()) {
            return std::string("irrelevant object is empty");
        }
        if (*pair.irrelevant_object == k1.object || *pair.irrelevant_object == k2.object) {
            return std::string("irrelevant object equals one of the pair's objects");
        }
    }
    return std::nullopt;
}

namespace {

void check_fits(const ModelConfig& config, const TokenSeq& prompt, const TokenSeq& object,
                const std::string& where, std::vector<std::string>& out) {
    if (static_cast<int>(prompt.size() + object.size()) > config.max_seq_len) {
        out.push_back(where + ": prompt+object exceeds max_seq_len");
    }
    for (const TokenSeq* seq : {&prompt, &object}) {
        for (const Token t : *seq) {
            if (t < 0 || t >= config.vocab_size) {
                out.push_back(where + ": token " + std::to_string(t) + " outside vocabulary");
                return;
            }
        }
    }
}

void check_pair(const BiasPair& pair, const std::string& where, const ModelConfig* config,
                std::vector<std::string>& out) {
    if (auto violation = validate_pair(pair)) {
        out.push_back(where + ": " + *violation);
    }
    if (config != nullptr) {
        check_fits(*config, pair.stereotyped.prompt(), pair.stereotyped.object, where, out);
        check_fits(*config, pair.counterfactual.prompt(), pair.counterfactual.object, where, out);
        if (pair.irrelevant_object) {
            check_fits(*config, pair.stereotyped.prompt(), *pair.irrelevant_object, where, out);
        }
    }
}

}  // namespace

std::vector<std::string> validate_bundle(const DatasetBundle& bundle, const ModelConfig* config) {
    std::vector<std::string> out;
    if (!bundle.empty_ok) {
        if (bundle.bias_set.empty()) out.push_back("bias set is empty");
        if (bundle.paraphrase_set.empty()) out.push_back("paraphrase set is empty");
        if (bundle.retention_set.empty()) out.push_back("retention set is empty");
    }
    for (std::size_t i = 0; i < bundle.bias_set.size(); ++i) {
        check_pair(bundle.bias_set[i], "bias " + std::to_string(i), config, out);
    }
    for (std::size_t i = 0; i < bundle.paraphrase_set.size(); ++i) {
        const auto& p = bundle.paraphrase_set[i];
        const std::string where = "paraphrase " + std::to_string(i);
        if (p.source >= bundle.bias_set.size()) {
            out.push_back(where + ": source index out of range");
        }
        check_pair(p.pair, where, config, out);
    }
    for (std::size_t i = 0; i < bundle.retention_set.size(); ++i) {
        const auto& r = bundle.retention_set[i];
        const std::string where = "retention " + std::to_string(i);
        if (r.prompt.empty()) {
            out.push_back(where + ": empty prompt");
        }
        if (r.candidates.size() < 2) {
            out.push_back(where + ": needs at least two candidates");
        }
        for (std::size_t a = 0; a < r.candidates.size(); ++a) {
            if (r.candidates[a].empty()) {
                out.push_back(where + ": empty candidate");
            }
            for (std::size_t b = 0; b < a; ++b) {
                if (r.candidates[a] == r.candidates[b]) {
                    out.push_back(where + ": duplicate candidates");
                }
            }
            if (config != nullptr) {
                check_fits(*config, r.prompt, r.candidates[a], where, out);
            }
        }
    }
    return out;
}

namespace {

json triplet_to_json(const KnowledgeTriplet& k) {
    return {{"s", k.subject}, {"r", k.relation}, {"o", k.object}};
}

KnowledgeTriplet triplet_from_json(const json& j) {
    KnowledgeTriplet k;
    k.subject = j.at("s").get<TokenSeq>();
    k.relation = j.at("r").get<TokenSeq>();
    k.object = j.at("o").get<TokenSeq>();
    return k;
}

Contrast contrast_from_string(const std::string& s) {
    if (s == "subject-swap") return Contrast::subject_swap;
    if (s == "object-swap") return Contrast::object_swap;
    throw LoadError("unknown contrast \"" + s + "\"");
}

Contrast infer_contrast(const KnowledgeTriplet& k1, const KnowledgeTriplet& k2) {
    return k1.subject != k2.subject ? Contrast::subject_swap : Contrast::object_swap;
}

}  // namespace

void save_jsonl(const DatasetBundle& bundle, const std::filesystem::path& path) {
    std::ostringstream out;
    for (std::size_t i = 0; i < bundle.bias_set.size(); ++i) {
        const auto& p = bundle.bias_set[i];
        json j = {{"kind", "bias"},
                  {"id", i},
                  {"k1", triplet_to_json(p.stereotyped)},
                  {"k2", triplet_to_json(p.counterfactual)},
                  {"contrast", to_string(p.contrast)},
                  {"o_ir", nullptr}};
        if (p.irrelevant_object) {
            j["o_ir"] = *p.irrelevant_object;
        }
        out << j.dump() << '\n';
    }
    for (std::size_t i = 0; i < bundle.paraphrase_set.size(); ++i) {
        const auto& p = bundle.paraphrase_set[i];
        const json j = {{"kind", "paraphrase"},
                        {"id", i},
                        {"source_id", p.source},
                        {"k1", triplet_to_json(p.pair.stereotyped)},
                        {"k2", triplet_to_json(p.pair.counterfactual)}};
        out << j.dump() << '\n';
    }
    for (std::size_t i = 0; i < bundle.retention_set.size(); ++i) {
        const auto& r = bundle.retention_set[i];
        const json j = {{"kind", "retention"},
                        {"id", i},
                        {"prompt", r.prompt},
                        {"candidates", r.candidates},
                        {"note", r.note}};
        out << j.dump() << '\n';
    }
    detail::write_text_atomic(path, out.str());
}

DatasetBundle load_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw LoadError("cannot open dataset " + path.string());
    }
    DatasetBundle bundle;
    std::map<std::int64_t, std::size_t> bias_index;
    struct PendingLink {
        std::size_t line;
        std::int64_t source_id;
    };
    std::vector<PendingLink> links;

    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        const std::string where = path.string() + " line " + std::to_string(line_no);
        try {
            const json j = json::parse(line);
            const std::string kind = j.at("kind").get<std::string>();
            const auto id = j.at("id").get<std::int64_t>();
            if (kind == "bias") {
                BiasPair p;
                p.stereotyped = triplet_from_json(j.at("k1"));
                p.counterfactual = triplet_from_json(j.at("k2"));
                p.contrast = contrast_from_string(j.at("contrast").get<std::string>());
                if (j.contains("o_ir") && !j.at("o_ir").is_null()) {
                    p.irrelevant_object = j.at("o_ir").get<TokenSeq>();
                }
                if (!bias_index.emplace(id, bundle.bias_set.size()).second) {
                    throw LoadError("duplicate bias id " + std::to_string(id));
                }
                bundle.bias_set.push_back(std::move(p));
            } else if (kind == "paraphrase") {
                Paraphrase p;
                p.pair.stereotyped = triplet_from_json(j.at("k1"));
                p.pair.counterfactual = triplet_from_json(j.at("k2"));
                p.pair.contrast = infer_contrast(p.pair.stereotyped, p.pair.counterfactual);
                links.push_back({line_no, j.at("source_id").get<std::int64_t>()});
                bundle.paraphrase_set.push_back(std::move(p));
            } else if (kind == "retention") {
                RetentionItem r;
                r.prompt = j.at("prompt").get<TokenSeq>();
                r.candidates = j.at("candidates").get<std::vector<TokenSeq>>();
                r.note = j.value("note", std::string());
                bundle.retention_set.push_back(std::move(r));
            } else {
                throw LoadError("unknown record kind \"" + kind + "\"");
            }
        } catch (const LoadError& ex) {
            throw LoadError(where + ": " + ex.what());
        } catch (const json::exception& ex) {
            throw LoadError(where + ": " + ex.what());
        }
    }

    for (std::size_t i = 0; i < links.size(); ++i) {
        const auto it = bias_index.find(links[i].source_id);
        if (it == bias_index.end()) {
            throw LoadError(path.string() + " line " + std::to_string(links[i].line) +
                            ": paraphrase source_id " + std::to_string(links[i].source_id) +
                            " does not name a bias record");
        }
        bundle.paraphrase_set[i].source = it->second;
    }
    bundle.empty_ok = bundle.bias_set.empty() || bundle.paraphrase_set.empty() ||
                      bundle.retention_set.empty();
    return bundle;
}

void save_corpus(const std::vector<TokenSeq>& corpus, const std::filesystem::path& path) {
    std::ostringstream out;
    for (const auto& seq : corpus) {
        out << json(seq).dump() << '\n';
    }
    detail::write_text_atomic(path, out.str());
}

std::vector<TokenSeq> load_corpus(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw LoadError("cannot open corpus " + path.string());
    }
    std::vector<TokenSeq> corpus;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) {
            continue;
        }
        try {
            corpus.push_back(json::parse(line).get<TokenSeq>());
        } catch (const json::exception& ex) {
            throw LoadError(path.string() + " line " + std::to_string(line_no) + ": " + ex.what());
        }
    }
    return corpus;
}

namespace {

class TokenAllocator {
public:
    explicit TokenAllocator(int vocab_size) : vocab_size_(vocab_size) {}

    std::vector<Token> take(int n, const std::string& what) {
        if (n < 0 || next_ + n > vocab_size_) {
            throw GenerationError("vocabulary of " + std::to_string(vocab_size_) +
                                  " tokens is too small for the " + what);
        }
        std::vector<Token> out;
        for (int i = 0; i < n; ++i) {
            out.push_back(static_cast<Token>(next_++));
        }
        return out;
    }
    int remaining() const { return vocab_size_ - next_; }

private:
    int vocab_size_;
    int next_ = 1;  // token 0 stays unused
};

struct BiasCombo {
    int group_pair = 0;
    int relation = 0;
    Token stereotyped_group = 0;
    Token counter_group = 0;
    Token stereotyped_attr = 0;
    Token counter_attr = 0;
};

}  // namespace

SyntheticWorld gen_synthetic_world(const WorldSpec& spec) {
    if (spec.num_groups < 2 || spec.num_groups % 2 != 0) {
        throw GenerationError("num_groups must be an even number >= 2");
    }
    if (spec.num_attributes < 2) {
        throw GenerationError("num_attributes must be >= 2");
    }
    if (spec.num_bias_pairs < 1 || spec.num_retention < 0 || spec.num_paraphrases_per_pair < 0 ||
        spec.corpus_size < 1 || spec.max_filler_prefix < 0) {
        throw GenerationError("world counts must be positive");
    }
    if (!(spec.bias_strength > 0.5 - 1e-12 && spec.bias_strength <= 1.0)) {
        throw GenerationError("bias_strength must lie in [0.5, 1]");
    }

    const int group_pairs = spec.num_groups / 2;
    const int bias_relations = (spec.num_bias_pairs + group_pairs - 1) / group_pairs;
    if (spec.num_retention > spec.num_groups * bias_relations) {
        throw GenerationError("num_retention exceeds the " +
                              std::to_string(spec.num_groups * bias_relations) +
                              " (group, relation) facts of this world");
    }

    TokenAllocator alloc(spec.vocab_size);
    const Token marker = alloc.take(1, "marker token")[0];
    const Token template_token = alloc.take(1, "template token")[0];
    const Token fact_marker = alloc.take(1, "fact marker")[0];
    const Token noun = alloc.take(1, "subject noun")[0];
    const auto groups = alloc.take(spec.num_groups, "groups");
    const auto relations = alloc.take(bias_relations, "bias relations");
    const auto synonyms = alloc.take(bias_relations * spec.num_paraphrases_per_pair, "paraphrase relations");
    const auto attributes = alloc.take(spec.num_attributes, "attributes");
    const auto fact_objects = alloc.take(spec.num_groups * bias_relations, "fact objects");
    const auto descriptors = alloc.take(spec.num_groups, "group descriptors");
    if (alloc.remaining() < 8) {
        throw GenerationError("vocabulary leaves fewer than 8 filler tokens");
    }
    const auto filler = alloc.take(alloc.remaining(), "filler");

    Rng rng(spec.seed);
    auto subject_of = [&](Token group) { return TokenSeq{group, noun}; };

    // Bias contexts, ordered by relation so contiguous slices share no relation.
    std::vector<BiasCombo> combos;
    for (int r = 0; r < bias_relations && static_cast<int>(combos.size()) < spec.num_bias_pairs; ++r) {
        for (int g = 0; g < group_pairs && static_cast<int>(combos.size()) < spec.num_bias_pairs; ++g) {
            BiasCombo c;
            c.group_pair = g;
            c.relation = r;
            const bool flip = rng.index(2) == 1;
            c.stereotyped_group = groups[static_cast<std::size_t>(2 * g + (flip ? 1 : 0))];
            c.counter_group = groups[static_cast<std::size_t>(2 * g + (flip ? 0 : 1))];
            const std::size_t a = rng.index(attributes.size());
            std::size_t b = rng.index(attributes.size() - 1);
            if (b >= a) ++b;
            c.stereotyped_attr = attributes[a];
            c.counter_attr = attributes[b];
            combos.push_back(c);
        }
    }

    SyntheticWorld world;
    world.template_relation = {template_token, marker};
    world.filler_tokens = filler;

    for (std::size_t i = 0; i < combos.size(); ++i) {
        const auto& c = combos[i];
        const TokenSeq rel{relations[static_cast<std::size_t>(c.relation)]};
        const TokenSeq obj{marker, c.stereotyped_attr};
        BiasPair p;
        p.stereotyped = {subject_of(c.stereotyped_group), rel, obj};
        p.counterfactual = {subject_of(c.counter_group), rel, obj};
        p.contrast = Contrast::subject_swap;
        p.irrelevant_object = TokenSeq{marker, filler[rng.index(filler.size())]};
        world.bundle.bias_set.push_back(p);

        world.ground_truth.push_back({subject_of(c.stereotyped_group), rel, obj,
                                      TokenSeq{marker, c.counter_attr}, spec.bias_strength});
        world.ground_truth.push_back({subject_of(c.counter_group), rel,
                                      TokenSeq{marker, c.counter_attr}, obj, spec.bias_strength});
    }
    for (std::size_t i = 0; i < combos.size(); ++i) {
        const auto& c = combos[i];
        for (int s = 0; s < spec.num_paraphrases_per_pair; ++s) {
            const TokenSeq syn{synonyms[static_cast<std::size_t>(c.relation * spec.num_paraphrases_per_pair + s)]};
            Paraphrase para;
            para.source = i;
            para.pair = world.bundle.bias_set[i];
            para.pair.stereotyped.relation = syn;
            para.pair.counterfactual.relation = syn;
            para.pair.irrelevant_object.reset();
            world.bundle.paraphrase_set.push_back(para);
        }
    }

    // Retention facts: (group, bias relation) -> unique single-token object,
    // stated as "group noun relation fact_marker object".
    auto fact_object = [&](int group, int rel) {
        return fact_objects[static_cast<std::size_t>(rel * spec.num_groups + group)];
    };
    std::vector<std::pair<int, int>> fact_keys;
    for (int rel = 0; rel < bias_relations; ++rel) {
        for (int g = 0; g < spec.num_groups; ++g) {
            fact_keys.emplace_back(g, rel);
        }
    }
    std::vector<std::pair<int, int>> retained = fact_keys;
    rng.shuffle(retained);
    retained.resize(static_cast<std::size_t>(spec.num_retention));
    for (const auto& [g, rel] : retained) {
        RetentionItem item;
        item.prompt = concat(subject_of(groups[static_cast<std::size_t>(g)]),
                             TokenSeq{relations[static_cast<std::size_t>(rel)], fact_marker});
        const int partner = g ^ 1;
        const int other = (g + 2) % spec.num_groups;
        item.candidates = {TokenSeq{fact_object(g, rel)}, TokenSeq{fact_object(partner, rel)},
                           TokenSeq{fact_object(other, rel)}};
        rng.shuffle(item.candidates);
        item.note = "group " + std::to_string(g) + " relation " + std::to_string(rel);
        world.bundle.retention_set.push_back(std::move(item));
    }
    world.bundle.empty_ok = world.bundle.paraphrase_set.empty() || world.bundle.retention_set.empty();

    // Corpus.
    const double w_bias = 0.40;
    const double w_para = spec.num_paraphrases_per_pair > 0 ? 0.20 : 0.0;
    const double w_fact = 0.25;
    const double w_tmpl = 0.15;
    const std::vector<double> kind_weights{w_bias, w_para, w_fact, w_tmpl};
    world.corpus.reserve(static_cast<std::size_t>(spec.corpus_size));
    for (int n = 0; n < spec.corpus_size; ++n) {
        TokenSeq seq;
        const auto prefix_len = rng.index(static_cast<std::size_t>(spec.max_filler_prefix + 1));
        for (std::size_t i = 0; i < prefix_len; ++i) {
            seq.push_back(filler[rng.index(filler.size())]);
        }
        const std::size_t kind = rng.categorical(kind_weights);
        if (kind <= 1) {
            const auto& c = combos[rng.index(combos.size())];
            const bool stereotyped_side = rng.index(2) == 0;
            const bool follows_stereotype = rng.uniform() < spec.bias_strength;
            Token relation = relations[static_cast<std::size_t>(c.relation)];
            if (kind == 1) {
                const auto s = rng.index(static_cast<std::size_t>(spec.num_paraphrases_per_pair));
                relation = synonyms[static_cast<std::size_t>(c.relation * spec.num_paraphrases_per_pair) + s];
            }
            const Token group = stereotyped_side ? c.stereotyped_group : c.counter_group;
            const Token own = stereotyped_side ? c.stereotyped_attr : c.counter_attr;
            const Token other = stereotyped_side ? c.counter_attr : c.stereotyped_attr;
            seq.insert(seq.end(), {group, noun, relation, marker, follows_stereotype ? own : other});
        } else if (kind == 2) {
            const auto& [g, rel] = fact_keys[rng.index(fact_keys.size())];
            seq.insert(seq.end(), {groups[static_cast<std::size_t>(g)], noun,
                                   relations[static_cast<std::size_t>(rel)], fact_marker,
                                   fact_object(g, rel)});
        } else {
            const auto g = rng.index(groups.size());
            seq.insert(seq.end(), {groups[g], noun, template_token, marker, descriptors[g]});
        }
        world.corpus.push_back(std::move(seq));
    }
    return world;
}

void save_ground_truth(const SyntheticWorld& world, const std::filesystem::path& path) {
    json table = json::array();
    for (const auto& a : world.ground_truth) {
        table.push_back({{"subject", a.subject},
                         {"relation", a.relation},
                         {"stereotyped_object", a.stereotyped_object},
                         {"counter_object", a.counter_object},
                         {"strength", a.strength}});
    }
    const json j = {{"associations", table},
                    {"template_relation", world.template_relation},
                    {"filler_tokens", world.filler_tokens}};
    detail::write_text_atomic(path, j.dump(2) + "\n");
}

}  // namespace fairstamp
