#pragma once

#include "fairstamp/model.hpp"
#include "fairstamp/data.hpp"
#include "fairstamp/stamp.hpp"

#include <filesystem>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <utility>

#include <unistd.h>

namespace fstest {

using namespace fairstamp;

inline ModelConfig tiny_config(int layers = 2, int dim = 8, int heads = 2, int vocab = 16,
                               int max_len = 12, int ffn = 16, std::uint64_t seed = 7) {
    ModelConfig c;
    c.num_layers = layers;
    c.model_dim = dim;
    c.num_heads = heads;
    c.vocab_size = vocab;
    c.max_seq_len = max_len;
    c.ffn_hidden_dim = ffn;
    c.seed = seed;
    return c;
}

template <typename T = double>
std::shared_ptr<const BasicModel<T>> tiny_model(const ModelConfig& c = tiny_config()) {
    return std::make_shared<const BasicModel<T>>(init_model<T>(c));
}

// Stamp with both matrices random so that its delta is not zero.
template <typename T = double>
FairnessStamp<T> busy_stamp(int layer, int dim, int hidden, std::uint64_t seed, double scale = 0.3) {
    auto s = new_stamp<T>(layer, dim, hidden, seed);
    std::mt19937_64 gen(seed + 1);
    std::normal_distribution<double> n(0.0, scale);
    for (Eigen::Index i = 0; i < s.key.size(); ++i) {
        s.key.data()[i] = static_cast<T>(n(gen));
    }
    for (Eigen::Index i = 0; i < s.value.size(); ++i) {
        s.value.data()[i] = static_cast<T>(n(gen));
    }
    return s;
}

// ProbabilityModel backed by a lookup table; unknown queries return `fallback`.
class TableModel : public ProbabilityModel {
public:
    void set(const TokenSeq& prompt, const TokenSeq& object, double p) { table_[{prompt, object}] = p; }
    double object_prob(const TokenSeq& prompt, const TokenSeq& object) const override {
        ++calls;
        auto it = table_.find({prompt, object});
        return it == table_.end() ? fallback : it->second;
    }

    double fallback = 0.0;
    mutable std::size_t calls = 0;

private:
    std::map<std::pair<TokenSeq, TokenSeq>, double> table_;
};

class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        static int counter = 0;
        path_ = std::filesystem::temp_directory_path() /
                ("fairstamp_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        std::filesystem::remove_all(path_);
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

private:
    std::filesystem::path path_;
};

template <typename A, typename B>
double max_abs_diff(const A& a, const B& b) {
    return (a.template cast<double>() - b.template cast<double>()).cwiseAbs().maxCoeff();
}

}  // namespace fstest

namespace fstest {

// Four groups, each followed by its own attribute after "noun relation".
// Groups (1,2) and (3,4) form the contrast pairs.
struct MemoWorld {
    std::vector<TokenSeq> corpus;
    std::vector<BiasPair> pairs;
};

inline MemoWorld memo_world() {
    MemoWorld w;
    const Token noun = 5;
    const Token rel = 6;
    for (Token g = 1; g <= 4; ++g) {
        for (int rep = 0; rep < 4; ++rep) {
            w.corpus.push_back({g, noun, rel, static_cast<Token>(6 + g)});
        }
    }
    for (Token g = 1; g <= 4; ++g) {
        const Token partner = (g % 2 == 1) ? g + 1 : g - 1;
        BiasPair p;
        p.stereotyped = {{g, noun}, {rel}, {static_cast<Token>(6 + g)}};
        p.counterfactual = {{partner, noun}, {rel}, {static_cast<Token>(6 + g)}};
        p.irrelevant_object = TokenSeq{12};
        w.pairs.push_back(p);
    }
    return w;
}

inline std::shared_ptr<const BasicModel<double>> memorizing_model() {
    static const auto model = [] {
        const auto w = memo_world();
        const auto c = tiny_config(2, 16, 2, 16, 8, 32, 3);
        TrainHyper h;
        h.learning_rate = 1e-2;
        h.steps = 300;
        h.batch = 8;
        h.seed = 1;
        const auto trained = train_base(init_model<float>(c), w.corpus, h);
        return std::make_shared<const BasicModel<double>>(trained.cast<double>());
    }();
    return model;
}

}  // namespace fstest
