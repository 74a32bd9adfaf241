#include "fairstamp/model.hpp"

#include "fairstamp/errors.hpp"
#include "fairstamp/optim.hpp"
#include "fairstamp/random.hpp"

#include <cmath>
#include <cstring>

namespace fairstamp {

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

template <typename T>
TokenSeq scoring_sequence(const ModelConfig& config, const TokenSeq& prompt, const TokenSeq& object) {
    if (prompt.empty()) {
        throw ArgumentError("empty prompt");
    }
    if (object.empty()) {
        throw ArgumentError("empty object");
    }
    if (static_cast<int>(prompt.size() + object.size()) > config.max_seq_len) {
        throw LengthError("prompt+object length " + std::to_string(prompt.size() + object.size()) +
                          " exceeds max_seq_len " + std::to_string(config.max_seq_len));
    }
    TokenSeq seq = prompt;
    seq.insert(seq.end(), object.begin(), object.end() - 1);
    return seq;
}

}  // namespace

template <typename T>
ForwardResult<T> forward(const ModelView<T>& view, const TokenSeq& input) {
    ForwardCache<T> cache = run_forward<T>(view, input);
    return ForwardResult<T>{std::move(cache.logits), cache.hidden_states()};
}

template <typename T>
Matrix<T> forward_with_patch(const ModelView<T>& view, const TokenSeq& input,
                             std::span<const Patch<T>> patches) {
    return run_forward<T>(view, input, patches).logits;
}

template <typename T>
double object_prob(const ModelView<T>& view, const TokenSeq& prompt, const TokenSeq& object,
                   std::span<const Patch<T>> patches) {
    const TokenSeq seq = scoring_sequence<T>(view.model->config(), prompt, object);
    const ForwardCache<T> cache = run_forward<T>(view, seq, patches);
    double log_prob = 0.0;
    const int first = static_cast<int>(prompt.size()) - 1;
    for (std::size_t k = 0; k < object.size(); ++k) {
        const auto logp = log_softmax_row(cache.logits, first + static_cast<int>(k));
        log_prob += logp.at(static_cast<std::size_t>(object[k]));
    }
    return std::exp(log_prob);
}

template <typename T>
std::vector<double> next_token_distribution(const ModelView<T>& view, const TokenSeq& prompt) {
    if (prompt.empty()) {
        throw ArgumentError("empty prompt");
    }
    const ForwardCache<T> cache = run_forward<T>(view, prompt);
    return softmax_row(cache.logits, static_cast<int>(prompt.size()) - 1);
}

template <typename T>
BasicModel<T>::BasicModel(ModelConfig config, ModelParams<T> params)
    : config_(config), params_(std::move(params)) {
    config_.validate();
}

template <typename T>
ForwardResult<T> BasicModel<T>::forward(const TokenSeq& input) const {
    return fairstamp::forward(view(), input);
}

template <typename T>
Matrix<T> BasicModel<T>::forward_with_patch(const TokenSeq& input,
                                            std::span<const Patch<T>> patches) const {
    return fairstamp::forward_with_patch(view(), input, patches);
}

template <typename T>
double BasicModel<T>::object_prob(const TokenSeq& prompt, const TokenSeq& object) const {
    return fairstamp::object_prob<T>(view(), prompt, object);
}

template <typename T>
std::vector<double> BasicModel<T>::next_token_distribution(const TokenSeq& prompt) const {
    return fairstamp::next_token_distribution(view(), prompt);
}

template <typename T>
std::uint64_t BasicModel<T>::checksum() const {
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    params_.for_each([&](const std::string&, const auto& tensor) {
        const auto* bytes = reinterpret_cast<const unsigned char*>(tensor.data());
        const std::size_t n = static_cast<std::size_t>(tensor.size()) * sizeof(T);
        for (std::size_t i = 0; i < n; ++i) {
            hash ^= bytes[i];
            hash *= 0x100000001b3ULL;
        }
    });
    return hash;
}

template <typename T>
std::size_t BasicModel<T>::parameter_count() const {
    std::size_t n = 0;
    params_.for_each([&](const std::string&, const auto& tensor) {
        n += static_cast<std::size_t>(tensor.size());
    });
    return n;
}

template <typename T>
template <typename U>
BasicModel<U> BasicModel<T>::cast() const {
    ModelParams<U> out = ModelParams<U>::zeros(config_);
    std::vector<const T*> sources;
    params_.for_each([&](const std::string&, const auto& tensor) { sources.push_back(tensor.data()); });
    std::size_t i = 0;
    out.for_each([&](const std::string&, auto& tensor) {
        const T* src = sources[i++];
        for (Eigen::Index j = 0; j < tensor.size(); ++j) {
            tensor.data()[j] = static_cast<U>(src[j]);
        }
    });
    return BasicModel<U>(config_, std::move(out));
}

template <typename T>
BasicModel<T> init_model(const ModelConfig& config) {
    config.validate();
    ModelParams<T> params = ModelParams<T>::zeros(config);
    Rng rng(config.seed);
    const double residual_std = 0.02 / std::sqrt(2.0 * config.num_layers);
    params.for_each([&](const std::string& name, auto& tensor) {
        if (ends_with(name, "gain")) {
            tensor.setOnes();
        } else if (ends_with(name, "bias")) {
            tensor.setZero();
        } else {
            const double std = (ends_with(name, ".output") || ends_with(name, "ffn_out"))
                                   ? residual_std
                                   : 0.02;
            for (Eigen::Index j = 0; j < tensor.size(); ++j) {
                tensor.data()[j] = static_cast<T>(std * rng.normal());
            }
        }
    });
    return BasicModel<T>(config, std::move(params));
}

namespace {

// Cross-entropy of one sequence; optionally accumulates dL/dlogits scaled by
// `weight` into `dlogits`.
template <typename T>
double sequence_loss(const ForwardCache<T>& cache, double weight, Matrix<T>* dlogits) {
    const int len = static_cast<int>(cache.tokens.size());
    double loss = 0.0;
    for (int i = 0; i + 1 < len; ++i) {
        const auto probs = softmax_row(cache.logits, i);
        const Token target = cache.tokens[static_cast<std::size_t>(i + 1)];
        loss -= std::log(std::max(probs[static_cast<std::size_t>(target)], 1e-300));
        if (dlogits != nullptr) {
            for (std::size_t j = 0; j < probs.size(); ++j) {
                (*dlogits)(i, static_cast<Eigen::Index>(j)) = static_cast<T>(weight * probs[j]);
            }
            (*dlogits)(i, target) -= static_cast<T>(weight);
        }
    }
    return loss;
}

}  // namespace

template <typename T>
double corpus_loss(const BasicModel<T>& model, std::span<const TokenSeq> corpus) {
    double total = 0.0;
    std::size_t predictions = 0;
    for (const auto& seq : corpus) {
        if (seq.size() < 2) {
            continue;
        }
        total += sequence_loss<T>(run_forward<T>(model.view(), seq), 1.0, nullptr);
        predictions += seq.size() - 1;
    }
    return predictions == 0 ? 0.0 : total / static_cast<double>(predictions);
}

template <typename T>
BasicModel<T> train_base(const BasicModel<T>& model, std::span<const TokenSeq> corpus,
                         const TrainHyper& hyper, TrainLog* log) {
    if (corpus.empty()) {
        throw ArgumentError("empty training corpus");
    }
    if (hyper.steps < 0 || hyper.batch < 1 || !(hyper.learning_rate > 0.0)) {
        throw ArgumentError("invalid training hyperparameters");
    }
    for (const auto& seq : corpus) {
        validate_tokens(model.config(), seq);
    }

    BasicModel<T> trained = model;
    Adam adam(hyper.learning_rate);
    Rng rng(hyper.seed);
    if (log != nullptr) {
        log->initial_loss = corpus_loss(model, corpus);
        log->step_losses.clear();
    }

    for (int step = 0; step < hyper.steps; ++step) {
        std::vector<std::size_t> batch(static_cast<std::size_t>(hyper.batch));
        std::size_t predictions = 0;
        for (auto& idx : batch) {
            idx = rng.index(corpus.size());
            predictions += corpus[idx].size() - 1;
        }
        if (predictions == 0) {
            continue;
        }
        const double weight = 1.0 / static_cast<double>(predictions);

        ModelParams<T> grads = ModelParams<T>::zeros(model.config());
        double batch_loss = 0.0;
        for (const std::size_t idx : batch) {
            const TokenSeq& seq = corpus[idx];
            if (seq.size() < 2) {
                continue;
            }
            const ForwardCache<T> cache = run_forward<T>(trained.view(), seq);
            Matrix<T> dlogits = Matrix<T>::Zero(cache.logits.rows(), cache.logits.cols());
            batch_loss += sequence_loss(cache, weight, &dlogits) * weight;
            run_backward<T>(trained.view(), cache, dlogits, &grads, nullptr);
        }

        std::vector<const T*> grad_ptrs;
        grads.for_each([&](const std::string&, const auto& g) { grad_ptrs.push_back(g.data()); });
        adam.begin_step();
        std::size_t i = 0;
        trained.mutable_params().for_each([&](const std::string&, auto& p) {
            adam.update(p.data(), grad_ptrs[i++], static_cast<std::size_t>(p.size()));
        });
        if (log != nullptr) {
            log->step_losses.push_back(batch_loss);
        }
    }

    if (log != nullptr) {
        log->final_loss = corpus_loss(trained, corpus);
    }
    return trained;
}

template <typename T>
std::vector<TokenSeq> sample_prefixes(const BasicModel<T>& model, int count, int min_length,
                                      int max_length, std::uint64_t seed) {
    const ModelConfig& config = model.config();
    if (count < 0) {
        throw ArgumentError("prefix count must be non-negative");
    }
    if (min_length < 1 || max_length < min_length || max_length > config.max_seq_len / 2) {
        throw ArgumentError("invalid prefix length range [" + std::to_string(min_length) + ", " +
                            std::to_string(max_length) + "]");
    }
    Rng rng(seed);
    std::vector<TokenSeq> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int c = 0; c < count; ++c) {
        const int length =
            min_length + static_cast<int>(rng.index(static_cast<std::size_t>(max_length - min_length + 1)));
        TokenSeq seq;
        seq.push_back(static_cast<Token>(rng.index(static_cast<std::size_t>(config.vocab_size))));
        while (static_cast<int>(seq.size()) < length) {
            const auto probs = model.next_token_distribution(seq);
            seq.push_back(static_cast<Token>(rng.categorical(probs)));
        }
        out.push_back(std::move(seq));
    }
    return out;
}

#define FAIRSTAMP_INSTANTIATE(T)                                                                  \
    template ForwardResult<T> forward<T>(const ModelView<T>&, const TokenSeq&);                   \
    template Matrix<T> forward_with_patch<T>(const ModelView<T>&, const TokenSeq&,                \
                                             std::span<const Patch<T>>);                          \
    template double object_prob<T>(const ModelView<T>&, const TokenSeq&, const TokenSeq&,         \
                                   std::span<const Patch<T>>);                                    \
    template std::vector<double> next_token_distribution<T>(const ModelView<T>&, const TokenSeq&); \
    template class BasicModel<T>;                                                                 \
    template BasicModel<T> init_model<T>(const ModelConfig&);                                     \
    template double corpus_loss<T>(const BasicModel<T>&, std::span<const TokenSeq>);              \
    template BasicModel<T> train_base<T>(const BasicModel<T>&, std::span<const TokenSeq>,         \
                                         const TrainHyper&, TrainLog*);                           \
    template std::vector<TokenSeq> sample_prefixes<T>(const BasicModel<T>&, int, int, int,        \
                                                      std::uint64_t);

FAIRSTAMP_INSTANTIATE(float)
FAIRSTAMP_INSTANTIATE(double)

#undef FAIRSTAMP_INSTANTIATE

template BasicModel<double> BasicModel<float>::cast<double>() const;
template BasicModel<float> BasicModel<double>::cast<float>() const;
template BasicModel<float> BasicModel<float>::cast<float>() const;
template BasicModel<double> BasicModel<double>::cast<double>() const;

}  // namespace fairstamp
