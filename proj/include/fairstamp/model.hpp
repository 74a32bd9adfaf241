#pragma once

#include "fairstamp/core.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace fairstamp {

// The only capability the metrics need from a model. External models (for
// example a masked LM scored through a different route) plug in here.
class ProbabilityModel {
public:
    virtual ~ProbabilityModel() = default;

    // P[object | prompt], chain rule over the object's tokens.
    virtual double object_prob(const TokenSeq& prompt, const TokenSeq& object) const = 0;
};

template <typename T>
struct ForwardResult {
    Matrix<T> logits;
    HiddenStates<T> hidden;
};

// Forward-only operations over a (model, stamps) view.
template <typename T>
ForwardResult<T> forward(const ModelView<T>& view, const TokenSeq& input);
template <typename T>
Matrix<T> forward_with_patch(const ModelView<T>& view, const TokenSeq& input,
                             std::span<const Patch<T>> patches);
template <typename T>
double object_prob(const ModelView<T>& view, const TokenSeq& prompt, const TokenSeq& object,
                   std::span<const Patch<T>> patches = {});
template <typename T>
std::vector<double> next_token_distribution(const ModelView<T>& view, const TokenSeq& prompt);

// Pre-norm decoder-only transformer with learned positions and an untied
// readout. Immutable after construction except through mutable_params().
template <typename T>
class BasicModel : public ProbabilityModel {
public:
    BasicModel(ModelConfig config, ModelParams<T> params);

    const ModelConfig& config() const { return config_; }
    const ModelParams<T>& params() const { return params_; }
    ModelParams<T>& mutable_params() { return params_; }

    ModelView<T> view() const { return ModelView<T>{this, {}}; }

    ForwardResult<T> forward(const TokenSeq& input) const;
    Matrix<T> forward_with_patch(const TokenSeq& input, std::span<const Patch<T>> patches) const;
    double object_prob(const TokenSeq& prompt, const TokenSeq& object) const override;
    std::vector<double> next_token_distribution(const TokenSeq& prompt) const;

    // FNV-1a over the in-memory bytes of every parameter.
    std::uint64_t checksum() const;
    std::size_t parameter_count() const;

    template <typename U>
    BasicModel<U> cast() const;

private:
    ModelConfig config_;
    ModelParams<T> params_;
};

using Model = BasicModel<float>;
using Model64 = BasicModel<double>;

// Deterministic initialization from config.seed.
template <typename T = float>
BasicModel<T> init_model(const ModelConfig& config);

struct TrainHyper {
    double learning_rate = 3e-3;
    int steps = 1500;
    int batch = 16;
    std::uint64_t seed = 0;
};

struct TrainLog {
    double initial_loss = 0.0;
    double final_loss = 0.0;
    std::vector<double> step_losses;
};

// Mean next-token cross-entropy over every predicted position of the corpus.
template <typename T>
double corpus_loss(const BasicModel<T>& model, std::span<const TokenSeq> corpus);

// Adam on all parameters with seeded minibatch sampling.
template <typename T>
BasicModel<T> train_base(const BasicModel<T>& model, std::span<const TokenSeq> corpus,
                         const TrainHyper& hyper, TrainLog* log = nullptr);

// Ancestral samples. The first token of each prefix is drawn uniformly from
// the vocabulary, every following token from the model.
template <typename T>
std::vector<TokenSeq> sample_prefixes(const BasicModel<T>& model, int count, int min_length,
                                      int max_length, std::uint64_t seed);

// Checkpoint directory: manifest.json + weights.bin (little-endian f32).
void save_checkpoint(const Model& model, const std::filesystem::path& dir);
Model load_checkpoint(const std::filesystem::path& dir);

void validate_tokens(const ModelConfig& config, std::span<const Token> tokens);

}  // namespace fairstamp
