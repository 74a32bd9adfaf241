#pragma once

#include "fairstamp/data.hpp"
#include "fairstamp/errors.hpp"
#include "fairstamp/metrics.hpp"
#include "fairstamp/stamp.hpp"
#include "fairstamp/tracing.hpp"

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fairstamp {

struct LossWeights {
    double alpha = 40.0;
    double beta = 0.1;

    void validate() const;
};

struct EditHyper {
    int batch_size = 4;
    int iterations_per_batch = 20;
    double learning_rate = 0.1;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    int prefix_count = 10;
    int prefix_min_length = 2;
    int prefix_max_length = 5;
    int stamp_hidden_dim = 64;
    std::uint64_t seed = 0;
    // |log P1 - log P2| instead of |P1 - P2| in the efficacy term.
    bool log_prob_efficacy = false;

    void validate() const;
};

struct EditRecord {
    int batch = 0;
    int iteration = 0;
    double l_e = 0.0;
    double l_s1 = 0.0;
    double l_s2 = 0.0;
    double total = 0.0;
    double wall_seconds = 0.0;
};

// Relation tokens appended to a bare subject, p'(s) = s ++ relation.
struct TemplatePrompt {
    TokenSeq relation;
};

struct LossTerms {
    double efficacy = 0.0;
    double retention_prompts = 0.0;
    double retention_subjects = 0.0;
    double total = 0.0;
    // (pair, prefix) combinations dropped because the prefixed prompt was too long.
    std::size_t skipped = 0;
};

// L_e + alpha * L_s1 + beta * L_s2.
double combine_loss(double efficacy, double retention_prompts, double retention_subjects,
                    const LossWeights& weights);

// KL(p || q) over two distributions of equal size; terms with p_i = 0 vanish.
double kl_divergence(std::span<const double> p, std::span<const double> q);

// Each (pair, prefix) combination contributes |P[o1 | x ++ p1] - P[o2 | x ++ p2]|,
// the empty prefix always included. Mean over the combinations that fit.
template <typename T>
double loss_efficacy(const ModelView<T>& current, std::span<const BiasPair> batch,
                     std::span<const TokenSeq> prefixes, bool log_prob = false,
                     std::size_t* skipped = nullptr);

// Mean KL(base || current) of the next-token distribution at the end of
// every prefixed prompt of both triplets.
template <typename T>
double loss_retention_prompts(const BasicModel<T>& base, const ModelView<T>& current,
                              std::span<const BiasPair> batch, std::span<const TokenSeq> prefixes,
                              std::size_t* skipped = nullptr);

// Mean KL over the deduplicated subjects of the batch, each followed by the
// template relation. No prefixes.
template <typename T>
double loss_retention_subjects(const BasicModel<T>& base, const ModelView<T>& current,
                               std::span<const BiasPair> batch, const TemplatePrompt& templ);

template <typename T>
LossTerms total_loss(const BasicModel<T>& base, const ModelView<T>& current,
                     std::span<const BiasPair> batch, std::span<const TokenSeq> prefixes,
                     const TemplatePrompt& templ, const LossWeights& weights,
                     bool log_prob = false);

// Loss terms plus their gradient with respect to every stamp in `current`.
// `grads` is resized to match current.stamps and overwritten.
template <typename T>
LossTerms loss_and_gradient(const BasicModel<T>& base, const ModelView<T>& current,
                            std::span<const BiasPair> batch, std::span<const TokenSeq> prefixes,
                            const TemplatePrompt& templ, const LossWeights& weights,
                            bool log_prob, std::vector<FairnessStamp<T>>* grads);

// Subjects of both triplets, first occurrence order.
std::vector<TokenSeq> unique_subjects(std::span<const BiasPair> batch);

// Empty layer list: locate the decisive layer on the bias set.
struct LayerChoice {
    std::vector<int> layers;
    PositionMode positions = PositionMode::subject_tokens;

    static LayerChoice automatic(PositionMode mode = PositionMode::subject_tokens) {
        return {{}, mode};
    }
    static LayerChoice explicit_layers(std::vector<int> layers) { return {std::move(layers)}; }
};

template <typename T>
struct EditResult {
    StampedModel<T> model;
    std::vector<EditRecord> records;
    std::optional<LocationReport> location;
    std::vector<std::string> diagnostics;
};

// Non-finite loss during editing. Carries the stamps as they were after the
// last step that produced a finite loss, and the telemetry up to that point.
template <typename T>
class DivergenceError : public Error {
public:
    DivergenceError(const std::string& message, std::vector<FairnessStamp<T>> last_finite,
                    std::vector<EditRecord> records)
        : Error("numeric", message),
          last_finite_(std::move(last_finite)),
          records_(std::move(records)) {}

    const std::vector<FairnessStamp<T>>& last_finite() const { return last_finite_; }
    const std::vector<EditRecord>& records() const { return records_; }

private:
    std::vector<FairnessStamp<T>> last_finite_;
    std::vector<EditRecord> records_;
};

// One new stamp per chosen layer, trained jointly with Adam on the stamp
// parameters only. Batches come from a seeded shuffle; Adam state persists
// across batches.
template <typename T>
EditResult<T> edit(std::shared_ptr<const BasicModel<T>> base, std::span<const BiasPair> bias_set,
                   const LayerChoice& layers, const LossWeights& weights, const EditHyper& hyper,
                   const TemplatePrompt& templ);

// Continues training the stamps already attached to `model`. Used by edit
// and by each continual stage.
template <typename T>
std::vector<EditRecord> train_stamps(StampedModel<T>& model, std::span<const BiasPair> bias_set,
                                     const LossWeights& weights, const EditHyper& hyper,
                                     const TemplatePrompt& templ, int first_batch_index = 0);

struct ContinualStage {
    // SS of every set edited so far, in order, measured after this stage.
    std::vector<double> ss;
    std::optional<double> rs;
};

template <typename T>
struct ContinualResult {
    StampedModel<T> model;
    std::vector<EditRecord> records;
    std::vector<ContinualStage> stages;
    std::optional<LocationReport> location;
};

// The stamp layers are chosen once, on the first set. RS is measured after
// each stage when a retention set is given.
template <typename T>
ContinualResult<T> continual_edit(std::shared_ptr<const BasicModel<T>> base,
                                  const std::vector<std::vector<BiasPair>>& bias_sets,
                                  const LayerChoice& layers, const LossWeights& weights,
                                  const EditHyper& hyper, const TemplatePrompt& templ,
                                  std::span<const RetentionItem> retention = {});

struct GradCheckResult {
    double max_relative_error = 0.0;
    std::size_t parameters_checked = 0;
};

// Analytic stamp gradient of total_loss against central differences.
GradCheckResult grad_check(const Model64& base, const FairnessStamp<double>& stamp,
                           std::span<const BiasPair> batch, std::span<const TokenSeq> prefixes,
                           const TemplatePrompt& templ, const LossWeights& weights,
                           double step = 1e-5, double floor = 1e-8);

std::string telemetry_csv(std::span<const EditRecord> records);

}  // namespace fairstamp
