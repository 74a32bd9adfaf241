#include "fairstamp/edit.hpp"

#include "fairstamp/optim.hpp"
#include "fairstamp/random.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>

namespace fairstamp {

void LossWeights::validate() const {
    if (!std::isfinite(alpha) || !std::isfinite(beta) || alpha < 0.0 || beta < 0.0) {
        throw ConfigError("loss weights must be finite and non-negative");
    }
}

void EditHyper::validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be positive");
    if (iterations_per_batch < 1) throw ConfigError("iterations_per_batch must be positive");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
        throw ConfigError("learning_rate must be positive");
    }
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) {
        throw ConfigError("adam betas must lie in [0, 1)");
    }
    if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
    if (prefix_count < 0) throw ConfigError("prefix_count must be non-negative");
    if (prefix_min_length < 1 || prefix_max_length < prefix_min_length) {
        throw ConfigError("invalid prefix length range");
    }
    if (stamp_hidden_dim < 1) throw ConfigError("stamp_hidden_dim must be positive");
}

double combine_loss(double efficacy, double retention_prompts, double retention_subjects,
                    const LossWeights& weights) {
    return efficacy + weights.alpha * retention_prompts + weights.beta * retention_subjects;
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
    if (p.size() != q.size()) {
        throw ShapeError("KL over distributions of different sizes");
    }
    double kl = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] > 0.0) {
            kl += p[i] * (std::log(p[i]) - std::log(q[i]));
        }
    }
    return kl;
}

std::vector<TokenSeq> unique_subjects(std::span<const BiasPair> batch) {
    std::vector<TokenSeq> out;
    auto add = [&](const TokenSeq& s) {
        if (std::find(out.begin(), out.end(), s) == out.end()) {
            out.push_back(s);
        }
    };
    for (const auto& pair : batch) {
        add(pair.stereotyped.subject);
        add(pair.counterfactual.subject);
    }
    return out;
}

namespace {

// One (pair, prefix) combination. Side 0 is the stereotyped triplet.
struct Combo {
    TokenSeq prompt[2];
    TokenSeq object[2];
    TokenSeq sequence[2];  // prompt ++ object[:-1]
};

struct Prepared {
    std::vector<Combo> combos;
    std::size_t skipped = 0;
    std::vector<TokenSeq> subject_prompts;
    // Base-model log distributions at the last prompt position.
    std::vector<std::vector<double>> base_prompt;   // 2 per combo
    std::vector<std::vector<double>> base_subject;  // 1 per subject prompt
};

TokenSeq scoring_sequence(const TokenSeq& prompt, const TokenSeq& object) {
    TokenSeq seq = prompt;
    seq.insert(seq.end(), object.begin(), object.end() - 1);
    return seq;
}

std::vector<Combo> build_combos(const ModelConfig& config, std::span<const BiasPair> batch,
                                std::span<const TokenSeq> prefixes, std::size_t* skipped) {
    if (batch.empty()) {
        throw LossError("empty batch");
    }
    std::vector<TokenSeq> all_prefixes{TokenSeq{}};
    all_prefixes.insert(all_prefixes.end(), prefixes.begin(), prefixes.end());
    std::vector<Combo> combos;
    std::size_t dropped = 0;
    for (const auto& pair : batch) {
        const KnowledgeTriplet* sides[2] = {&pair.stereotyped, &pair.counterfactual};
        for (const auto& x : all_prefixes) {
            Combo c;
            bool fits = true;
            for (int s = 0; s < 2; ++s) {
                if (sides[s]->object.empty()) {
                    throw LossError("empty object in bias pair");
                }
                c.prompt[s] = concat(x, sides[s]->prompt());
                c.object[s] = sides[s]->object;
                c.sequence[s] = scoring_sequence(c.prompt[s], c.object[s]);
                if (c.prompt[s].empty() ||
                    static_cast<int>(c.sequence[s].size()) > config.max_seq_len) {
                    fits = false;
                }
            }
            if (fits) {
                combos.push_back(std::move(c));
            } else {
                ++dropped;
            }
        }
    }
    if (skipped) {
        *skipped = dropped;
    }
    if (combos.empty()) {
        throw LossError("every (pair, prefix) combination exceeds max_seq_len");
    }
    return combos;
}

std::vector<TokenSeq> build_subject_prompts(const ModelConfig& config,
                                            std::span<const BiasPair> batch,
                                            const TemplatePrompt& templ) {
    if (templ.relation.empty()) {
        throw ArgumentError("template relation is empty");
    }
    std::vector<TokenSeq> out;
    for (const auto& s : unique_subjects(batch)) {
        TokenSeq p = concat(s, templ.relation);
        if (static_cast<int>(p.size()) > config.max_seq_len) {
            throw ArgumentError("template prompt of length " + std::to_string(p.size()) +
                                " exceeds max_seq_len");
        }
        out.push_back(std::move(p));
    }
    return out;
}

template <typename T>
std::vector<double> last_log_dist(const ModelView<T>& view, const TokenSeq& seq, int row) {
    const ForwardCache<T> cache = run_forward<T>(view, seq);
    return log_softmax_row(cache.logits, row);
}

double kl_from_logs(const std::vector<double>& log_p, const std::vector<double>& log_q) {
    double kl = 0.0;
    for (std::size_t i = 0; i < log_p.size(); ++i) {
        const double p = std::exp(log_p[i]);
        if (p > 0.0) {
            kl += p * (log_p[i] - log_q[i]);
        }
    }
    return kl;
}

template <typename T>
Prepared prepare(const BasicModel<T>* base, const ModelConfig& config,
                 std::span<const BiasPair> batch, std::span<const TokenSeq> prefixes,
                 const TemplatePrompt* templ) {
    Prepared p;
    p.combos = build_combos(config, batch, prefixes, &p.skipped);
    if (templ) {
        p.subject_prompts = build_subject_prompts(config, batch, *templ);
    }
    if (base) {
        const ModelView<T> bv = base->view();
        for (const auto& c : p.combos) {
            for (int s = 0; s < 2; ++s) {
                p.base_prompt.push_back(
                    last_log_dist(bv, c.sequence[s], static_cast<int>(c.prompt[s].size()) - 1));
            }
        }
        for (const auto& sp : p.subject_prompts) {
            p.base_subject.push_back(last_log_dist(bv, sp, static_cast<int>(sp.size()) - 1));
        }
    }
    return p;
}

struct Wants {
    bool efficacy = true;
    bool prompts = true;
    bool subjects = true;
};

template <typename T>
LossTerms compute(const ModelView<T>& current, const Prepared& prep, const LossWeights& weights,
                  bool log_prob, Wants wants, std::vector<FairnessStamp<T>>* grads) {
    const int vocab = current.model->config().vocab_size;
    if (grads) {
        grads->clear();
        for (const auto& s : current.stamps) {
            FairnessStamp<T> g = s;
            g.key.setZero();
            g.value.setZero();
            grads->push_back(std::move(g));
        }
    }
    LossTerms terms;
    terms.skipped = prep.skipped;
    const double n_combos = static_cast<double>(prep.combos.size());

    for (std::size_t ci = 0; ci < prep.combos.size(); ++ci) {
        const Combo& c = prep.combos[ci];
        ForwardCache<T> cache[2];
        double log_p[2];
        std::vector<std::vector<double>> log_rows[2];
        for (int s = 0; s < 2; ++s) {
            cache[s] = run_forward<T>(current, c.sequence[s]);
            const int first = static_cast<int>(c.prompt[s].size()) - 1;
            log_p[s] = 0.0;
            for (std::size_t k = 0; k < c.object[s].size(); ++k) {
                log_rows[s].push_back(log_softmax_row(cache[s].logits, first + static_cast<int>(k)));
                log_p[s] += log_rows[s].back().at(static_cast<std::size_t>(c.object[s][k]));
            }
        }
        const double prob[2] = {std::exp(log_p[0]), std::exp(log_p[1])};
        const double diff = log_prob ? log_p[0] - log_p[1] : prob[0] - prob[1];
        const double sign = (diff > 0.0) - (diff < 0.0);
        if (wants.efficacy) {
            terms.efficacy += std::abs(diff) / n_combos;
        }
        double kl[2] = {0.0, 0.0};
        if (wants.prompts) {
            for (int s = 0; s < 2; ++s) {
                kl[s] = kl_from_logs(prep.base_prompt[2 * ci + s], log_rows[s].front());
                terms.retention_prompts += kl[s] / (2.0 * n_combos);
            }
        }
        if (!grads) {
            continue;
        }
        for (int s = 0; s < 2; ++s) {
            Matrix<T> dlogits = Matrix<T>::Zero(static_cast<Eigen::Index>(c.sequence[s].size()), vocab);
            const int first = static_cast<int>(c.prompt[s].size()) - 1;
            bool any = false;
            if (wants.efficacy && sign != 0.0) {
                const double coef = sign * (s == 0 ? 1.0 : -1.0) / n_combos;
                const double factor = log_prob ? coef : coef * prob[s];
                for (std::size_t k = 0; k < c.object[s].size(); ++k) {
                    const int row = first + static_cast<int>(k);
                    const auto& lr = log_rows[s][k];
                    for (int j = 0; j < vocab; ++j) {
                        const double onehot = j == c.object[s][k] ? 1.0 : 0.0;
                        dlogits(row, j) += static_cast<T>(factor * (onehot - std::exp(lr[static_cast<std::size_t>(j)])));
                    }
                }
                any = true;
            }
            if (wants.prompts && weights.alpha != 0.0) {
                const double coef = weights.alpha / (2.0 * n_combos);
                const auto& lq = log_rows[s].front();
                const auto& lp = prep.base_prompt[2 * ci + static_cast<std::size_t>(s)];
                for (int j = 0; j < vocab; ++j) {
                    const auto u = static_cast<std::size_t>(j);
                    dlogits(first, j) += static_cast<T>(coef * (std::exp(lq[u]) - std::exp(lp[u])));
                }
                any = true;
            }
            if (any) {
                run_backward<T>(current, cache[s], dlogits, nullptr, grads);
            }
        }
    }

    if (wants.subjects) {
        const double n_subjects = static_cast<double>(prep.subject_prompts.size());
        for (std::size_t si = 0; si < prep.subject_prompts.size(); ++si) {
            const TokenSeq& sp = prep.subject_prompts[si];
            const int last = static_cast<int>(sp.size()) - 1;
            const ForwardCache<T> cache = run_forward<T>(current, sp);
            const auto lq = log_softmax_row(cache.logits, last);
            terms.retention_subjects += kl_from_logs(prep.base_subject[si], lq) / n_subjects;
            if (grads && weights.beta != 0.0) {
                Matrix<T> dlogits = Matrix<T>::Zero(static_cast<Eigen::Index>(sp.size()), vocab);
                const double coef = weights.beta / n_subjects;
                for (int j = 0; j < vocab; ++j) {
                    const auto u = static_cast<std::size_t>(j);
                    dlogits(last, j) = static_cast<T>(coef * (std::exp(lq[u]) - std::exp(prep.base_subject[si][u])));
                }
                run_backward<T>(current, cache, dlogits, nullptr, grads);
            }
        }
    }
    terms.total = combine_loss(terms.efficacy, terms.retention_prompts, terms.retention_subjects, weights);
    return terms;
}

template <typename T>
bool grads_finite(const std::vector<FairnessStamp<T>>& grads) {
    for (const auto& g : grads) {
        if (!g.key.allFinite() || !g.value.allFinite()) {
            return false;
        }
    }
    return true;
}

}  // namespace

template <typename T>
double loss_efficacy(const ModelView<T>& current, std::span<const BiasPair> batch,
                     std::span<const TokenSeq> prefixes, bool log_prob, std::size_t* skipped) {
    const Prepared prep = prepare<T>(nullptr, current.model->config(), batch, prefixes, nullptr);
    if (skipped) {
        *skipped = prep.skipped;
    }
    return compute<T>(current, prep, LossWeights{0.0, 0.0}, log_prob, Wants{true, false, false}, nullptr)
        .efficacy;
}

template <typename T>
double loss_retention_prompts(const BasicModel<T>& base, const ModelView<T>& current,
                              std::span<const BiasPair> batch, std::span<const TokenSeq> prefixes,
                              std::size_t* skipped) {
    const Prepared prep = prepare<T>(&base, current.model->config(), batch, prefixes, nullptr);
    if (skipped) {
        *skipped = prep.skipped;
    }
    return compute<T>(current, prep, LossWeights{0.0, 0.0}, false, Wants{false, true, false}, nullptr)
        .retention_prompts;
}

template <typename T>
double loss_retention_subjects(const BasicModel<T>& base, const ModelView<T>& current,
                               std::span<const BiasPair> batch, const TemplatePrompt& templ) {
    if (batch.empty()) {
        throw LossError("empty batch");
    }
    const ModelConfig& config = current.model->config();
    Prepared prep;
    prep.subject_prompts = build_subject_prompts(config, batch, templ);
    for (const auto& sp : prep.subject_prompts) {
        prep.base_subject.push_back(last_log_dist(base.view(), sp, static_cast<int>(sp.size()) - 1));
    }
    return compute<T>(current, prep, LossWeights{0.0, 0.0}, false, Wants{false, false, true}, nullptr)
        .retention_subjects;
}

template <typename T>
LossTerms total_loss(const BasicModel<T>& base, const ModelView<T>& current,
                     std::span<const BiasPair> batch, std::span<const TokenSeq> prefixes,
                     const TemplatePrompt& templ, const LossWeights& weights, bool log_prob) {
    weights.validate();
    const Prepared prep = prepare<T>(&base, current.model->config(), batch, prefixes, &templ);
    return compute<T>(current, prep, weights, log_prob, Wants{}, nullptr);
}

template <typename T>
LossTerms loss_and_gradient(const BasicModel<T>& base, const ModelView<T>& current,
                            std::span<const BiasPair> batch, std::span<const TokenSeq> prefixes,
                            const TemplatePrompt& templ, const LossWeights& weights, bool log_prob,
                            std::vector<FairnessStamp<T>>* grads) {
    weights.validate();
    const Prepared prep = prepare<T>(&base, current.model->config(), batch, prefixes, &templ);
    return compute<T>(current, prep, weights, log_prob, Wants{}, grads);
}

template <typename T>
std::vector<EditRecord> train_stamps(StampedModel<T>& model, std::span<const BiasPair> bias_set,
                                     const LossWeights& weights, const EditHyper& hyper,
                                     const TemplatePrompt& templ, int first_batch_index) {
    weights.validate();
    hyper.validate();
    if (bias_set.empty()) {
        throw ArgumentError("bias set is empty");
    }
    if (model.stamps().empty()) {
        throw ArgumentError("no stamp attached");
    }
    const BasicModel<T>& base = model.base();
    const ModelConfig& config = base.config();
    const auto start = std::chrono::steady_clock::now();

    const std::vector<TokenSeq> prefixes =
        sample_prefixes(base, hyper.prefix_count, hyper.prefix_min_length,
                        hyper.prefix_max_length, hyper.seed);

    std::vector<std::size_t> order(bias_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(hyper.seed ^ 0x5bd1e995ULL);
    rng.shuffle(order);

    Adam adam(hyper.learning_rate, hyper.adam_beta1, hyper.adam_beta2, hyper.adam_eps);
    std::vector<EditRecord> records;
    std::vector<FairnessStamp<T>> grads;
    // Stamps at the most recent point where the loss was finite.
    std::vector<FairnessStamp<T>> last_finite(model.stamps().begin(), model.stamps().end());
    const auto batch_size = static_cast<std::size_t>(hyper.batch_size);
    const std::size_t num_batches = (order.size() + batch_size - 1) / batch_size;
    for (std::size_t b = 0; b < num_batches; ++b) {
        std::vector<BiasPair> batch;
        for (std::size_t i = b * batch_size; i < std::min(order.size(), (b + 1) * batch_size); ++i) {
            batch.push_back(bias_set[order[i]]);
        }
        const Prepared prep = prepare<T>(&base, config, batch, prefixes, &templ);
        for (int it = 0; it < hyper.iterations_per_batch; ++it) {
            const LossTerms terms =
                compute<T>(model.view(), prep, weights, hyper.log_prob_efficacy, Wants{}, &grads);
            const int batch_index = first_batch_index + static_cast<int>(b);
            if (!std::isfinite(terms.total) || !grads_finite(grads)) {
                std::ostringstream msg;
                msg << "non-finite loss at batch " << batch_index << " iteration " << it
                    << " (L_e=" << terms.efficacy << " L_s1=" << terms.retention_prompts
                    << " L_s2=" << terms.retention_subjects << ")";
                throw DivergenceError<T>(msg.str(), std::move(last_finite), std::move(records));
            }
            last_finite.assign(model.stamps().begin(), model.stamps().end());
            EditRecord rec;
            rec.batch = batch_index;
            rec.iteration = it;
            rec.l_e = terms.efficacy;
            rec.l_s1 = terms.retention_prompts;
            rec.l_s2 = terms.retention_subjects;
            rec.total = terms.total;
            rec.wall_seconds =
                std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            records.push_back(rec);

            adam.begin_step();
            auto& stamps = model.mutable_stamps();
            for (std::size_t s = 0; s < stamps.size(); ++s) {
                adam.update(stamps[s].key.data(), grads[s].key.data(),
                            static_cast<std::size_t>(stamps[s].key.size()));
                adam.update(stamps[s].value.data(), grads[s].value.data(),
                            static_cast<std::size_t>(stamps[s].value.size()));
            }
            for (const auto& s : stamps) {
                if (!s.key.allFinite() || !s.value.allFinite()) {
                    throw DivergenceError<T>("non-finite stamp parameters after batch " +
                                                 std::to_string(batch_index) + " iteration " +
                                                 std::to_string(it),
                                             std::move(last_finite), std::move(records));
                }
            }
        }
    }
    return records;
}

namespace {

template <typename T>
std::vector<int> resolve_layers(const BasicModel<T>& base, std::span<const BiasPair> bias_set,
                                const LayerChoice& choice, std::optional<LocationReport>* location) {
    if (!choice.layers.empty()) {
        return choice.layers;
    }
    TraceOptions options;
    options.positions = choice.positions;
    *location = locate_decisive_layer(base.view(), std::vector<BiasPair>(bias_set.begin(), bias_set.end()),
                                      options);
    return {(*location)->decisive_layer};
}

template <typename T>
StampedModel<T> fresh_stamped(std::shared_ptr<const BasicModel<T>> base, const std::vector<int>& layers,
                              const EditHyper& hyper) {
    StampedModel<T> model(base);
    const int d = base->config().model_dim;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        model.attach(new_stamp<T>(layers[i], d, hyper.stamp_hidden_dim,
                                  hyper.seed + 0x9e3779b97f4a7c15ULL * (i + 1)));
    }
    return model;
}

}  // namespace

template <typename T>
EditResult<T> edit(std::shared_ptr<const BasicModel<T>> base, std::span<const BiasPair> bias_set,
                   const LayerChoice& layers, const LossWeights& weights, const EditHyper& hyper,
                   const TemplatePrompt& templ) {
    if (!base) {
        throw ArgumentError("no base model");
    }
    if (bias_set.empty()) {
        throw ArgumentError("bias set is empty");
    }
    weights.validate();
    hyper.validate();
    const std::uint64_t checksum = base->checksum();
    std::optional<LocationReport> location;
    const std::vector<int> chosen = resolve_layers(*base, bias_set, layers, &location);
    StampedModel<T> model = fresh_stamped(base, chosen, hyper);
    std::vector<EditRecord> records = train_stamps(model, bias_set, weights, hyper, templ);
    if (base->checksum() != checksum) {
        throw CheckError("base model parameters changed during editing");
    }
    EditResult<T> result{std::move(model), std::move(records), std::move(location), {}};
    if (result.location) {
        for (std::size_t i = 0; i < result.location->per_pair.size(); ++i) {
            for (const auto& w : result.location->per_pair[i].warnings) {
                result.diagnostics.push_back("pair " + std::to_string(i) + ": " + w);
            }
        }
    }
    return result;
}

template <typename T>
ContinualResult<T> continual_edit(std::shared_ptr<const BasicModel<T>> base,
                                  const std::vector<std::vector<BiasPair>>& bias_sets,
                                  const LayerChoice& layers, const LossWeights& weights,
                                  const EditHyper& hyper, const TemplatePrompt& templ,
                                  std::span<const RetentionItem> retention) {
    if (!base) {
        throw ArgumentError("no base model");
    }
    if (bias_sets.empty()) {
        throw ArgumentError("no bias sets");
    }
    for (const auto& set : bias_sets) {
        if (set.empty()) {
            throw ArgumentError("continual editing got an empty bias set");
        }
    }
    weights.validate();
    hyper.validate();
    const std::uint64_t checksum = base->checksum();
    std::optional<LocationReport> location;
    const std::vector<int> chosen = resolve_layers(*base, std::span<const BiasPair>(bias_sets.front()),
                                                   layers, &location);
    ContinualResult<T> result{fresh_stamped(base, chosen, hyper), {}, {}, std::move(location)};
    int batch_index = 0;
    for (std::size_t stage = 0; stage < bias_sets.size(); ++stage) {
        auto records = train_stamps(result.model, std::span<const BiasPair>(bias_sets[stage]),
                                    weights, hyper, templ, batch_index);
        const auto batch_size = static_cast<std::size_t>(hyper.batch_size);
        batch_index += static_cast<int>((bias_sets[stage].size() + batch_size - 1) / batch_size);
        result.records.insert(result.records.end(), records.begin(), records.end());
        ContinualStage report;
        for (std::size_t seen = 0; seen <= stage; ++seen) {
            report.ss.push_back(stereotype_score(result.model, std::span<const BiasPair>(bias_sets[seen])));
        }
        if (!retention.empty()) {
            report.rs = retention_score(*base, result.model, retention);
        }
        result.stages.push_back(std::move(report));
    }
    if (base->checksum() != checksum) {
        throw CheckError("base model parameters changed during editing");
    }
    return result;
}

GradCheckResult grad_check(const Model64& base, const FairnessStamp<double>& stamp,
                           std::span<const BiasPair> batch, std::span<const TokenSeq> prefixes,
                           const TemplatePrompt& templ, const LossWeights& weights, double step,
                           double floor) {
    weights.validate();
    const Prepared prep = prepare<double>(&base, base.config(), batch, prefixes, &templ);
    std::vector<FairnessStamp<double>> probe{stamp};
    auto loss_at = [&](const std::vector<FairnessStamp<double>>& stamps) {
        const ModelView<double> view{&base, stamps};
        return compute<double>(view, prep, weights, false, Wants{}, nullptr).total;
    };
    std::vector<FairnessStamp<double>> grads;
    const LossTerms terms =
        compute<double>(ModelView<double>{&base, probe}, prep, weights, false, Wants{}, &grads);
    if (!std::isfinite(terms.total) || !grads_finite(grads)) {
        throw CheckError("non-finite loss or gradient at the checked point");
    }
    GradCheckResult result;
    auto check = [&](Matrix<double>& param, const Matrix<double>& analytic) {
        for (Eigen::Index i = 0; i < param.size(); ++i) {
            const double saved = param.data()[i];
            param.data()[i] = saved + step;
            const double up = loss_at(probe);
            param.data()[i] = saved - step;
            const double down = loss_at(probe);
            param.data()[i] = saved;
            const double numeric = (up - down) / (2.0 * step);
            const double a = analytic.data()[i];
            if (!std::isfinite(numeric)) {
                throw CheckError("non-finite finite-difference estimate");
            }
            const double denom = std::max({std::abs(a), std::abs(numeric), floor});
            result.max_relative_error = std::max(result.max_relative_error, std::abs(a - numeric) / denom);
            ++result.parameters_checked;
        }
    };
    check(probe[0].key, grads[0].key);
    check(probe[0].value, grads[0].value);
    return result;
}

std::string telemetry_csv(std::span<const EditRecord> records) {
    std::ostringstream out;
    out << "batch,iter,L_e,L_s1,L_s2,total\n";
    for (const auto& r : records) {
        out << r.batch << "," << r.iteration << "," << nlohmann::json(r.l_e).dump() << ","
            << nlohmann::json(r.l_s1).dump() << "," << nlohmann::json(r.l_s2).dump() << ","
            << nlohmann::json(r.total).dump() << "\n";
    }
    return out.str();
}

#define FAIRSTAMP_INSTANTIATE(T)                                                                   \
    template double loss_efficacy<T>(const ModelView<T>&, std::span<const BiasPair>,               \
                                     std::span<const TokenSeq>, bool, std::size_t*);               \
    template double loss_retention_prompts<T>(const BasicModel<T>&, const ModelView<T>&,           \
                                              std::span<const BiasPair>, std::span<const TokenSeq>, \
                                              std::size_t*);                                       \
    template double loss_retention_subjects<T>(const BasicModel<T>&, const ModelView<T>&,          \
                                               std::span<const BiasPair>, const TemplatePrompt&);  \
    template LossTerms total_loss<T>(const BasicModel<T>&, const ModelView<T>&,                    \
                                     std::span<const BiasPair>, std::span<const TokenSeq>,         \
                                     const TemplatePrompt&, const LossWeights&, bool);             \
    template LossTerms loss_and_gradient<T>(const BasicModel<T>&, const ModelView<T>&,             \
                                            std::span<const BiasPair>, std::span<const TokenSeq>,  \
                                            const TemplatePrompt&, const LossWeights&, bool,       \
                                            std::vector<FairnessStamp<T>>*);                       \
    template std::vector<EditRecord> train_stamps<T>(StampedModel<T>&, std::span<const BiasPair>,  \
                                                     const LossWeights&, const EditHyper&,         \
                                                     const TemplatePrompt&, int);                  \
    template EditResult<T> edit<T>(std::shared_ptr<const BasicModel<T>>,                           \
                                   std::span<const BiasPair>, const LayerChoice&,                  \
                                   const LossWeights&, const EditHyper&, const TemplatePrompt&);   \
    template ContinualResult<T> continual_edit<T>(                                                 \
        std::shared_ptr<const BasicModel<T>>, const std::vector<std::vector<BiasPair>>&,           \
        const LayerChoice&, const LossWeights&, const EditHyper&, const TemplatePrompt&,           \
        std::span<const RetentionItem>);

FAIRSTAMP_INSTANTIATE(float)
FAIRSTAMP_INSTANTIATE(double)

#undef FAIRSTAMP_INSTANTIATE

}  // namespace fairstamp
