#include "fairstamp/metrics.hpp"

#include "fairstamp/errors.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <sstream>

namespace fairstamp {

namespace {

double percent(std::size_t hits, std::size_t total) {
    return 100.0 * static_cast<double>(hits) / static_cast<double>(total);
}

double preference_score(const ProbabilityModel& model, std::span<const BiasPair> pairs,
                        MetricCounts* counts, const char* what) {
    if (pairs.empty()) {
        throw MetricError(std::string(what) + ": no pairs to score");
    }
    MetricCounts c;
    std::size_t hits = 0;
    for (const auto& pair : pairs) {
        const double p1 = model.object_prob(pair.stereotyped.prompt(), pair.stereotyped.object);
        const double p2 = model.object_prob(pair.counterfactual.prompt(), pair.counterfactual.object);
        if (p1 > p2) {
            ++hits;
        } else if (p1 == p2) {
            ++c.ties;
        }
        ++c.evaluated;
    }
    if (counts) {
        *counts = c;
    }
    return percent(hits, pairs.size());
}

}  // namespace

double stereotype_score(const ProbabilityModel& model, std::span<const BiasPair> pairs,
                        MetricCounts* counts) {
    return preference_score(model, pairs, counts, "stereotype score");
}

double paraphrase_score(const ProbabilityModel& model, std::span<const BiasPair> paraphrases,
                        MetricCounts* counts) {
    return preference_score(model, paraphrases, counts, "paraphrase score");
}

double paraphrase_score(const ProbabilityModel& model, std::span<const Paraphrase> paraphrases,
                        MetricCounts* counts) {
    std::vector<BiasPair> pairs;
    pairs.reserve(paraphrases.size());
    for (const auto& p : paraphrases) {
        pairs.push_back(p.pair);
    }
    return paraphrase_score(model, std::span<const BiasPair>(pairs), counts);
}

std::size_t candidate_argmax(const ProbabilityModel& model, const RetentionItem& item, bool* tied) {
    if (item.candidates.size() < 2) {
        throw MetricError("retention item needs at least two candidates");
    }
    std::size_t best = 0;
    double best_p = model.object_prob(item.prompt, item.candidates[0]);
    bool tie = false;
    for (std::size_t i = 1; i < item.candidates.size(); ++i) {
        const double p = model.object_prob(item.prompt, item.candidates[i]);
        if (p > best_p) {
            best = i;
            best_p = p;
            tie = false;
        } else if (p == best_p) {
            tie = true;
        }
    }
    if (tied) {
        *tied = tie;
    }
    return best;
}

double retention_score(const ProbabilityModel& base, const ProbabilityModel& edited,
                       std::span<const RetentionItem> items, MetricCounts* counts) {
    if (items.empty()) {
        throw MetricError("retention score: no items to score");
    }
    MetricCounts c;
    std::size_t agree = 0;
    for (const auto& item : items) {
        bool tie_base = false;
        bool tie_edited = false;
        const std::size_t a = candidate_argmax(base, item, &tie_base);
        const std::size_t b = candidate_argmax(edited, item, &tie_edited);
        if (a == b) {
            ++agree;
        }
        if (tie_base || tie_edited) {
            ++c.ties;
        }
        ++c.evaluated;
    }
    if (counts) {
        *counts = c;
    }
    return percent(agree, items.size());
}

double language_modeling_score(const ProbabilityModel& model, std::span<const BiasPair> pairs,
                               MetricCounts* counts) {
    MetricCounts c;
    std::size_t hits = 0;
    for (const auto& pair : pairs) {
        if (!pair.irrelevant_object) {
            ++c.skipped;
            continue;
        }
        const double p1 = model.object_prob(pair.stereotyped.prompt(), pair.stereotyped.object);
        const double p2 = model.object_prob(pair.counterfactual.prompt(), pair.counterfactual.object);
        // o_ir is scored against each prompt of the pair.
        const double q1 = model.object_prob(pair.stereotyped.prompt(), *pair.irrelevant_object);
        const double q2 = model.object_prob(pair.counterfactual.prompt(), *pair.irrelevant_object);
        hits += (p1 > q1) + (p2 > q2);
        c.ties += (p1 == q1) + (p2 == q2);
        ++c.evaluated;
    }
    if (counts) {
        *counts = c;
    }
    if (c.evaluated == 0) {
        throw MetricError("language modeling score: no pairs with an irrelevant object");
    }
    return percent(hits, 2 * c.evaluated);
}

double icat(double lms, double ss) {
    if (!std::isfinite(lms) || !std::isfinite(ss) || lms < 0.0 || lms > 100.0 || ss < 0.0 ||
        ss > 100.0) {
        throw ArgumentError("icat inputs must lie in [0, 100]");
    }
    return lms * std::min(ss, 100.0 - ss) / 50.0;
}

EvalReport evaluate(const ProbabilityModel& base, const ProbabilityModel& edited,
                    const DatasetBundle& bundle) {
    EvalReport report;
    auto guarded = [&](const char* set, bool empty, auto&& fn) -> std::optional<double> {
        if (empty) {
            if (bundle.empty_ok) {
                return std::nullopt;
            }
            throw MetricError(std::string(set) + " is empty");
        }
        try {
            return fn();
        } catch (const MetricError& ex) {
            throw MetricError(std::string(set) + ": " + ex.what());
        }
    };
    const bool no_pairs = bundle.bias_set.empty();
    report.ss = guarded("bias_set", no_pairs, [&] {
        return stereotype_score(edited, bundle.bias_set, &report.ss_counts);
    });
    report.ps = guarded("paraphrase_set", bundle.paraphrase_set.empty(), [&] {
        return paraphrase_score(edited, std::span<const Paraphrase>(bundle.paraphrase_set),
                                &report.ps_counts);
    });
    report.rs = guarded("retention_set", bundle.retention_set.empty(), [&] {
        return retention_score(base, edited, bundle.retention_set, &report.rs_counts);
    });
    report.lms = guarded("bias_set", no_pairs, [&] {
        return language_modeling_score(edited, bundle.bias_set, &report.lms_counts);
    });
    if (report.ss && report.lms) {
        report.icat = icat(*report.lms, *report.ss);
    }
    return report;
}

namespace {

nlohmann::json optional_json(const std::optional<double>& v) {
    return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

nlohmann::json counts_json(const MetricCounts& c) {
    return {{"evaluated", c.evaluated}, {"skipped", c.skipped}, {"ties", c.ties}};
}

}  // namespace

std::string report_json(const EvalReport& r) {
    const nlohmann::json j = {{"ss", optional_json(r.ss)},
                              {"ps", optional_json(r.ps)},
                              {"rs", optional_json(r.rs)},
                              {"lms", optional_json(r.lms)},
                              {"icat", optional_json(r.icat)},
                              {"counts",
                               {{"ss", counts_json(r.ss_counts)},
                                {"ps", counts_json(r.ps_counts)},
                                {"rs", counts_json(r.rs_counts)},
                                {"lms", counts_json(r.lms_counts)}}}};
    return j.dump(2) + "\n";
}

std::string report_csv(const EvalReport& r) {
    std::ostringstream head;
    std::ostringstream row;
    head << "ss,ps,rs,lms,icat";
    auto field = [&](const std::optional<double>& v, bool first) {
        if (!first) {
            row << ",";
        }
        if (v) {
            row << nlohmann::json(*v).dump();
        }
    };
    field(r.ss, true);
    field(r.ps, false);
    field(r.rs, false);
    field(r.lms, false);
    field(r.icat, false);
    const std::pair<const char*, const MetricCounts*> sets[] = {
        {"ss", &r.ss_counts}, {"ps", &r.ps_counts}, {"rs", &r.rs_counts}, {"lms", &r.lms_counts}};
    for (const auto& [name, c] : sets) {
        head << "," << name << "_evaluated," << name << "_skipped," << name << "_ties";
        row << "," << c->evaluated << "," << c->skipped << "," << c->ties;
    }
    return head.str() + "\n" + row.str() + "\n";
}

}  // namespace fairstamp
