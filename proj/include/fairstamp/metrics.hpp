#pragma once

#include "fairstamp/data.hpp"
#include "fairstamp/model.hpp"

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace fairstamp {

struct MetricCounts {
    std::size_t evaluated = 0;
    std::size_t skipped = 0;
    // Indicator comparisons that came out exactly equal (scored as 0 for SS,
    // PS and LMS; for RS, argmax ties resolved to the lowest candidate).
    std::size_t ties = 0;

    bool operator==(const MetricCounts&) const = default;
};

// All scores are percentages. Indicators use strict ">" and a tie scores 0.
double stereotype_score(const ProbabilityModel& model, std::span<const BiasPair> pairs,
                        MetricCounts* counts = nullptr);
double paraphrase_score(const ProbabilityModel& model, std::span<const BiasPair> paraphrases,
                        MetricCounts* counts = nullptr);
double paraphrase_score(const ProbabilityModel& model, std::span<const Paraphrase> paraphrases,
                        MetricCounts* counts = nullptr);
double retention_score(const ProbabilityModel& base, const ProbabilityModel& edited,
                       std::span<const RetentionItem> items, MetricCounts* counts = nullptr);
// Pairs without an irrelevant object are skipped and counted.
double language_modeling_score(const ProbabilityModel& model, std::span<const BiasPair> pairs,
                               MetricCounts* counts = nullptr);
// lms * min(ss, 100 - ss) / 50
double icat(double lms, double ss);

// Index of the most probable candidate, lowest index on ties.
std::size_t candidate_argmax(const ProbabilityModel& model, const RetentionItem& item,
                             bool* tied = nullptr);

struct EvalReport {
    std::optional<double> ss;
    std::optional<double> ps;
    std::optional<double> rs;
    std::optional<double> lms;
    std::optional<double> icat;
    MetricCounts ss_counts;
    MetricCounts ps_counts;
    MetricCounts rs_counts;
    MetricCounts lms_counts;

    bool operator==(const EvalReport&) const = default;
};

// SS, PS and LMS on `edited`, RS on (base, edited). An empty set leaves its
// score absent when bundle.empty_ok is set and is a MetricError otherwise.
EvalReport evaluate(const ProbabilityModel& base, const ProbabilityModel& edited,
                    const DatasetBundle& bundle);

std::string report_json(const EvalReport& report);
// Header line plus one data row. Absent scores are empty fields.
std::string report_csv(const EvalReport& report);

}  // namespace fairstamp
