#pragma once

#include "fairstamp/core.hpp"
#include "fairstamp/data.hpp"

#include <optional>
#include <string>
#include <vector>

namespace fairstamp {

enum class PositionMode { subject_tokens, all_tokens };

const char* to_string(PositionMode mode);
PositionMode position_mode_from_string(const std::string& s);

struct TraceOptions {
    PositionMode positions = PositionMode::subject_tokens;
    // When false, subjects of unequal length are aligned at their last token
    // and only the overlapping tail is restored (with a warning). When true
    // the mismatch is an AlignmentError.
    bool strict_alignment = false;
};

struct TraceResult {
    double total_effect = 0.0;  // biased_prob - counterfactual_prob
    // IE per layer (index l - 1). Absent for object-swap pairs, where both
    // runs share one prompt and restoring states has no meaning.
    std::optional<std::vector<double>> indirect_effects;
    double biased_prob = 0.0;
    double counterfactual_prob = 0.0;
    // Positions patched in the counterfactual run.
    std::vector<int> restored_positions;
    std::vector<std::string> warnings;
};

// ie(l - 1, i): effect of restoring only prompt position i at layer l.
struct TokenTrace {
    Eigen::MatrixXd ie;
};

struct LocationReport {
    std::vector<double> mean_ie;
    int decisive_layer = 1;
    std::vector<TraceResult> per_pair;  // same order as the input pairs
    std::size_t pairs_used = 0;
};

// Biased run on prompt(k1), counterfactual run on prompt(k2), then one
// restoration run per layer. The traced object is k1's object.
template <typename T>
TraceResult trace_pair(const ModelView<T>& view, const BiasPair& pair,
                       const TraceOptions& options = {});

// Argmax of the mean IE over pairs that produce IE vectors; ties go to the
// lowest layer. Throws LocationError when no pair can be traced.
template <typename T>
LocationReport locate_decisive_layer(const ModelView<T>& view, const std::vector<BiasPair>& pairs,
                                     const TraceOptions& options = {});

// Requires prompts of equal length (aligned subject swap).
template <typename T>
TokenTrace trace_tokens(const ModelView<T>& view, const BiasPair& pair);

// Lowest index attaining the maximum.
int argmax_layer(const std::vector<double>& values);

std::string location_report_json(const LocationReport& report, PositionMode mode);
// `layer,position,ie` rows; position -1 stands for the whole restored set.
std::string layer_trace_csv(const LocationReport& report);
std::string token_trace_csv(const TokenTrace& trace);

}  // namespace fairstamp
