#include "fairstamp/tracing.hpp"

#include "fairstamp/errors.hpp"
#include "fairstamp/model.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>
#include <sstream>

namespace fairstamp {

const char* to_string(PositionMode mode) {
    return mode == PositionMode::subject_tokens ? "subject" : "all";
}

PositionMode position_mode_from_string(const std::string& s) {
    if (s == "subject" || s == "subject-tokens") return PositionMode::subject_tokens;
    if (s == "all" || s == "all-tokens") return PositionMode::all_tokens;
    throw ArgumentError("unknown positions mode \"" + s + "\" (expected subject or all)");
}

namespace {

// Pairs of (position in biased run, position in counterfactual run).
struct Alignment {
    std::vector<int> biased;
    std::vector<int> counterfactual;
    std::optional<std::string> warning;
};

Alignment tail_align(int start1, int len1, int start2, int len2, bool strict, const char* what) {
    Alignment a;
    if (len1 != len2) {
        if (strict) {
            throw AlignmentError(std::string(what) + " lengths differ (" + std::to_string(len1) +
                                 " vs " + std::to_string(len2) + ")");
        }
        a.warning = std::string(what) + " lengths differ (" + std::to_string(len1) + " vs " +
                    std::to_string(len2) + "); restoring the aligned tail only";
    }
    const int n = std::min(len1, len2);
    for (int k = 0; k < n; ++k) {
        a.biased.push_back(start1 + len1 - n + k);
        a.counterfactual.push_back(start2 + len2 - n + k);
    }
    return a;
}

template <typename T>
Patch<T> make_patch(const HiddenStates<T>& biased, int layer, const Alignment& align) {
    Patch<T> p;
    p.layer = layer;
    p.positions = align.counterfactual;
    for (const int pos : align.biased) {
        p.vectors.push_back(biased.at(layer).row(pos));
    }
    return p;
}

TokenSeq scored_sequence(const TokenSeq& prompt, const TokenSeq& object) {
    TokenSeq seq = prompt;
    seq.insert(seq.end(), object.begin(), object.end() - 1);
    return seq;
}

bool is_object_swap(const BiasPair& pair) {
    return pair.contrast == Contrast::object_swap &&
           pair.stereotyped.object != pair.counterfactual.object;
}

}  // namespace

int argmax_layer(const std::vector<double>& values) {
    if (values.empty()) {
        throw ArgumentError("argmax of an empty vector");
    }
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i) {
        if (values[i] > values[best]) {
            best = i;
        }
    }
    return static_cast<int>(best) + 1;
}

template <typename T>
TraceResult trace_pair(const ModelView<T>& view, const BiasPair& pair, const TraceOptions& options) {
    const auto& k1 = pair.stereotyped;
    const auto& k2 = pair.counterfactual;
    const TokenSeq prompt1 = k1.prompt();
    const TokenSeq prompt2 = k2.prompt();
    const TokenSeq& object = k1.object;

    TraceResult result;
    if (is_object_swap(pair)) {
        result.biased_prob = object_prob<T>(view, prompt1, k1.object);
        result.counterfactual_prob = object_prob<T>(view, prompt1, k2.object);
        result.total_effect = result.biased_prob - result.counterfactual_prob;
        return result;
    }

    const TokenSeq seq1 = scored_sequence(prompt1, object);
    const ForwardCache<T> biased = run_forward<T>(view, seq1);
    const HiddenStates<T> biased_states = biased.hidden_states();
    result.biased_prob = object_prob<T>(view, prompt1, object);
    result.counterfactual_prob = object_prob<T>(view, prompt2, object);
    result.total_effect = result.biased_prob - result.counterfactual_prob;

    Alignment align;
    if (options.positions == PositionMode::subject_tokens) {
        align = tail_align(0, static_cast<int>(k1.subject.size()), 0,
                           static_cast<int>(k2.subject.size()), options.strict_alignment,
                           "subject");
    } else {
        const TokenSeq seq2 = scored_sequence(prompt2, object);
        align = tail_align(0, static_cast<int>(seq1.size()), 0, static_cast<int>(seq2.size()),
                           options.strict_alignment, "prompt");
    }
    if (align.warning) {
        result.warnings.push_back(*align.warning);
    }
    result.restored_positions = align.counterfactual;

    const int layers = view.model->config().num_layers;
    std::vector<double> ie(static_cast<std::size_t>(layers), 0.0);
    for (int l = 1; l <= layers; ++l) {
        const Patch<T> patch = make_patch(biased_states, l, align);
        const double restored = object_prob<T>(view, prompt2, object, std::span(&patch, 1));
        ie[static_cast<std::size_t>(l - 1)] = restored - result.counterfactual_prob;
    }
    result.indirect_effects = std::move(ie);
    return result;
}

template <typename T>
LocationReport locate_decisive_layer(const ModelView<T>& view, const std::vector<BiasPair>& pairs,
                                     const TraceOptions& options) {
    if (pairs.empty()) {
        throw LocationError("no pairs to trace");
    }
    const int layers = view.model->config().num_layers;
    LocationReport report;
    report.mean_ie.assign(static_cast<std::size_t>(layers), 0.0);
    for (const auto& pair : pairs) {
        TraceResult r;
        try {
            r = trace_pair(view, pair, options);
        } catch (const AlignmentError& ex) {
            r.warnings.push_back(std::string("skipped: ") + ex.what());
        }
        if (r.indirect_effects) {
            for (int l = 0; l < layers; ++l) {
                report.mean_ie[static_cast<std::size_t>(l)] += (*r.indirect_effects)[static_cast<std::size_t>(l)];
            }
            ++report.pairs_used;
        }
        report.per_pair.push_back(std::move(r));
    }
    if (report.pairs_used == 0) {
        throw LocationError("none of the " + std::to_string(pairs.size()) +
                            " pairs could be traced layer-wise");
    }
    for (double& v : report.mean_ie) {
        v /= static_cast<double>(report.pairs_used);
    }
    report.decisive_layer = argmax_layer(report.mean_ie);
    return report;
}

template <typename T>
TokenTrace trace_tokens(const ModelView<T>& view, const BiasPair& pair) {
    const auto& k1 = pair.stereotyped;
    const auto& k2 = pair.counterfactual;
    if (is_object_swap(pair)) {
        throw AlignmentError("token tracing needs a subject-swap pair");
    }
    const TokenSeq prompt1 = k1.prompt();
    const TokenSeq prompt2 = k2.prompt();
    if (prompt1.size() != prompt2.size()) {
        throw AlignmentError("token tracing needs prompts of equal length");
    }
    const TokenSeq& object = k1.object;
    const ForwardCache<T> biased = run_forward<T>(view, scored_sequence(prompt1, object));
    const HiddenStates<T> states = biased.hidden_states();
    const double counterfactual = object_prob<T>(view, prompt2, object);

    const int layers = view.model->config().num_layers;
    const int len = static_cast<int>(prompt2.size());
    TokenTrace trace;
    trace.ie = Eigen::MatrixXd::Zero(layers, len);
    for (int l = 1; l <= layers; ++l) {
        for (int i = 0; i < len; ++i) {
            Patch<T> patch;
            patch.layer = l;
            patch.positions = {i};
            patch.vectors = {states.at(l).row(i)};
            trace.ie(l - 1, i) = object_prob<T>(view, prompt2, object, std::span(&patch, 1)) - counterfactual;
        }
    }
    return trace;
}

std::string location_report_json(const LocationReport& report, PositionMode mode) {
    nlohmann::json pairs = nlohmann::json::array();
    for (const auto& r : report.per_pair) {
        nlohmann::json j = {{"total_effect", r.total_effect},
                            {"biased_prob", r.biased_prob},
                            {"counterfactual_prob", r.counterfactual_prob},
                            {"restored_positions", r.restored_positions},
                            {"indirect_effects", nullptr},
                            {"warnings", r.warnings}};
        if (r.indirect_effects) {
            j["indirect_effects"] = *r.indirect_effects;
        }
        pairs.push_back(std::move(j));
    }
    const nlohmann::json out = {{"positions", to_string(mode)},
                                {"mean_ie", report.mean_ie},
                                {"decisive_layer", report.decisive_layer},
                                {"pairs_used", report.pairs_used},
                                {"per_pair", pairs}};
    return out.dump(2) + "\n";
}

namespace {

std::string format_real(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

std::string layer_trace_csv(const LocationReport& report) {
    std::ostringstream out;
    out << "layer,position,ie\n";
    for (std::size_t l = 0; l < report.mean_ie.size(); ++l) {
        out << (l + 1) << ",-1," << format_real(report.mean_ie[l]) << "\n";
    }
    return out.str();
}

std::string token_trace_csv(const TokenTrace& trace) {
    std::ostringstream out;
    out << "layer,position,ie\n";
    for (Eigen::Index l = 0; l < trace.ie.rows(); ++l) {
        for (Eigen::Index i = 0; i < trace.ie.cols(); ++i) {
            out << (l + 1) << "," << i << "," << format_real(trace.ie(l, i)) << "\n";
        }
    }
    return out.str();
}

#define FAIRSTAMP_INSTANTIATE(T)                                                               \
    template TraceResult trace_pair<T>(const ModelView<T>&, const BiasPair&, const TraceOptions&); \
    template LocationReport locate_decisive_layer<T>(const ModelView<T>&,                      \
                                                     const std::vector<BiasPair>&,             \
                                                     const TraceOptions&);                     \
    template TokenTrace trace_tokens<T>(const ModelView<T>&, const BiasPair&);

FAIRSTAMP_INSTANTIATE(float)
FAIRSTAMP_INSTANTIATE(double)

#undef FAIRSTAMP_INSTANTIATE

}  // namespace fairstamp
