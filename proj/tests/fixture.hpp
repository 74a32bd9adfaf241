#pragma once

// A 24-item bundle whose probabilities are listed by hand, shared by the
// metric unit tests and the acceptance suite.

#include "support.hpp"

#include "fairstamp/data.hpp"

#include <array>

namespace fstest {

constexpr int kFixtureSize = 24;

// Edited-model probabilities for the bias pairs: P[k1], P[k2], P[o_ir | p1], P[o_ir | p2].
constexpr std::array<double, kFixtureSize> kP1{
    0.61, 0.20, 0.55, 0.40, 0.33, 0.70, 0.12, 0.50, 0.45, 0.90, 0.08, 0.30,
    0.25, 0.66, 0.47, 0.51, 0.10, 0.35, 0.72, 0.28, 0.44, 0.05, 0.60, 0.39};
constexpr std::array<double, kFixtureSize> kP2{
    0.30, 0.25, 0.15, 0.40, 0.31, 0.10, 0.42, 0.49, 0.60, 0.05, 0.09, 0.30,
    0.26, 0.21, 0.48, 0.11, 0.20, 0.34, 0.18, 0.29, 0.14, 0.06, 0.35, 0.52};
constexpr std::array<double, kFixtureSize> kIr1{
    0.01, 0.30, 0.02, 0.40, 0.05, 0.01, 0.20, 0.03, 0.50, 0.01, 0.09, 0.10,
    0.01, 0.02, 0.60, 0.04, 0.02, 0.01, 0.03, 0.30, 0.02, 0.01, 0.70, 0.02};
constexpr std::array<double, kFixtureSize> kIr2{
    0.02, 0.01, 0.20, 0.05, 0.40, 0.02, 0.01, 0.60, 0.01, 0.03, 0.02, 0.30,
    0.01, 0.02, 0.03, 0.40, 0.01, 0.02, 0.01, 0.03, 0.20, 0.01, 0.02, 0.60};
// Paraphrased pairs.
constexpr std::array<double, kFixtureSize> kQ1{
    0.50, 0.10, 0.40, 0.22, 0.33, 0.61, 0.12, 0.18, 0.45, 0.70, 0.30, 0.25,
    0.25, 0.56, 0.11, 0.51, 0.10, 0.35, 0.62, 0.09, 0.44, 0.15, 0.50, 0.40};
constexpr std::array<double, kFixtureSize> kQ2{
    0.20, 0.20, 0.30, 0.22, 0.40, 0.11, 0.42, 0.19, 0.05, 0.10, 0.20, 0.35,
    0.15, 0.21, 0.48, 0.31, 0.20, 0.34, 0.38, 0.29, 0.14, 0.16, 0.35, 0.40};
// Retention candidates (three per item) under the base and the edited model.
// Item 17 is the only one whose argmax moves.
constexpr std::array<std::array<double, 3>, kFixtureSize> kBaseRet{{
    {0.7, 0.2, 0.1}, {0.1, 0.8, 0.1}, {0.2, 0.2, 0.6}, {0.5, 0.4, 0.1}, {0.3, 0.3, 0.3},
    {0.1, 0.6, 0.3}, {0.4, 0.1, 0.5}, {0.9, 0.05, 0.05}, {0.2, 0.7, 0.1}, {0.3, 0.3, 0.4},
    {0.6, 0.3, 0.1}, {0.1, 0.1, 0.8}, {0.5, 0.25, 0.25}, {0.2, 0.5, 0.3}, {0.35, 0.35, 0.3},
    {0.1, 0.2, 0.7}, {0.45, 0.45, 0.1}, {0.6, 0.2, 0.2}, {0.2, 0.6, 0.2}, {0.3, 0.2, 0.5},
    {0.8, 0.1, 0.1}, {0.25, 0.5, 0.25}, {0.1, 0.3, 0.6}, {0.4, 0.35, 0.25}}};
constexpr std::array<std::array<double, 3>, kFixtureSize> kEditedRet{{
    {0.6, 0.3, 0.1}, {0.2, 0.7, 0.1}, {0.3, 0.2, 0.5}, {0.45, 0.4, 0.15}, {0.3, 0.3, 0.3},
    {0.2, 0.5, 0.3}, {0.3, 0.2, 0.5}, {0.8, 0.1, 0.1}, {0.3, 0.6, 0.1}, {0.3, 0.2, 0.5},
    {0.5, 0.3, 0.2}, {0.2, 0.1, 0.7}, {0.4, 0.3, 0.3}, {0.3, 0.4, 0.3}, {0.4, 0.4, 0.2},
    {0.2, 0.2, 0.6}, {0.4, 0.4, 0.2}, {0.3, 0.5, 0.2}, {0.25, 0.5, 0.25}, {0.3, 0.3, 0.4},
    {0.7, 0.2, 0.1}, {0.3, 0.4, 0.3}, {0.2, 0.3, 0.5}, {0.38, 0.37, 0.25}}};

struct Fixture {
    DatasetBundle bundle;
    TableModel base;
    TableModel edited;
};

inline Fixture make_fixture() {
    Fixture f;
    for (int i = 0; i < kFixtureSize; ++i) {
        const auto u = static_cast<std::size_t>(i);
        const TokenSeq obj{1, 100 + i};
        const TokenSeq ir{1, 200 + i};
        BiasPair p;
        p.stereotyped = {{300 + i}, {2}, obj};
        p.counterfactual = {{400 + i}, {2}, obj};
        p.irrelevant_object = ir;
        f.bundle.bias_set.push_back(p);
        f.edited.set(p.stereotyped.prompt(), obj, kP1[u]);
        f.edited.set(p.counterfactual.prompt(), obj, kP2[u]);
        f.edited.set(p.stereotyped.prompt(), ir, kIr1[u]);
        f.edited.set(p.counterfactual.prompt(), ir, kIr2[u]);

        Paraphrase para;
        para.source = u;
        para.pair = p;
        para.pair.stereotyped.relation = para.pair.counterfactual.relation = {3};
        para.pair.irrelevant_object.reset();
        f.bundle.paraphrase_set.push_back(para);
        f.edited.set(para.pair.stereotyped.prompt(), obj, kQ1[u]);
        f.edited.set(para.pair.counterfactual.prompt(), obj, kQ2[u]);

        RetentionItem r;
        r.prompt = {500 + i, 4};
        r.note = "item " + std::to_string(i);
        for (int c = 0; c < 3; ++c) {
            r.candidates.push_back({600 + 3 * i + c});
            f.base.set(r.prompt, r.candidates.back(), kBaseRet[u][static_cast<std::size_t>(c)]);
            f.edited.set(r.prompt, r.candidates.back(), kEditedRet[u][static_cast<std::size_t>(c)]);
        }
        f.bundle.retention_set.push_back(r);
    }
    return f;
}

// Independent recounts straight from the tables above.
struct FixtureOracle {
    double ss = 0.0;
    double ps = 0.0;
    double rs = 0.0;
    double lms = 0.0;
    double icat = 0.0;
};

inline std::size_t first_max(const std::array<double, 3>& v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < 3; ++i) {
        if (v[i] > v[best]) best = i;
    }
    return best;
}

inline FixtureOracle fixture_oracle() {
    int ss = 0, ps = 0, rs = 0, lms = 0;
    for (std::size_t i = 0; i < kFixtureSize; ++i) {
        ss += kP1[i] > kP2[i] ? 1 : 0;
        ps += kQ1[i] > kQ2[i] ? 1 : 0;
        rs += first_max(kBaseRet[i]) == first_max(kEditedRet[i]) ? 1 : 0;
        lms += (kP1[i] > kIr1[i] ? 1 : 0) + (kP2[i] > kIr2[i] ? 1 : 0);
    }
    FixtureOracle o;
    o.ss = 100.0 * ss / kFixtureSize;
    o.ps = 100.0 * ps / kFixtureSize;
    o.rs = 100.0 * rs / kFixtureSize;
    o.lms = 100.0 * lms / (2.0 * kFixtureSize);
    o.icat = o.lms * (o.ss < 50.0 ? o.ss : 100.0 - o.ss) / 50.0;
    return o;
}

}  // namespace fstest
