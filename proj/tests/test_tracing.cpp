#include "doctest.h"
#include "support.hpp"

#include "fairstamp/errors.hpp"
#include "fairstamp/tracing.hpp"

#include <nlohmann/json.hpp>

using namespace fairstamp;
using fstest::tiny_config;

namespace {

BiasPair pair_of(TokenSeq s1, TokenSeq s2, TokenSeq rel, TokenSeq obj) {
    BiasPair p;
    p.stereotyped = {std::move(s1), rel, obj};
    p.counterfactual = {std::move(s2), rel, obj};
    return p;
}

// Restored probability computed directly from forward_with_patch.
double restored_prob(const BasicModel<double>& m, const BiasPair& pair, int layer,
                     const std::vector<int>& positions) {
    const auto& k1 = pair.stereotyped;
    TokenSeq seq1 = k1.prompt();
    seq1.insert(seq1.end(), k1.object.begin(), k1.object.end() - 1);
    const auto biased = m.forward(seq1);
    Patch<double> p{layer, positions, {}};
    for (int pos : positions) {
        p.vectors.push_back(biased.hidden.at(layer).row(pos));
    }
    return object_prob<double>(m.view(), pair.counterfactual.prompt(), k1.object,
                               std::vector<Patch<double>>{p});
}

}  // namespace

TEST_SUITE("tracing") {

TEST_CASE("identical runs trace to zero") {
    const auto m = fstest::tiny_model(tiny_config(3, 8, 2, 16, 12, 16, 2));
    BiasPair same = pair_of({1, 2}, {1, 2}, {3}, {4, 5});
    for (auto mode : {PositionMode::subject_tokens, PositionMode::all_tokens}) {
        const auto r = trace_pair(m->view(), same, {mode});
        CHECK(std::abs(r.total_effect) <= 1e-9);
        REQUIRE(r.indirect_effects);
        for (double ie : *r.indirect_effects) {
            CHECK(std::abs(ie) <= 1e-9);
        }
    }
    const auto tokens = trace_tokens(m->view(), same);
    CHECK(tokens.ie.cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("TE and IE relations against a direct oracle") {
    const auto m = fstest::tiny_model(tiny_config(3, 8, 2, 16, 12, 16, 6));
    const BiasPair p = pair_of({7, 2}, {9, 2}, {3}, {4, 5});
    const auto r = trace_pair(m->view(), p);
    CHECK(r.total_effect == doctest::Approx(r.biased_prob - r.counterfactual_prob).epsilon(1e-12));
    CHECK(r.biased_prob == doctest::Approx(m->object_prob({7, 2, 3}, {4, 5})).epsilon(1e-12));
    CHECK(r.counterfactual_prob == doctest::Approx(m->object_prob({9, 2, 3}, {4, 5})).epsilon(1e-12));
    CHECK(r.restored_positions == std::vector<int>{0, 1});
    REQUIRE(r.indirect_effects);
    for (int l = 1; l <= 3; ++l) {
        const double oracle = restored_prob(*m, p, l, {0, 1}) - r.counterfactual_prob;
        CHECK(std::abs((*r.indirect_effects)[static_cast<std::size_t>(l - 1)] - oracle) <= 1e-9);
    }
    CHECK(trace_pair(m->view(), p).indirect_effects == r.indirect_effects);
}

TEST_CASE("all-token restoration of the last layer recovers TE") {
    const auto m = fstest::tiny_model(tiny_config(3, 8, 2, 16, 12, 16, 8));
    const BiasPair p = pair_of({7, 2}, {9, 2}, {3}, {4, 5});
    const auto r = trace_pair(m->view(), p, {PositionMode::all_tokens});
    REQUIRE(r.indirect_effects);
    CHECK(std::abs(r.indirect_effects->back() - r.total_effect) <= 1e-5);
    CHECK(r.restored_positions.size() == 4);
    // With equal lengths every layer restores the whole stream.
    for (double ie : *r.indirect_effects) {
        CHECK(std::abs(ie - r.total_effect) <= 1e-5);
    }
}

TEST_CASE("unequal subjects") {
    const auto m = fstest::tiny_model(tiny_config(2, 8, 2, 16, 12, 16, 4));
    const BiasPair p = pair_of({7, 8, 2}, {9, 2}, {3}, {4});
    const auto r = trace_pair(m->view(), p);
    CHECK(r.warnings.size() == 1);
    CHECK(r.restored_positions == std::vector<int>{0, 1});
}

TEST_CASE("strict alignment") {
    const auto m = fstest::tiny_model(tiny_config(2, 8, 2, 16, 12, 16, 4));
    const BiasPair p = pair_of({7, 8, 2}, {9, 2}, {3}, {4});
    CHECK_THROWS_AS(trace_pair(m->view(), p, {PositionMode::subject_tokens, true}), AlignmentError);
    CHECK_THROWS_AS(locate_decisive_layer(m->view(), std::vector<BiasPair>{p},
                                          {PositionMode::subject_tokens, true}),
                    LocationError);
    CHECK_THROWS_AS(trace_tokens(m->view(), p), AlignmentError);
}

TEST_CASE("object-swap pairs have no layer effects") {
    const auto m = fstest::tiny_model(tiny_config(2, 8, 2, 16, 12, 16, 4));
    BiasPair p;
    p.stereotyped = {{1, 2}, {3}, {4}};
    p.counterfactual = {{1, 2}, {3}, {5}};
    p.contrast = Contrast::object_swap;
    const auto r = trace_pair(m->view(), p);
    CHECK_FALSE(r.indirect_effects.has_value());
    CHECK(r.total_effect == doctest::Approx(m->object_prob({1, 2, 3}, {4}) - m->object_prob({1, 2, 3}, {5})));
    CHECK_THROWS_AS(locate_decisive_layer(m->view(), std::vector<BiasPair>{p}), LocationError);
    CHECK_THROWS_AS(locate_decisive_layer(m->view(), std::vector<BiasPair>{}), LocationError);
}

TEST_CASE("locate_decisive_layer") {
    const auto m = fstest::tiny_model(tiny_config(3, 8, 2, 16, 12, 16, 10));
    const std::vector<BiasPair> pairs{pair_of({7, 2}, {9, 2}, {3}, {4}),
                                      pair_of({10, 2}, {11, 2}, {3}, {5, 6}),
                                      pair_of({12, 2}, {13, 2}, {6}, {4})};
    const auto report = locate_decisive_layer(m->view(), pairs);
    CHECK(report.pairs_used == 3);
    for (int l = 0; l < 3; ++l) {
        double sum = 0.0;
        for (const auto& r : report.per_pair) {
            sum += (*r.indirect_effects)[static_cast<std::size_t>(l)];
        }
        CHECK(report.mean_ie[static_cast<std::size_t>(l)] == doctest::Approx(sum / 3.0).epsilon(1e-12));
    }
    CHECK(report.decisive_layer == argmax_layer(report.mean_ie));

    SUBCASE("single pair equals its own argmax") {
        const auto one = locate_decisive_layer(m->view(), std::vector<BiasPair>{pairs[1]});
        CHECK(one.decisive_layer == argmax_layer(*trace_pair(m->view(), pairs[1]).indirect_effects));
    }
    SUBCASE("duplicating pairs changes nothing") {
        std::vector<BiasPair> twice = pairs;
        twice.insert(twice.end(), pairs.begin(), pairs.end());
        const auto r2 = locate_decisive_layer(m->view(), twice);
        CHECK(r2.decisive_layer == report.decisive_layer);
        for (std::size_t l = 0; l < 3; ++l) {
            CHECK(r2.mean_ie[l] == doctest::Approx(report.mean_ie[l]).epsilon(1e-12));
        }
    }
    SUBCASE("null pairs cannot move a positive argmax") {
        const auto best = *std::max_element(report.mean_ie.begin(), report.mean_ie.end());
        if (best > 0.0) {
            std::vector<BiasPair> mixed = pairs;
            mixed.push_back(pair_of({1, 2}, {1, 2}, {3}, {4}));
            mixed.push_back(pair_of({8, 2}, {8, 2}, {3}, {5}));
            CHECK(locate_decisive_layer(m->view(), mixed).decisive_layer == report.decisive_layer);
        }
    }
    SUBCASE("exports") {
        const auto j = nlohmann::json::parse(location_report_json(report, PositionMode::subject_tokens));
        CHECK(j["positions"] == "subject");
        CHECK(j["decisive_layer"] == report.decisive_layer);
        CHECK(j["per_pair"].size() == 3);
        const auto csv = layer_trace_csv(report);
        CHECK(csv.rfind("layer,position,ie\n", 0) == 0);
        CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
    }
}

TEST_CASE("argmax ties go to the lowest layer") {
    CHECK(argmax_layer({0.1, 0.3, 0.3}) == 2);
    CHECK(argmax_layer({0.0, 0.0}) == 1);
    CHECK(argmax_layer({-1.0, -0.5}) == 2);
    CHECK_THROWS_AS(argmax_layer({}), ArgumentError);
}

TEST_CASE("position mode strings") {
    CHECK(position_mode_from_string("subject") == PositionMode::subject_tokens);
    CHECK(position_mode_from_string("all") == PositionMode::all_tokens);
    CHECK(std::string(to_string(PositionMode::all_tokens)) == "all");
    CHECK_THROWS_AS(position_mode_from_string("some"), ArgumentError);
}

TEST_CASE("token traces") {
    const auto m = fstest::tiny_model(tiny_config(3, 8, 2, 16, 12, 16, 12));
    // Position 0 is shared and precedes the difference, so its states agree
    // in both runs at every layer.
    const BiasPair p = pair_of({5, 7, 2}, {5, 9, 2}, {3}, {4});
    const auto t = trace_tokens(m->view(), p);
    REQUIRE(t.ie.rows() == 3);
    REQUIRE(t.ie.cols() == 4);
    const auto a = m->forward({5, 7, 2, 3});
    const auto b = m->forward({5, 9, 2, 3});
    for (int l = 1; l <= 3; ++l) {
        CHECK(a.hidden.at(l).row(0) == b.hidden.at(l).row(0));
        CHECK(t.ie(l - 1, 0) == 0.0);
    }
    CHECK(t.ie.cwiseAbs().maxCoeff() <= 1.0);
    // Single-position entries agree with a direct patch.
    for (int l = 1; l <= 3; ++l) {
        for (int i = 0; i < 4; ++i) {
            const double oracle = restored_prob(*m, p, l, {i}) - m->object_prob({5, 9, 2, 3}, {4});
            CHECK(std::abs(t.ie(l - 1, i) - oracle) <= 1e-12);
        }
    }
    const auto csv = token_trace_csv(t);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 13);
}

TEST_CASE("memorizing model: located layer matches patch enumeration") {
    const auto m = fstest::memorizing_model();
    const auto w = fstest::memo_world();
    for (const auto& p : w.pairs) {
        CHECK(m->object_prob(p.stereotyped.prompt(), p.stereotyped.object) > 0.5);
    }
    const auto report = locate_decisive_layer(m->view(), w.pairs);
    // Oracle: every (layer, subject position) singleton patched on its own,
    // summed per layer and averaged over pairs.
    std::vector<double> score(2, 0.0);
    for (const auto& p : w.pairs) {
        const double base = m->object_prob(p.counterfactual.prompt(), p.stereotyped.object);
        for (int l = 1; l <= 2; ++l) {
            for (int i = 0; i < static_cast<int>(p.stereotyped.subject.size()); ++i) {
                score[static_cast<std::size_t>(l - 1)] += restored_prob(*m, p, l, {i}) - base;
            }
        }
    }
    CHECK(report.decisive_layer == argmax_layer(score));
}

}  // TEST_SUITE
