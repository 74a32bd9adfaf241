// Acceptance checks. Prints one PASS/FAIL line per criterion.
//
//   fairstamp_acceptance [--only N]... [--report-only]
//
// The exit status is non-zero when any selected criterion fails, unless
// --report-only is given.

#include "fixture.hpp"
#include "support.hpp"

#include "fairstamp/edit.hpp"
#include "fairstamp/metrics.hpp"
#include "fairstamp/pipeline.hpp"
#include "fairstamp/tracing.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <set>
#include <sstream>

using namespace fairstamp;
namespace fs = std::filesystem;

namespace {

// Tolerances and limits.
constexpr double kMetricTol = 1e-9;
constexpr double kIdentityTol = 1e-6;
constexpr double kGradTol = 1e-4;
constexpr double kZeroTol = 1e-9;
constexpr double kAllTokensTol = 1e-5;
constexpr double kMinPreSS = 65.0;
constexpr double kMinClosure = 0.5;
constexpr double kMinRS = 90.0;
constexpr double kMaxLmsDrop = 5.0;
constexpr double kMaxContinualDrift = 5.0;
constexpr int kProbeInputs = 64;

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(double v, int digits = 2) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::string sci(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2e", v);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t).count();
}

// ---------------------------------------------------------------------------
// Shared synthetic-world setup for the trend criteria.

struct Trained {
    SyntheticWorld world;
    std::shared_ptr<const Model> base;
    double seconds = 0.0;
};

ModelConfig world_model_config() {
    ModelConfig c;
    c.seed = 1;
    return c;
}

TrainHyper world_train_hyper() {
    TrainHyper h;
    h.seed = 2;
    return h;
}

const Trained& trained_world() {
    static const Trained t = [] {
        const auto start = std::chrono::steady_clock::now();
        Trained out;
        out.world = gen_synthetic_world(WorldSpec{});
        out.base = std::make_shared<const Model>(
            train_base(init_model<float>(world_model_config()), out.world.corpus, world_train_hyper()));
        out.seconds = seconds_since(start);
        return out;
    }();
    return t;
}

struct EditRun {
    EvalReport pre;
    EvalReport post;
    int layer = 0;
    double seconds = 0.0;
};

EditRun edit_world(double alpha) {
    const Trained& t = trained_world();
    const auto start = std::chrono::steady_clock::now();
    LossWeights w;
    w.alpha = alpha;
    const auto r = edit<float>(t.base, t.world.bundle.bias_set, LayerChoice::automatic(), w, EditHyper{},
                               TemplatePrompt{t.world.template_relation});
    EditRun run;
    run.pre = evaluate(*t.base, *t.base, t.world.bundle);
    run.post = evaluate(*t.base, r.model, t.world.bundle);
    run.layer = r.model.stamps()[0].layer;
    run.seconds = seconds_since(start);
    return run;
}

const EditRun& edit_alpha40() {
    static const EditRun run = edit_world(40.0);
    return run;
}

// ---------------------------------------------------------------------------
// Criteria

Outcome metric_oracle() {
    const auto f = fstest::make_fixture();
    const auto o = fstest::fixture_oracle();
    const auto r = evaluate(f.base, f.edited, f.bundle);
    const double errs[] = {std::abs(*r.ss - o.ss), std::abs(*r.ps - o.ps), std::abs(*r.rs - o.rs),
                           std::abs(*r.lms - o.lms), std::abs(*r.icat - o.icat)};
    const double worst = *std::max_element(std::begin(errs), std::end(errs));
    const bool rs_case = std::abs(*r.rs - 100.0 * 23.0 / 24.0) <= kMetricTol && fmt(*r.rs) == "95.83";
    return {worst <= kMetricTol && rs_case,
            "max |metric - oracle| " + sci(worst) + ", RS " + fmt(*r.rs)};
}

Outcome stamp_identity() {
    const Trained& t = trained_world();
    const auto stamped = attach<float>(t.base, new_stamp<float>(2, t.base->config().model_dim, 64, 3));
    std::mt19937_64 gen(11);
    std::uniform_int_distribution<int> tok(0, t.base->config().vocab_size - 1);
    std::uniform_int_distribution<int> len(1, t.base->config().max_seq_len);
    double worst = 0.0;
    for (int i = 0; i < kProbeInputs; ++i) {
        TokenSeq probe(static_cast<std::size_t>(len(gen)));
        for (auto& x : probe) x = tok(gen);
        worst = std::max(worst, fstest::max_abs_diff(stamped.forward(probe).logits, t.base->forward(probe).logits));
    }
    const auto& bias = t.world.bundle.bias_set;
    const auto a = evaluate(*t.base, *t.base, t.world.bundle);
    const auto b = evaluate(*t.base, stamped, t.world.bundle);
    const bool same = a.ss == b.ss && a.icat == b.icat && stereotype_score(stamped, bias) == stereotype_score(*t.base, bias);
    return {worst <= kIdentityTol && same,
            "max logit diff " + sci(worst) + " over " + std::to_string(kProbeInputs) + " probes, SS/ICAT " +
                (same ? "identical" : "differ")};
}

Outcome gradient() {
    const auto base = fstest::tiny_model(fstest::tiny_config(2, 8, 2, 16, 12, 16, 34));
    auto pair = [](TokenSeq s1, TokenSeq s2, TokenSeq rel, TokenSeq obj) {
        BiasPair p;
        p.stereotyped = {std::move(s1), rel, obj};
        p.counterfactual = {std::move(s2), rel, obj};
        return p;
    };
    const std::vector<BiasPair> batch{pair({1, 2}, {3, 2}, {4}, {5, 6}), pair({7}, {8}, {4}, {9}),
                                      pair({3, 2}, {1, 2}, {10}, {11, 6})};
    const std::vector<TokenSeq> prefixes{{12, 13}, {14, 1, 15}};
    const auto stamp = fstest::busy_stamp<double>(1, 8, 4, 41);
    const auto r = grad_check(*base, stamp, batch, prefixes, TemplatePrompt{{4}}, LossWeights{40.0, 0.1});
    return {r.max_relative_error <= kGradTol,
            "max relative error " + sci(r.max_relative_error) + " over " + std::to_string(r.parameters_checked) +
                " parameters"};
}

Outcome tracing_anchors() {
    const auto m = fstest::tiny_model(fstest::tiny_config(3, 8, 2, 16, 12, 16, 8));
    BiasPair same;
    same.stereotyped = same.counterfactual = {{1, 2}, {3}, {4, 5}};
    const auto z = trace_pair(m->view(), same);
    double zmax = std::abs(z.total_effect);
    for (double ie : *z.indirect_effects) zmax = std::max(zmax, std::abs(ie));

    BiasPair p;
    p.stereotyped = {{7, 2}, {3}, {4, 5}};
    p.counterfactual = {{9, 2}, {3}, {4, 5}};
    const auto all = trace_pair(m->view(), p, {PositionMode::all_tokens});
    const double gap = std::abs(all.indirect_effects->back() - all.total_effect);

    const auto memo = fstest::memorizing_model();
    const auto w = fstest::memo_world();
    const auto report = locate_decisive_layer(memo->view(), w.pairs);
    std::vector<double> score(2, 0.0);
    for (const auto& q : w.pairs) {
        TokenSeq seq1 = q.stereotyped.prompt();
        const auto biased = memo->forward(seq1);
        const double base = memo->object_prob(q.counterfactual.prompt(), q.stereotyped.object);
        for (int l = 1; l <= 2; ++l) {
            for (int i = 0; i < static_cast<int>(q.stereotyped.subject.size()); ++i) {
                Patch<double> patch{l, {i}, {biased.hidden.at(l).row(i)}};
                score[static_cast<std::size_t>(l - 1)] +=
                    object_prob<double>(memo->view(), q.counterfactual.prompt(), q.stereotyped.object,
                                        std::vector<Patch<double>>{patch}) - base;
            }
        }
    }
    const int oracle = argmax_layer(score);
    return {zmax <= kZeroTol && gap <= kAllTokensTol && report.decisive_layer == oracle,
            "identical-pair max |effect| " + sci(zmax) + ", |IE_L - TE| " + sci(gap) + ", located " +
                std::to_string(report.decisive_layer) + " vs oracle " + std::to_string(oracle)};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome frozen_base() {
    const Trained& t = trained_world();
    fstest::TempDir dir("frozen");
    save_checkpoint(*t.base, dir / "before");
    const auto checksum = t.base->checksum();
    EditHyper h;
    const auto r = edit<float>(t.base, t.world.bundle.bias_set, LayerChoice::automatic(), LossWeights{}, h,
                               TemplatePrompt{t.world.template_relation});
    save_checkpoint(*t.base, dir / "after");
    const bool files_same = slurp(dir / "before" / "weights.bin") == slurp(dir / "after" / "weights.bin") &&
                            slurp(dir / "before" / "manifest.json") == slurp(dir / "after" / "manifest.json");
    const std::size_t d = static_cast<std::size_t>(t.base->config().model_dim);
    const std::size_t expected = 2 * static_cast<std::size_t>(h.stamp_hidden_dim) * d;
    const bool ok = t.base->checksum() == checksum && files_same && r.model.stamp_parameter_count() == expected;
    return {ok, "checksum " + std::string(t.base->checksum() == checksum && files_same ? "unchanged" : "CHANGED") +
                    ", stamp parameters " + std::to_string(r.model.stamp_parameter_count()) + " (expected " +
                    std::to_string(expected) + ")"};
}

Outcome end_to_end() {
    const EditRun& r = edit_alpha40();
    const double pre_ss = *r.pre.ss, post_ss = *r.post.ss;
    const double closure = pre_ss == 50.0 ? 1.0 : 1.0 - std::abs(post_ss - 50.0) / std::abs(pre_ss - 50.0);
    const double lms_drop = std::abs(*r.post.lms - *r.pre.lms);
    const bool ok = pre_ss >= kMinPreSS && closure >= kMinClosure && *r.post.rs >= kMinRS && lms_drop <= kMaxLmsDrop;
    return {ok, "layer " + std::to_string(r.layer) + ", SS " + fmt(pre_ss) + " -> " + fmt(post_ss) + " (closure " +
                    fmt(100.0 * closure, 1) + "%), RS " + fmt(*r.post.rs) + ", LMS " + fmt(*r.pre.lms) + " -> " +
                    fmt(*r.post.lms) + ", ICAT " + fmt(*r.pre.icat) + " -> " + fmt(*r.post.icat)};
}

Outcome loss_ablation() {
    const EditRun& with = edit_alpha40();
    const EditRun without = edit_world(0.0);
    return {*without.post.rs < *with.post.rs,
            "RS alpha=0 " + fmt(*without.post.rs) + " vs alpha=40 " + fmt(*with.post.rs) + " (LMS " +
                fmt(*without.post.lms) + " vs " + fmt(*with.post.lms) + ")"};
}

Outcome continual() {
    const Trained& t = trained_world();
    const auto& bias = t.world.bundle.bias_set;
    const std::size_t half = bias.size() / 2;
    const std::vector<std::vector<BiasPair>> sets{{bias.begin(), bias.begin() + static_cast<std::ptrdiff_t>(half)},
                                                  {bias.begin() + static_cast<std::ptrdiff_t>(half), bias.end()}};
    const auto r = continual_edit<float>(t.base, sets, LayerChoice::automatic(), LossWeights{}, EditHyper{},
                                         TemplatePrompt{t.world.template_relation}, t.world.bundle.retention_set);
    const double after_a = r.stages[0].ss[0];
    const double after_b = r.stages[1].ss[0];
    const double pre_a = stereotype_score(*t.base, std::span<const BiasPair>(sets[0]));
    return {std::abs(after_b - after_a) <= kMaxContinualDrift,
            "SS(A) " + fmt(pre_a) + " -> " + fmt(after_a) + " after A -> " + fmt(after_b) + " after B; SS(B) " +
                fmt(r.stages[1].ss[1]) + ", RS " + fmt(*r.stages[1].rs)};
}

Outcome determinism() {
    fstest::TempDir dir("determinism");
    PipelineConfig c;
    c.world.corpus_size = 3000;
    c.train.steps = 120;
    c.train.seed = 2;
    c.edit.iterations_per_batch = 4;
    c.edit.prefix_count = 3;
    std::vector<fs::path> runs{dir / "a", dir / "b"};
    for (const auto& out : runs) {
        c.out = out;
        cmd_all(c);
    }
    std::vector<std::string> compared;
    std::vector<std::string> differing;
    for (const auto& entry : fs::recursive_directory_iterator(runs[0])) {
        if (!entry.is_regular_file() || entry.path().filename() == "manifest.json") continue;
        const auto rel = fs::relative(entry.path(), runs[0]);
        compared.push_back(rel.generic_string());
        if (slurp(entry.path()) != slurp(runs[1] / rel)) differing.push_back(rel.generic_string());
    }
    const auto has = [&](const std::string& prefix) {
        return std::any_of(compared.begin(), compared.end(), [&](const std::string& s) { return s.rfind(prefix, 0) == 0; });
    };
    const bool covered = has("edit/stamps/") && has("edit/telemetry.csv") && has("eval/report.json");
    return {differing.empty() && covered,
            std::to_string(compared.size()) + " files compared, " + std::to_string(differing.size()) + " differ" +
                (differing.empty() ? "" : " (first: " + differing.front() + ")")};
}

struct Criterion {
    int id;
    const char* name;
    double limit_seconds;
    std::function<Outcome()> run;
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"fairstamp acceptance checks"};
    std::vector<int> only;
    bool report_only = false;
    app.add_option("--only", only, "run only these criteria")->check(CLI::Range(1, 9));
    app.add_flag("--report-only", report_only, "always exit 0 after reporting");
    CLI11_PARSE(app, argc, argv);

    const std::vector<Criterion> criteria{
        {1, "metric oracle equivalence", 1.0, metric_oracle},
        {2, "stamp identity", 5.0, stamp_identity},
        {3, "gradient correctness", 30.0, gradient},
        {4, "tracing anchors", 60.0, tracing_anchors},
        {5, "frozen base", 60.0, frozen_base},
        {6, "end-to-end trend", 600.0, end_to_end},
        {7, "loss ablation trend", 900.0, loss_ablation},
        {8, "continual stability", 900.0, continual},
        {9, "determinism", 900.0, determinism},
    };
    const std::set<int> selected(only.begin(), only.end());
    bool all_pass = true;
    for (const auto& c : criteria) {
        if (!selected.empty() && !selected.count(c.id)) continue;
        // The shared base model is trained once, outside every criterion's clock
        // except the end-to-end run, which includes it.
        if (c.id == 2 || c.id == 5 || c.id >= 6) trained_world();
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& ex) {
            o = {false, std::string("threw: ") + ex.what()};
        }
        double secs = seconds_since(start);
        if (c.id == 6) secs += trained_world().seconds;
        if (c.id == 7) secs += edit_alpha40().seconds;
        const bool in_time = secs <= c.limit_seconds;
        const bool pass = o.pass && in_time;
        all_pass = all_pass && pass;
        std::cout << "criterion " << c.id << " " << (pass ? "PASS" : "FAIL") << " " << c.name << ": " << o.detail
                  << " [" << fmt(secs, 1) << "s, limit " << fmt(c.limit_seconds, 0) << "s"
                  << (in_time ? "" : ", over limit") << "]" << std::endl;
    }
    return (all_pass || report_only) ? 0 : 1;
}
