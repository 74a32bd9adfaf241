#include "fairstamp/pipeline.hpp"

#include "tensor_file.hpp"

#include <algorithm>
#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <map>
#include <set>
#include <sstream>

namespace fairstamp {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Reads fields from one JSON object and rejects keys nobody asked for.
class Section {
public:
    Section(const json& j, std::string name) : j_(j), name_(std::move(name)) {
        if (!j_.is_object()) {
            throw ConfigError("section \"" + name_ + "\" must be an object");
        }
    }

    template <typename V>
    void get(const char* key, V& into) {
        seen_.insert(key);
        if (!j_.contains(key)) {
            return;
        }
        try {
            into = j_.at(key).get<V>();
        } catch (const json::exception&) {
            throw ConfigError(name_ + "." + key + " has the wrong type");
        }
    }

    template <typename V>
    void get(const char* key, std::optional<V>& into) {
        seen_.insert(key);
        if (!j_.contains(key) || j_.at(key).is_null()) {
            return;
        }
        V value{};
        get(key, value);
        into = std::move(value);
    }

    bool has(const char* key) const { return j_.contains(key); }

    const json& sub(const char* key) {
        seen_.insert(key);
        return j_.at(key);
    }

    void finish() const {
        for (const auto& item : j_.items()) {
            if (!seen_.count(item.key())) {
                throw ConfigError("unknown key \"" + item.key() + "\" in " + name_);
            }
        }
    }

private:
    const json& j_;
    std::string name_;
    std::set<std::string> seen_;
};

json model_json(const ModelConfig& c) {
    return {{"num_layers", c.num_layers},     {"model_dim", c.model_dim},
            {"num_heads", c.num_heads},       {"vocab_size", c.vocab_size},
            {"max_seq_len", c.max_seq_len},   {"ffn_hidden_dim", c.ffn_hidden_dim},
            {"seed", c.seed}};
}

json world_json(const WorldSpec& w) {
    return {{"num_groups", w.num_groups},
            {"num_attributes", w.num_attributes},
            {"num_bias_pairs", w.num_bias_pairs},
            {"num_retention", w.num_retention},
            {"num_paraphrases_per_pair", w.num_paraphrases_per_pair},
            {"corpus_size", w.corpus_size},
            {"bias_strength", w.bias_strength},
            {"seed", w.seed},
            {"vocab_size", w.vocab_size},
            {"max_filler_prefix", w.max_filler_prefix}};
}

json edit_json(const EditHyper& h) {
    return {{"batch_size", h.batch_size},
            {"iterations_per_batch", h.iterations_per_batch},
            {"learning_rate", h.learning_rate},
            {"adam_beta1", h.adam_beta1},
            {"adam_beta2", h.adam_beta2},
            {"adam_eps", h.adam_eps},
            {"prefix_count", h.prefix_count},
            {"prefix_min_length", h.prefix_min_length},
            {"prefix_max_length", h.prefix_max_length},
            {"stamp_hidden_dim", h.stamp_hidden_dim},
            {"seed", h.seed},
            {"log_prob_efficacy", h.log_prob_efficacy}};
}

std::optional<fs::path> optional_path(Section& s, const char* key) {
    std::optional<std::string> v;
    s.get(key, v);
    if (!v) {
        return std::nullopt;
    }
    return fs::path(*v);
}

// ---------------------------------------------------------------------------
// Paths and manifest

struct Layout {
    fs::path out;
    fs::path world() const { return out / "world"; }
    fs::path corpus() const { return world() / "corpus.jsonl"; }
    fs::path bundle() const { return world() / "bundle.jsonl"; }
    fs::path ground_truth() const { return world() / "ground_truth.json"; }
    fs::path base() const { return out / "base"; }
    fs::path trace() const { return out / "trace"; }
    fs::path edit() const { return out / "edit"; }
    fs::path eval() const { return out / "eval"; }
    fs::path continual() const { return out / "continual"; }
    fs::path manifest() const { return out / "manifest.json"; }
};

fs::path input_or(const std::optional<fs::path>& given, const fs::path& fallback) {
    return given ? *given : fallback;
}

void require_exists(const fs::path& p, const char* what) {
    if (!fs::exists(p)) {
        throw LoadError(std::string(what) + " not found: " + p.string());
    }
}

std::string file_crc(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                           std::istreambuf_iterator<char>());
    std::ostringstream hex;
    hex << std::hex << detail::crc32_of(bytes);
    return hex.str();
}

class StageClock {
public:
    StageClock() : start_(std::chrono::steady_clock::now()) {}
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

private:
    std::chrono::steady_clock::time_point start_;
};

// Records one finished stage: its wall time and the checksum of every file it
// wrote under `dir`. The manifest is rewritten as a whole each time.
void record_stage(const PipelineConfig& config, const std::string& stage, const fs::path& dir,
                  double seconds) {
    const Layout layout{config.out};
    json manifest = json::object();
    if (fs::exists(layout.manifest())) {
        try {
            manifest = detail::read_json_file(layout.manifest());
        } catch (const Error&) {
            manifest = json::object();
        }
    }
    json artifacts = json::object();
    std::vector<fs::path> files;
    for (const auto& entry : fs::recursive_directory_iterator(dir)) {
        if (entry.is_regular_file()) {
            files.push_back(entry.path());
        }
    }
    std::sort(files.begin(), files.end());
    for (const auto& f : files) {
        artifacts[fs::relative(f, config.out).generic_string()] = file_crc(f);
    }
    manifest["config"] = pipeline_config_to_json(config);
    manifest["seeds"] = {{"world", config.world.seed},
                         {"model", config.model.seed},
                         {"train", config.train.seed},
                         {"edit", config.edit.seed}};
    manifest["stages"][stage] = {{"wall_seconds", seconds}, {"artifacts", artifacts}};
    detail::write_text_atomic(layout.manifest(), manifest.dump(2) + "\n");
}

void write_text(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path());
    detail::write_text_atomic(path, text);
}

void fresh_dir(const fs::path& dir) {
    fs::remove_all(dir);
    fs::create_directories(dir);
}

// ---------------------------------------------------------------------------
// Stage inputs

DatasetBundle load_bundle(const PipelineConfig& config) {
    const fs::path p = input_or(config.inputs.bundle, Layout{config.out}.bundle());
    require_exists(p, "dataset");
    DatasetBundle bundle = load_jsonl(p);
    const auto problems = validate_bundle(bundle, &config.model);
    if (!problems.empty()) {
        throw LoadError(p.string() + ": " + problems.front());
    }
    return bundle;
}

std::shared_ptr<const Model> load_base(const PipelineConfig& config) {
    const fs::path p = input_or(config.inputs.base, Layout{config.out}.base());
    require_exists(p, "base checkpoint");
    return std::make_shared<const Model>(load_checkpoint(p));
}

TemplatePrompt load_template(const PipelineConfig& config) {
    if (config.template_relation) {
        return {*config.template_relation};
    }
    const fs::path p = Layout{config.out}.ground_truth();
    require_exists(p, "template relation (ground truth file)");
    try {
        return {detail::read_json_file(p).at("template_relation").get<TokenSeq>()};
    } catch (const json::exception& ex) {
        throw LoadError(p.string() + ": " + ex.what());
    }
}

std::vector<FairnessStamp<float>> load_stamps(const fs::path& dir) {
    require_exists(dir, "stamp directory");
    std::vector<fs::path> subdirs;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_directory()) {
            subdirs.push_back(entry.path());
        }
    }
    std::sort(subdirs.begin(), subdirs.end());
    if (subdirs.empty()) {
        // A single stamp saved directly into `dir`.
        return {load_stamp(dir)};
    }
    std::vector<FairnessStamp<float>> stamps;
    for (const auto& d : subdirs) {
        stamps.push_back(load_stamp(d));
    }
    return stamps;
}

void save_stamps(std::span<const FairnessStamp<float>> stamps, const fs::path& dir) {
    for (const auto& s : stamps) {
        save_stamp(s, dir / ("layer_" + std::to_string(s.layer)));
    }
}

LayerChoice layer_choice(const PipelineConfig& config) {
    if (config.layers.empty()) {
        return LayerChoice::automatic(config.positions);
    }
    return LayerChoice::explicit_layers(config.layers);
}

}  // namespace

// ---------------------------------------------------------------------------
// Config

void PipelineConfig::validate() const {
    try {
        model.validate();
    } catch (const ConfigError& ex) {
        throw ConfigError(std::string("model: ") + ex.what());
    }
    edit.validate();
    weights.validate();
    if (train.steps < 0 || train.batch < 1 || !(train.learning_rate > 0.0)) {
        throw ConfigError("train: steps must be non-negative, batch and learning_rate positive");
    }
    for (int l : layers) {
        if (l < 1 || l > model.num_layers) {
            throw ConfigError("layer " + std::to_string(l) + " outside [1, " +
                              std::to_string(model.num_layers) + "]");
        }
    }
    if (std::set<int>(layers.begin(), layers.end()).size() != layers.size()) {
        throw ConfigError("layers must be distinct");
    }
    if (continual_sets < 0) {
        throw ConfigError("continual_sets must be non-negative");
    }
    if (world.vocab_size > model.vocab_size) {
        throw ConfigError("world vocab_size exceeds the model vocab_size");
    }
    if (out.empty()) {
        throw ConfigError("output directory is empty");
    }
}

PipelineConfig pipeline_config_from_json(const json& j) {
    PipelineConfig c;
    Section top(j, "config");
    if (top.has("model")) {
        Section s(top.sub("model"), "model");
        s.get("num_layers", c.model.num_layers);
        s.get("model_dim", c.model.model_dim);
        s.get("num_heads", c.model.num_heads);
        s.get("vocab_size", c.model.vocab_size);
        s.get("max_seq_len", c.model.max_seq_len);
        s.get("ffn_hidden_dim", c.model.ffn_hidden_dim);
        s.get("seed", c.model.seed);
        s.finish();
    }
    if (top.has("world")) {
        Section s(top.sub("world"), "world");
        s.get("num_groups", c.world.num_groups);
        s.get("num_attributes", c.world.num_attributes);
        s.get("num_bias_pairs", c.world.num_bias_pairs);
        s.get("num_retention", c.world.num_retention);
        s.get("num_paraphrases_per_pair", c.world.num_paraphrases_per_pair);
        s.get("corpus_size", c.world.corpus_size);
        s.get("bias_strength", c.world.bias_strength);
        s.get("seed", c.world.seed);
        s.get("vocab_size", c.world.vocab_size);
        s.get("max_filler_prefix", c.world.max_filler_prefix);
        s.finish();
    }
    if (top.has("train")) {
        Section s(top.sub("train"), "train");
        s.get("learning_rate", c.train.learning_rate);
        s.get("steps", c.train.steps);
        s.get("batch", c.train.batch);
        s.get("seed", c.train.seed);
        s.finish();
    }
    if (top.has("edit")) {
        Section s(top.sub("edit"), "edit");
        s.get("batch_size", c.edit.batch_size);
        s.get("iterations_per_batch", c.edit.iterations_per_batch);
        s.get("learning_rate", c.edit.learning_rate);
        s.get("adam_beta1", c.edit.adam_beta1);
        s.get("adam_beta2", c.edit.adam_beta2);
        s.get("adam_eps", c.edit.adam_eps);
        s.get("prefix_count", c.edit.prefix_count);
        s.get("prefix_min_length", c.edit.prefix_min_length);
        s.get("prefix_max_length", c.edit.prefix_max_length);
        s.get("stamp_hidden_dim", c.edit.stamp_hidden_dim);
        s.get("seed", c.edit.seed);
        s.get("log_prob_efficacy", c.edit.log_prob_efficacy);
        s.finish();
    }
    if (top.has("weights")) {
        Section s(top.sub("weights"), "weights");
        s.get("alpha", c.weights.alpha);
        s.get("beta", c.weights.beta);
        s.finish();
    }
    if (top.has("inputs")) {
        Section s(top.sub("inputs"), "inputs");
        c.inputs.corpus = optional_path(s, "corpus");
        c.inputs.bundle = optional_path(s, "bundle");
        c.inputs.base = optional_path(s, "base");
        c.inputs.stamps = optional_path(s, "stamps");
        s.finish();
    }
    std::string positions = to_string(c.positions);
    top.get("positions", positions);
    try {
        c.positions = position_mode_from_string(positions);
    } catch (const ArgumentError& ex) {
        throw ConfigError(ex.what());
    }
    top.get("layers", c.layers);
    top.get("template_relation", c.template_relation);
    top.get("continual_sets", c.continual_sets);
    std::string out = c.out.string();
    top.get("out", out);
    c.out = out;
    top.finish();
    return c;
}

json pipeline_config_to_json(const PipelineConfig& c) {
    json inputs = json::object();
    auto put = [&](const char* key, const std::optional<fs::path>& p) {
        if (p) {
            inputs[key] = p->string();
        }
    };
    put("corpus", c.inputs.corpus);
    put("bundle", c.inputs.bundle);
    put("base", c.inputs.base);
    put("stamps", c.inputs.stamps);
    json j = {{"model", model_json(c.model)},
              {"world", world_json(c.world)},
              {"train",
               {{"learning_rate", c.train.learning_rate},
                {"steps", c.train.steps},
                {"batch", c.train.batch},
                {"seed", c.train.seed}}},
              {"edit", edit_json(c.edit)},
              {"weights", {{"alpha", c.weights.alpha}, {"beta", c.weights.beta}}},
              {"inputs", inputs},
              {"positions", to_string(c.positions)},
              {"layers", c.layers},
              {"continual_sets", c.continual_sets},
              {"out", c.out.string()}};
    if (c.template_relation) {
        j["template_relation"] = *c.template_relation;
    }
    return j;
}

PipelineConfig load_pipeline_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("cannot open config " + path.string());
    }
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& ex) {
        throw ConfigError(path.string() + ": " + ex.what());
    }
    PipelineConfig c = pipeline_config_from_json(j);
    c.validate();
    return c;
}

void apply_environment(PipelineConfig& config) {
    if (const char* out = std::getenv("FAIRSTAMP_OUT"); out && *out) {
        config.out = out;
    }
    if (const char* seed = std::getenv("FAIRSTAMP_SEED"); seed && *seed) {
        char* end = nullptr;
        const unsigned long long v = std::strtoull(seed, &end, 10);
        if (*end != '\0') {
            throw ConfigError(std::string("FAIRSTAMP_SEED is not an integer: ") + seed);
        }
        config.edit.seed = v;
    }
}

int exit_code_for(const Error& error) {
    const std::string& c = error.category();
    if (c == "config") {
        return 1;
    }
    if (c == "numeric" || c == "check") {
        return 3;
    }
    return 2;
}

// ---------------------------------------------------------------------------
// Stages

void cmd_gen(const PipelineConfig& config) {
    config.validate();
    const StageClock clock;
    const Layout layout{config.out};
    const SyntheticWorld world = gen_synthetic_world(config.world);
    fresh_dir(layout.world());
    save_corpus(world.corpus, layout.corpus());
    save_jsonl(world.bundle, layout.bundle());
    save_ground_truth(world, layout.ground_truth());
    record_stage(config, "gen", layout.world(), clock.seconds());
}

void cmd_train_base(const PipelineConfig& config) {
    config.validate();
    const StageClock clock;
    const Layout layout{config.out};
    const fs::path corpus_path = input_or(config.inputs.corpus, layout.corpus());
    require_exists(corpus_path, "corpus");
    const auto corpus = load_corpus(corpus_path);
    TrainLog log;
    const Model trained = train_base(init_model<float>(config.model), corpus, config.train, &log);
    fresh_dir(layout.base());
    save_checkpoint(trained, layout.base());
    std::ostringstream csv;
    csv << "step,loss\n";
    for (std::size_t i = 0; i < log.step_losses.size(); ++i) {
        csv << i << "," << json(log.step_losses[i]).dump() << "\n";
    }
    write_text(layout.base() / "train_log.csv", csv.str());
    record_stage(config, "train-base", layout.base(), clock.seconds());
}

LocationReport cmd_trace(const PipelineConfig& config) {
    config.validate();
    const StageClock clock;
    const Layout layout{config.out};
    const auto base = load_base(config);
    const DatasetBundle bundle = load_bundle(config);
    TraceOptions options;
    options.positions = config.positions;
    const LocationReport report = locate_decisive_layer(base->view(), bundle.bias_set, options);
    fresh_dir(layout.trace());
    write_text(layout.trace() / "location.json", location_report_json(report, config.positions));
    write_text(layout.trace() / "layer_trace.csv", layer_trace_csv(report));
    // Per-token detail for the first pair whose prompts line up.
    for (std::size_t i = 0; i < bundle.bias_set.size(); ++i) {
        const auto& p = bundle.bias_set[i];
        if (p.contrast == Contrast::subject_swap &&
            p.stereotyped.prompt().size() == p.counterfactual.prompt().size()) {
            write_text(layout.trace() / ("token_trace_pair" + std::to_string(i) + ".csv"),
                       token_trace_csv(trace_tokens(base->view(), p)));
            break;
        }
    }
    record_stage(config, "trace", layout.trace(), clock.seconds());
    return report;
}

void cmd_edit(const PipelineConfig& config) {
    config.validate();
    const StageClock clock;
    const Layout layout{config.out};
    const auto base = load_base(config);
    const DatasetBundle bundle = load_bundle(config);
    const TemplatePrompt templ = load_template(config);
    fresh_dir(layout.edit());
    try {
        const auto result = edit<float>(base, bundle.bias_set, layer_choice(config), config.weights,
                                        config.edit, templ);
        save_stamps(result.model.stamps(), layout.edit() / "stamps");
        write_text(layout.edit() / "telemetry.csv", telemetry_csv(result.records));
        json summary;
        std::vector<int> layers;
        for (const auto& s : result.model.stamps()) {
            layers.push_back(s.layer);
        }
        summary["layers"] = layers;
        summary["stamp_parameters"] = result.model.stamp_parameter_count();
        summary["diagnostics"] = result.diagnostics;
        if (result.location) {
            summary["mean_ie"] = result.location->mean_ie;
        }
        write_text(layout.edit() / "edit.json", summary.dump(2) + "\n");
    } catch (const DivergenceError<float>& ex) {
        save_stamps(ex.last_finite(), layout.edit() / "diverged");
        write_text(layout.edit() / "telemetry.csv", telemetry_csv(ex.records()));
        record_stage(config, "edit", layout.edit(), clock.seconds());
        throw;
    }
    record_stage(config, "edit", layout.edit(), clock.seconds());
}

EvalReport cmd_eval(const PipelineConfig& config) {
    config.validate();
    const StageClock clock;
    const Layout layout{config.out};
    const auto base = load_base(config);
    const DatasetBundle bundle = load_bundle(config);
    StampedModel<float> edited(base);
    for (auto& s : load_stamps(input_or(config.inputs.stamps, layout.edit() / "stamps"))) {
        edited.attach(std::move(s));
    }
    const EvalReport before = evaluate(*base, *base, bundle);
    const EvalReport after = evaluate(*base, edited, bundle);
    fresh_dir(layout.eval());
    write_text(layout.eval() / "base_report.json", report_json(before));
    write_text(layout.eval() / "report.json", report_json(after));
    write_text(layout.eval() / "report.csv", report_csv(after));
    record_stage(config, "eval", layout.eval(), clock.seconds());
    return after;
}

void cmd_continual(const PipelineConfig& config) {
    config.validate();
    const StageClock clock;
    const Layout layout{config.out};
    const auto base = load_base(config);
    const DatasetBundle bundle = load_bundle(config);
    const TemplatePrompt templ = load_template(config);
    const auto n = static_cast<std::size_t>(std::max(config.continual_sets, 1));
    if (n > bundle.bias_set.size()) {
        throw ConfigError("continual_sets exceeds the number of bias pairs");
    }
    std::vector<std::vector<BiasPair>> sets(n);
    for (std::size_t i = 0; i < bundle.bias_set.size(); ++i) {
        sets[i * n / bundle.bias_set.size()].push_back(bundle.bias_set[i]);
    }
    fresh_dir(layout.continual());
    try {
        const auto result = continual_edit<float>(base, sets, layer_choice(config), config.weights,
                                                  config.edit, templ, bundle.retention_set);
        save_stamps(result.model.stamps(), layout.continual() / "stamps");
        write_text(layout.continual() / "telemetry.csv", telemetry_csv(result.records));
        json stages = json::array();
        for (std::size_t s = 0; s < result.stages.size(); ++s) {
            json stage = {{"stage", s}, {"pairs", sets[s].size()}, {"ss", result.stages[s].ss}};
            stage["rs"] = result.stages[s].rs ? json(*result.stages[s].rs) : json(nullptr);
            stages.push_back(stage);
        }
        write_text(layout.continual() / "stages.json", json{{"stages", stages}}.dump(2) + "\n");
    } catch (const DivergenceError<float>& ex) {
        save_stamps(ex.last_finite(), layout.continual() / "diverged");
        write_text(layout.continual() / "telemetry.csv", telemetry_csv(ex.records()));
        record_stage(config, "continual", layout.continual(), clock.seconds());
        throw;
    }
    record_stage(config, "continual", layout.continual(), clock.seconds());
}

void cmd_all(const PipelineConfig& config) {
    config.validate();
    if (!config.inputs.corpus || !config.inputs.bundle) {
        cmd_gen(config);
    }
    if (!config.inputs.base) {
        cmd_train_base(config);
    }
    cmd_trace(config);
    cmd_edit(config);
    PipelineConfig eval_config = config;
    eval_config.inputs.stamps.reset();
    cmd_eval(eval_config);
    if (config.continual_sets >= 2) {
        cmd_continual(config);
    }
}

}  // namespace fairstamp
