#pragma once

// Config-driven stages behind the command-line tool. Every stage reads its
// inputs from the output directory (or from explicit paths in the config),
// writes its artifacts there and records them in `manifest.json`.

#include "fairstamp/data.hpp"
#include "fairstamp/edit.hpp"
#include "fairstamp/metrics.hpp"
#include "fairstamp/model.hpp"
#include "fairstamp/tracing.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace fairstamp {

// Inputs that normally come from earlier stages in `out`.
struct InputPaths {
    std::optional<std::filesystem::path> corpus;
    std::optional<std::filesystem::path> bundle;
    std::optional<std::filesystem::path> base;
    std::optional<std::filesystem::path> stamps;
};

struct PipelineConfig {
    ModelConfig model;
    WorldSpec world;
    TrainHyper train;
    EditHyper edit;
    LossWeights weights;
    PositionMode positions = PositionMode::subject_tokens;
    std::vector<int> layers;  // empty: locate the decisive layer
    // Template relation for the subject retention loss. Taken from the
    // generated world when absent.
    std::optional<TokenSeq> template_relation;
    // The bias set is split into this many consecutive sets for continual
    // editing; 0 or 1 leaves continual editing out of `all`.
    int continual_sets = 2;
    std::filesystem::path out = "run";
    InputPaths inputs;

    // Throws ConfigError.
    void validate() const;
};

// Unknown keys are rejected so that typos do not silently fall back to defaults.
PipelineConfig pipeline_config_from_json(const nlohmann::json& j);
nlohmann::json pipeline_config_to_json(const PipelineConfig& config);
// Missing or unparsable files are config errors.
PipelineConfig load_pipeline_config(const std::filesystem::path& path);

// Applies FAIRSTAMP_OUT and FAIRSTAMP_SEED when set. The seed override
// replaces the editing seed.
void apply_environment(PipelineConfig& config);

void cmd_gen(const PipelineConfig& config);
void cmd_train_base(const PipelineConfig& config);
LocationReport cmd_trace(const PipelineConfig& config);
void cmd_edit(const PipelineConfig& config);
// Returns the report for the edited model; the base report is written next to it.
EvalReport cmd_eval(const PipelineConfig& config);
void cmd_continual(const PipelineConfig& config);
void cmd_all(const PipelineConfig& config);

// 1 for configuration problems, 3 for numeric failures, 2 for everything
// else (missing or malformed inputs).
int exit_code_for(const Error& error);

}  // namespace fairstamp
