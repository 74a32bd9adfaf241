#include "fairstamp/pipeline.hpp"

#include <CLI11.hpp>

#include <functional>
#include <iostream>
#include <map>
#include <sstream>

namespace {

using namespace fairstamp;

struct Flags {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::string positions;
    std::string layers;
};

std::vector<int> parse_layers(const std::string& text) {
    std::vector<int> layers;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        try {
            std::size_t used = 0;
            layers.push_back(std::stoi(item, &used));
            if (used != item.size()) {
                throw std::invalid_argument(item);
            }
        } catch (const std::logic_error&) {
            throw ConfigError("--layers expects comma-separated integers, got \"" + text + "\"");
        }
    }
    if (layers.empty()) {
        throw ConfigError("--layers is empty");
    }
    return layers;
}

// Precedence: command-line flags, then environment, then the config file.
PipelineConfig resolve(const Flags& flags) {
    PipelineConfig config = load_pipeline_config(flags.config);
    apply_environment(config);
    if (!flags.out.empty()) {
        config.out = flags.out;
    }
    if (flags.seed) {
        config.edit.seed = *flags.seed;
    }
    if (!flags.positions.empty()) {
        try {
            config.positions = position_mode_from_string(flags.positions);
        } catch (const ArgumentError& ex) {
            throw ConfigError(ex.what());
        }
    }
    if (!flags.layers.empty()) {
        config.layers = parse_layers(flags.layers);
    }
    config.validate();
    return config;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Bias editing with fairness stamps on a toy transformer"};
    app.require_subcommand(1);
    Flags flags;

    const std::map<std::string, std::pair<std::string, std::function<void(const PipelineConfig&)>>> commands{
        {"gen", {"generate the synthetic world", cmd_gen}},
        {"train-base", {"train the base model on the corpus", cmd_train_base}},
        {"trace", {"locate the decisive layer",
                   [](const PipelineConfig& c) {
                       const auto r = cmd_trace(c);
                       std::cout << "decisive layer " << r.decisive_layer << "\n";
                   }}},
        {"edit", {"train fairness stamps on the bias set", cmd_edit}},
        {"eval", {"score the base and the edited model",
                  [](const PipelineConfig& c) { std::cout << report_json(cmd_eval(c)); }}},
        {"continual", {"edit consecutive bias sets with one set of stamps", cmd_continual}},
        {"all", {"run every stage", cmd_all}},
    };
    std::function<void(const PipelineConfig&)> chosen;
    for (const auto& [name, entry] : commands) {
        CLI::App* sub = app.add_subcommand(name, entry.first);
        sub->add_option("--config", flags.config, "pipeline config (JSON)")->required();
        sub->add_option("--out", flags.out, "output directory");
        sub->add_option("--seed", flags.seed, "editing seed");
        sub->add_option("--positions", flags.positions, "restored positions when tracing")
            ->check(CLI::IsMember({"subject", "all"}));
        sub->add_option("--layers", flags.layers, "stamp layers, e.g. \"2\" or \"2,3\"");
        sub->callback([&chosen, fn = entry.second] { chosen = fn; });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error:usage: " << e.what() << "\n";
        return 1;
    }

    try {
        chosen(resolve(flags));
    } catch (const Error& e) {
        std::cerr << "error:" << e.category() << ": " << e.what() << "\n";
        return exit_code_for(e);
    } catch (const std::exception& e) {
        std::cerr << "error:io: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
