#include "fairstamp/edit.hpp"
#include "fairstamp/pipeline.hpp"
#include "fairstamp/stamp.hpp"

#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace fairstamp;

namespace {

PipelineConfig config_from_text(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& ex) {
        throw ConfigError(ex.what());
    }
    PipelineConfig c = pipeline_config_from_json(j);
    c.validate();
    return c;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Bias editing with fairness stamps on a small transformer";

    static py::exception<Error> error(m, "FairstampError");
    py::register_exception_translator([](std::exception_ptr p) {
        try {
            if (p) std::rethrow_exception(p);
        } catch (const Error& e) {
            py::object instance = py::handle(error.ptr())(e.what());
            instance.attr("category") = e.category();
            instance.attr("exit_code") = exit_code_for(e);
            PyErr_SetObject(error.ptr(), instance.ptr());
        }
    });

    py::class_<ModelConfig>(m, "ModelConfig")
        .def(py::init<>())
        .def_readwrite("num_layers", &ModelConfig::num_layers)
        .def_readwrite("model_dim", &ModelConfig::model_dim)
        .def_readwrite("num_heads", &ModelConfig::num_heads)
        .def_readwrite("vocab_size", &ModelConfig::vocab_size)
        .def_readwrite("max_seq_len", &ModelConfig::max_seq_len)
        .def_readwrite("ffn_hidden_dim", &ModelConfig::ffn_hidden_dim)
        .def_readwrite("seed", &ModelConfig::seed)
        .def("validate", &ModelConfig::validate);

    py::class_<Model, std::shared_ptr<Model>>(m, "Model")
        .def(py::init([](const ModelConfig& c) { return std::make_shared<Model>(init_model<float>(c)); }))
        .def_static("load", [](const std::filesystem::path& p) { return std::make_shared<Model>(load_checkpoint(p)); })
        .def("save", [](const Model& self, const std::filesystem::path& p) { save_checkpoint(self, p); })
        .def_property_readonly("config", &Model::config)
        .def("logits", [](const Model& self, const TokenSeq& t) { return self.forward(t).logits; })
        .def("object_prob", &Model::object_prob, py::arg("prompt"), py::arg("object"))
        .def("next_token_distribution", &Model::next_token_distribution)
        .def("checksum", &Model::checksum)
        .def("parameter_count", &Model::parameter_count);

    m.def(
        "train_base",
        [](const Model& model, const std::vector<TokenSeq>& corpus, int steps, double lr, int batch,
           std::uint64_t seed) {
            TrainHyper h;
            h.steps = steps;
            h.learning_rate = lr;
            h.batch = batch;
            h.seed = seed;
            return std::make_shared<Model>(train_base(model, corpus, h));
        },
        py::arg("model"), py::arg("corpus"), py::arg("steps") = 1500, py::arg("learning_rate") = 3e-3,
        py::arg("batch") = 16, py::arg("seed") = 0, py::call_guard<py::gil_scoped_release>());

    py::class_<FairnessStamp<float>>(m, "Stamp")
        .def(py::init([](int layer, int d, int d_c, std::uint64_t seed) { return new_stamp<float>(layer, d, d_c, seed); }),
             py::arg("layer"), py::arg("model_dim"), py::arg("hidden_dim"), py::arg("seed") = 0)
        .def_static("load", &load_stamp)
        .def("save", [](const FairnessStamp<float>& s, const std::filesystem::path& p) { save_stamp(s, p); })
        .def_readonly("layer", &FairnessStamp<float>::layer)
        .def_readwrite("key", &FairnessStamp<float>::key)
        .def_readwrite("value", &FairnessStamp<float>::value)
        .def("parameter_count", &FairnessStamp<float>::parameter_count)
        .def("apply", [](const FairnessStamp<float>& s, const RowVector<float>& h) { return apply(s, h); });

    py::class_<StampedModel<float>>(m, "StampedModel")
        .def(py::init([](std::shared_ptr<Model> base, const std::vector<FairnessStamp<float>>& stamps) {
                 StampedModel<float> sm(std::const_pointer_cast<const Model>(base));
                 for (const auto& s : stamps) sm.attach(s);
                 return sm;
             }),
             py::arg("base"), py::arg("stamps"))
        .def("logits", [](const StampedModel<float>& self, const TokenSeq& t) { return self.forward(t).logits; })
        .def("object_prob", &StampedModel<float>::object_prob, py::arg("prompt"), py::arg("object"))
        .def("stamp_parameter_count", &StampedModel<float>::stamp_parameter_count)
        .def("base_unchanged", &StampedModel<float>::base_unchanged);

    m.def("icat", &icat, py::arg("lms"), py::arg("ss"));
    m.def("kl_divergence", [](const std::vector<double>& p, const std::vector<double>& q) { return kl_divergence(p, q); });

    // Pipeline stages take the config as JSON text; the Python wrapper accepts dicts.
    m.def("_default_config", [] { return pipeline_config_to_json(PipelineConfig{}).dump(); });
    m.def("_run", [](const std::string& command, const std::string& config_text) {
        const PipelineConfig c = config_from_text(config_text);
        std::string result;
        {
            py::gil_scoped_release release;
            if (command == "gen") cmd_gen(c);
            else if (command == "train-base") cmd_train_base(c);
            else if (command == "trace") result = location_report_json(cmd_trace(c), c.positions);
            else if (command == "edit") cmd_edit(c);
            else if (command == "eval") result = report_json(cmd_eval(c));
            else if (command == "continual") cmd_continual(c);
            else if (command == "all") cmd_all(c);
            else throw ConfigError("unknown command \"" + command + "\"");
        }
        return result;
    });
}
