#pragma once

#include <stdexcept>
#include <string>

namespace fairstamp {

// Every error carries a short machine-parsable category ("config", "load", ...)
// next to the human message. The CLI prints `error:<category>: <message>`.
class Error : public std::runtime_error {
public:
    Error(std::string category, const std::string& message)
        : std::runtime_error(message), category_(std::move(category)) {}

    const std::string& category() const noexcept { return category_; }

private:
    std::string category_;
};

#define FAIRSTAMP_DEFINE_ERROR(Name, tag)                                    \
    class Name : public Error {                                              \
    public:                                                                  \
        explicit Name(const std::string& message) : Error(tag, message) {}   \
    };

FAIRSTAMP_DEFINE_ERROR(ConfigError, "config")
FAIRSTAMP_DEFINE_ERROR(LengthError, "length")
FAIRSTAMP_DEFINE_ERROR(PatchError, "patch")
FAIRSTAMP_DEFINE_ERROR(ArgumentError, "argument")
FAIRSTAMP_DEFINE_ERROR(ShapeError, "shape")
FAIRSTAMP_DEFINE_ERROR(LoadError, "load")
FAIRSTAMP_DEFINE_ERROR(GenerationError, "generation")
FAIRSTAMP_DEFINE_ERROR(AlignmentError, "alignment")
FAIRSTAMP_DEFINE_ERROR(LocationError, "location")
FAIRSTAMP_DEFINE_ERROR(AttachError, "attach")
FAIRSTAMP_DEFINE_ERROR(LossError, "loss")
FAIRSTAMP_DEFINE_ERROR(MetricError, "metric")
FAIRSTAMP_DEFINE_ERROR(CheckError, "check")

#undef FAIRSTAMP_DEFINE_ERROR

}  // namespace fairstamp
