#pragma once

// Shared manifest + little-endian f32 blob layout used by model checkpoints
// and stamp files.

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace fairstamp::detail {

struct TensorRecord {
    std::string name;
    std::vector<std::int64_t> shape;
    std::vector<float> values;
};

std::uint32_t crc32_of(const std::vector<unsigned char>& bytes);

// Writes `bin` and returns the per-tensor manifest entries.
nlohmann::json write_tensor_blob(const std::filesystem::path& bin,
                                 const std::vector<TensorRecord>& tensors);

// Reads the tensors listed in `entries`, checking dtype, layout, file size and
// CRC. Shapes are returned as declared; callers check them against the model.
std::vector<TensorRecord> read_tensor_blob(const std::filesystem::path& bin,
                                           const nlohmann::json& entries);

// Write-then-rename so readers never observe a half-written file.
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

nlohmann::json read_json_file(const std::filesystem::path& path);

}  // namespace fairstamp::detail
