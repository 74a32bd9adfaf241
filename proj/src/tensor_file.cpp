#include "tensor_file.hpp"

#include "fairstamp/errors.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <fstream>
#include <iterator>
#include <sstream>

namespace fairstamp::detail {

std::uint32_t crc32_of(const std::vector<unsigned char>& bytes) {
    uLong crc = ::crc32(0L, Z_NULL, 0);
    crc = ::crc32(crc, bytes.data(), static_cast<uInt>(bytes.size()));
    return static_cast<std::uint32_t>(crc);
}

namespace {

void append_f32_le(std::vector<unsigned char>& out, float value) {
    const auto bits = std::bit_cast<std::uint32_t>(value);
    for (int b = 0; b < 4; ++b) {
        out.push_back(static_cast<unsigned char>((bits >> (8 * b)) & 0xFFu));
    }
}

float read_f32_le(const unsigned char* p) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) {
        bits |= static_cast<std::uint32_t>(p[b]) << (8 * b);
    }
    return std::bit_cast<float>(bits);
}

std::int64_t element_count(const std::vector<std::int64_t>& shape) {
    std::int64_t n = 1;
    for (const auto s : shape) {
        n *= s;
    }
    return n;
}

}  // namespace

nlohmann::json write_tensor_blob(const std::filesystem::path& bin,
                                 const std::vector<TensorRecord>& tensors) {
    std::vector<unsigned char> all;
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& t : tensors) {
        std::vector<unsigned char> bytes;
        bytes.reserve(t.values.size() * 4);
        for (const float v : t.values) {
            append_f32_le(bytes, v);
        }
        entries.push_back({{"name", t.name},
                           {"shape", t.shape},
                           {"dtype", "f32"},
                           {"offset", all.size()},
                           {"length", bytes.size()},
                           {"crc32", crc32_of(bytes)}});
        all.insert(all.end(), bytes.begin(), bytes.end());
    }
    write_text_atomic(bin, std::string(all.begin(), all.end()));
    return entries;
}

std::vector<TensorRecord> read_tensor_blob(const std::filesystem::path& bin,
                                           const nlohmann::json& entries) {
    std::ifstream in(bin, std::ios::binary);
    if (!in) {
        throw LoadError("cannot open " + bin.string());
    }
    const std::vector<unsigned char> data((std::istreambuf_iterator<char>(in)),
                                          std::istreambuf_iterator<char>());
    if (!entries.is_array()) {
        throw LoadError("manifest tensor list is not an array");
    }
    std::vector<TensorRecord> out;
    std::uint64_t expected_end = 0;
    for (const auto& e : entries) {
        TensorRecord t;
        std::uint64_t offset = 0;
        std::uint64_t length = 0;
        std::uint32_t crc = 0;
        try {
            t.name = e.at("name").get<std::string>();
            t.shape = e.at("shape").get<std::vector<std::int64_t>>();
            if (e.at("dtype").get<std::string>() != "f32") {
                throw LoadError("tensor " + t.name + " has unsupported dtype");
            }
            offset = e.at("offset").get<std::uint64_t>();
            length = e.at("length").get<std::uint64_t>();
            crc = e.at("crc32").get<std::uint32_t>();
        } catch (const nlohmann::json::exception& ex) {
            throw LoadError(std::string("malformed tensor entry: ") + ex.what());
        }
        for (const auto s : t.shape) {
            if (s < 0) {
                throw LoadError("tensor " + t.name + " has a negative dimension");
            }
        }
        const auto count = static_cast<std::uint64_t>(element_count(t.shape));
        if (length != count * 4) {
            throw LoadError("tensor " + t.name + " declares " + std::to_string(length) +
                            " bytes but its shape needs " + std::to_string(count * 4));
        }
        if (offset + length > data.size()) {
            throw LoadError("tensor " + t.name + " extends past the end of " + bin.string() +
                            " (truncated file?)");
        }
        const std::vector<unsigned char> bytes(data.begin() + static_cast<std::ptrdiff_t>(offset),
                                               data.begin() + static_cast<std::ptrdiff_t>(offset + length));
        if (crc32_of(bytes) != crc) {
            throw LoadError("CRC mismatch for tensor " + t.name);
        }
        t.values.resize(count);
        for (std::uint64_t i = 0; i < count; ++i) {
            t.values[i] = read_f32_le(bytes.data() + 4 * i);
        }
        expected_end = std::max(expected_end, offset + length);
        out.push_back(std::move(t));
    }
    if (expected_end != data.size()) {
        throw LoadError(bin.string() + " has " + std::to_string(data.size()) +
                        " bytes but the manifest accounts for " + std::to_string(expected_end));
    }
    return out;
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw Error("io", "cannot write " + tmp.string());
        }
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        if (!out) {
            throw Error("io", "failed writing " + tmp.string());
        }
    }
    std::filesystem::rename(tmp, path);
}

nlohmann::json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw LoadError("cannot open " + path.string());
    }
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& ex) {
        throw LoadError("corrupt JSON in " + path.string() + ": " + ex.what());
    }
}

}  // namespace fairstamp::detail
