#pragma once

#include <filesystem>

#include <json.hpp>

#include "m2m/dsp/features.hpp"
#include "m2m/dsp/segment.hpp"

namespace m2m {

using nlohmann::json;

json stft_to_json(const dsp::StftConfig& cfg);
// Missing fields keep their defaults; the result is validated.
dsp::StftConfig stft_from_json(const json& j);

json patch_to_json(const dsp::PatchSize& p);
dsp::PatchSize patch_from_json(const json& j);

// Parses a JSON file; ConfigError if unreadable or malformed.
json read_json_file(const std::filesystem::path& path);
void write_json_file(const json& j, const std::filesystem::path& path);

}  // namespace m2m
