#pragma once

#include <filesystem>
#include <vector>

#include <json.hpp>

namespace instyle::jsonl {

/// One JSON value per non-empty line; throws ParseError with the line number.
std::vector<nlohmann::json> read(const std::filesystem::path& path);
void write(const std::filesystem::path& path, const std::vector<nlohmann::json>& lines);

}  // namespace instyle::jsonl
