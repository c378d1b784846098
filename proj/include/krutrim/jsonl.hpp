#pragma once

#include <filesystem>
#include <vector>

#include "json.hpp"

namespace krutrim {

// Blank lines are skipped; a malformed line throws with its line number.
std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path);
void write_jsonl(const std::filesystem::path& path, const std::vector<nlohmann::json>& rows);

}  // namespace krutrim
