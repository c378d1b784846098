#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace krutrim {

struct Document {
  std::string id;
  std::string text;
  std::string language;
  std::string source;

  bool operator==(const Document&) const = default;
};

using Corpus = std::vector<Document>;

// One JSON object per line: {id, text, language, source}. Missing id gets the
// line number; missing language/source become "und"/"".
Corpus read_corpus(const std::filesystem::path& path);
void write_corpus(const std::filesystem::path& path, const Corpus& corpus);

}  // namespace krutrim
