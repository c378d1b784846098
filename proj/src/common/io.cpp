#include <fstream>
#include <stdexcept>
#include <string>

#include "krutrim/document.hpp"
#include "krutrim/jsonl.hpp"
#include "krutrim/text.hpp"

namespace krutrim {

std::vector<nlohmann::json> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<nlohmann::json> rows;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    try {
      rows.push_back(nlohmann::json::parse(line));
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return rows;
}

void write_jsonl(const std::filesystem::path& path, const std::vector<nlohmann::json>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& row : rows) out << row.dump() << '\n';
}

Corpus read_corpus(const std::filesystem::path& path) {
  Corpus corpus;
  std::size_t n = 0;
  for (const auto& row : read_jsonl(path)) {
    ++n;
    if (!row.contains("text")) {
      throw std::runtime_error(path.string() + ": record " + std::to_string(n) + " has no text");
    }
    Document doc;
    doc.id = row.value("id", std::to_string(n));
    doc.text = row.at("text").get<std::string>();
    doc.language = row.value("language", std::string("und"));
    doc.source = row.value("source", std::string());
    if (!text::is_valid_utf8(doc.text)) {
      throw std::runtime_error(path.string() + ": record " + doc.id + " is not valid UTF-8");
    }
    corpus.push_back(std::move(doc));
  }
  return corpus;
}

void write_corpus(const std::filesystem::path& path, const Corpus& corpus) {
  std::vector<nlohmann::json> rows;
  rows.reserve(corpus.size());
  for (const auto& d : corpus) {
    rows.push_back({{"id", d.id}, {"text", d.text}, {"language", d.language}, {"source", d.source}});
  }
  write_jsonl(path, rows);
}

}  // namespace krutrim
