#pragma once
// Byte-pair-encoding tokenizer trained from scratch.
//
// Text is pre-tokenized into pieces that start at each whitespace character,
// so a space travels as the first byte of the following piece and decoding
// is plain concatenation. With byte_fallback the base alphabet is all 256
// byte values; otherwise it is the set of code points seen in training and
// unseen code points encode as the unk token.
//
// Id layout: special tokens (declaration order), then base symbols, then one
// id per merge in training order.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "json.hpp"
#include "krutrim/document.hpp"

namespace krutrim {

struct TokenizerConfig {
  int vocab_size = 512;
  std::vector<std::string> special_tokens{"<pad>", "<bos>", "<eos>", "<unk>"};
  bool byte_fallback = true;
  bool lowercase = false;
};

struct LanguageFertility {
  std::size_t token_count = 0;
  std::size_t word_count = 0;
  double ratio = 0.0;
};

struct FertilityReport {
  std::map<std::string, LanguageFertility> per_language;
  double overall_ratio = 0.0;
};

// Splits text into BPE pieces; concatenating the pieces gives the input back.
std::vector<std::string> pretokenize(std::string_view text);

class Tokenizer {
 public:
  static constexpr std::string_view kFormatVersion = "tokv1";

  static Tokenizer train(std::span<const Document> corpus, const TokenizerConfig& config);

  std::vector<int> encode(std::string_view text) const;
  std::string decode(std::span<const int> ids) const;

  int vocab_size() const { return static_cast<int>(vocab_.size()); }
  const TokenizerConfig& config() const { return config_; }
  const std::vector<std::pair<std::string, std::string>>& merges() const { return merge_strings_; }
  // Raw bytes of a token.
  const std::string& token(int id) const;
  std::optional<int> token_id(std::string_view token) const;

  int num_special() const { return static_cast<int>(config_.special_tokens.size()); }
  int base_size() const { return num_special() + static_cast<int>(base_symbols_); }
  // Roles follow the declaration order pad, bos, eos, unk.
  std::optional<int> pad_id() const { return role(0); }
  std::optional<int> bos_id() const { return role(1); }
  std::optional<int> eos_id() const { return role(2); }
  std::optional<int> unk_id() const { return role(3); }

  nlohmann::json to_json() const;
  static Tokenizer from_json(const nlohmann::json& j);
  void save(const std::filesystem::path& path) const;
  static Tokenizer load(const std::filesystem::path& path);

 private:
  std::optional<int> role(int k) const {
    return k < num_special() ? std::optional<int>(k) : std::nullopt;
  }
  void add_token(std::string bytes);
  void add_merge(int left, int right);
  std::vector<int> base_symbols(std::string_view piece) const;
  void apply_merges(std::vector<int>& symbols) const;

  TokenizerConfig config_;
  std::size_t base_symbols_ = 0;
  std::vector<std::string> vocab_;
  std::unordered_map<std::string, int> index_;
  std::vector<std::pair<std::string, std::string>> merge_strings_;
  // (left << 32 | right) -> merge rank
  std::unordered_map<std::uint64_t, int> merge_rank_;
};

// Per-language tokens per whitespace word. Throws on an empty corpus or one
// with no words.
FertilityReport fertility_report(const Tokenizer& tokenizer, std::span<const Document> corpus);

}  // namespace krutrim
