#include "krutrim/tokenizer.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <limits>
#include <set>
#include <stdexcept>
#include <tuple>

#include "krutrim/text.hpp"

namespace krutrim {

namespace {

constexpr std::uint64_t pair_key(int left, int right) {
  return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(left)) << 32) |
         static_cast<std::uint32_t>(right);
}
constexpr int key_left(std::uint64_t k) { return static_cast<int>(k >> 32); }
constexpr int key_right(std::uint64_t k) { return static_cast<int>(k & 0xFFFFFFFFu); }

// Printable stand-ins for raw bytes so every token serializes as valid UTF-8
// (the GPT-2 byte-to-unicode table).
struct ByteTable {
  std::array<char32_t, 256> to_cp{};
  std::unordered_map<char32_t, unsigned char> to_byte;

  ByteTable() {
    std::array<bool, 256> direct{};
    for (int b = '!'; b <= '~'; ++b) direct[b] = true;
    for (int b = 0xA1; b <= 0xAC; ++b) direct[b] = true;
    for (int b = 0xAE; b <= 0xFF; ++b) direct[b] = true;
    char32_t next = 256;
    for (int b = 0; b < 256; ++b) {
      to_cp[b] = direct[b] ? static_cast<char32_t>(b) : next++;
      to_byte[to_cp[b]] = static_cast<unsigned char>(b);
    }
  }
};

const ByteTable& byte_table() {
  static const ByteTable table;
  return table;
}

std::string bytes_to_printable(std::string_view bytes) {
  std::string out;
  for (unsigned char b : bytes) text::append_utf8(out, byte_table().to_cp[b]);
  return out;
}

std::string printable_to_bytes(std::string_view s) {
  std::string out;
  for (char32_t cp : text::decode_utf8(s)) {
    auto it = byte_table().to_byte.find(cp);
    if (it == byte_table().to_byte.end()) {
      throw std::runtime_error("tokenizer file: token contains unmapped code point");
    }
    out.push_back(static_cast<char>(it->second));
  }
  return out;
}

std::size_t count_code_points(std::string_view s) {
  std::size_t n = 0;
  for (unsigned char c : s) n += (c & 0xC0) != 0x80;
  return n;
}

}  // namespace

std::vector<std::string> pretokenize(std::string_view input) {
  std::vector<std::string> pieces;
  std::string cur;
  for (char32_t cp : text::decode_utf8(input)) {
    if (text::is_space(cp) && !cur.empty()) {
      pieces.push_back(std::move(cur));
      cur.clear();
    }
    text::append_utf8(cur, cp);
  }
  if (!cur.empty()) pieces.push_back(std::move(cur));
  return pieces;
}

void Tokenizer::add_token(std::string bytes) {
  const int id = static_cast<int>(vocab_.size());
  index_.emplace(bytes, id);
  vocab_.push_back(std::move(bytes));
}

void Tokenizer::add_merge(int left, int right) {
  std::string merged = vocab_.at(left) + vocab_.at(right);
  if (!index_.contains(merged)) add_token(merged);
  merge_rank_.emplace(pair_key(left, right), static_cast<int>(merge_strings_.size()));
  merge_strings_.emplace_back(vocab_[left], vocab_[right]);
}

Tokenizer Tokenizer::train(std::span<const Document> corpus, const TokenizerConfig& config) {
  if (corpus.empty()) throw std::invalid_argument("train_bpe: empty corpus");
  {
    std::set<std::string> seen(config.special_tokens.begin(), config.special_tokens.end());
    if (seen.size() != config.special_tokens.size()) {
      throw std::invalid_argument("train_bpe: duplicate special tokens");
    }
  }

  Tokenizer tok;
  tok.config_ = config;
  // Specials live in vocab_ but not in index_: text never encodes to them.
  tok.vocab_ = config.special_tokens;

  std::map<std::string, std::int64_t> piece_counts;
  std::set<std::string> alphabet;
  for (const auto& doc : corpus) {
    const std::string body = config.lowercase ? text::to_lower_ascii(doc.text) : doc.text;
    for (auto& piece : pretokenize(body)) {
      if (!config.byte_fallback) {
        for (char32_t cp : text::decode_utf8(piece)) {
          std::string s;
          text::append_utf8(s, cp);
          alphabet.insert(std::move(s));
        }
      }
      ++piece_counts[std::move(piece)];
    }
  }

  if (config.byte_fallback) {
    for (int b = 0; b < 256; ++b) tok.add_token(std::string(1, static_cast<char>(b)));
    tok.base_symbols_ = 256;
  } else {
    for (const auto& s : alphabet) tok.add_token(s);
    tok.base_symbols_ = alphabet.size();
  }
  if (config.vocab_size < tok.base_size()) {
    throw std::invalid_argument("train_bpe: vocab_size " + std::to_string(config.vocab_size) +
                                " is smaller than the base alphabet (" +
                                std::to_string(tok.base_size()) + ")");
  }

  std::vector<std::vector<int>> words;
  std::vector<std::int64_t> freqs;
  for (const auto& [piece, count] : piece_counts) {
    words.push_back(tok.base_symbols(piece));
    freqs.push_back(count);
  }

  std::unordered_map<std::uint64_t, std::int64_t> pair_counts;
  auto count_word = [&](const std::vector<int>& w, std::int64_t delta) {
    for (std::size_t i = 0; i + 1 < w.size(); ++i) pair_counts[pair_key(w[i], w[i + 1])] += delta;
  };
  for (std::size_t i = 0; i < words.size(); ++i) count_word(words[i], freqs[i]);

  while (tok.vocab_size() < config.vocab_size) {
    std::uint64_t best = 0;
    std::int64_t best_count = 0;
    for (const auto& [key, count] : pair_counts) {
      if (count < best_count || count <= 0) continue;
      if (count > best_count) {
        best = key;
        best_count = count;
        continue;
      }
      const auto& a = std::tie(tok.vocab_[key_left(key)], tok.vocab_[key_right(key)]);
      const auto& b = std::tie(tok.vocab_[key_left(best)], tok.vocab_[key_right(best)]);
      if (a < b) best = key;
    }
    if (best_count < 2) break;

    const int left = key_left(best);
    const int right = key_right(best);
    tok.add_merge(left, right);
    const int merged = tok.index_.at(tok.vocab_[left] + tok.vocab_[right]);

    for (std::size_t wi = 0; wi < words.size(); ++wi) {
      auto& w = words[wi];
      bool present = false;
      for (std::size_t i = 0; i + 1 < w.size(); ++i) {
        if (w[i] == left && w[i + 1] == right) {
          present = true;
          break;
        }
      }
      if (!present) continue;
      count_word(w, -freqs[wi]);
      std::vector<int> next;
      next.reserve(w.size());
      for (std::size_t i = 0; i < w.size();) {
        if (i + 1 < w.size() && w[i] == left && w[i + 1] == right) {
          next.push_back(merged);
          i += 2;
        } else {
          next.push_back(w[i++]);
        }
      }
      w = std::move(next);
      count_word(w, freqs[wi]);
    }
    std::erase_if(pair_counts, [](const auto& kv) { return kv.second <= 0; });
  }
  return tok;
}

std::vector<int> Tokenizer::base_symbols(std::string_view piece) const {
  std::vector<int> out;
  if (config_.byte_fallback) {
    out.reserve(piece.size());
    for (unsigned char b : piece) out.push_back(num_special() + b);
    return out;
  }
  for (char32_t cp : text::decode_utf8(piece)) {
    std::string s;
    text::append_utf8(s, cp);
    auto it = index_.find(s);
    if (it == index_.end() || it->second >= base_size()) {
      if (const auto unk = unk_id()) {
        out.push_back(*unk);
        continue;
      }
      throw std::invalid_argument("encode: symbol '" + s + "' is not in the vocabulary");
    }
    out.push_back(it->second);
  }
  return out;
}

void Tokenizer::apply_merges(std::vector<int>& symbols) const {
  while (symbols.size() > 1) {
    int best_rank = std::numeric_limits<int>::max();
    std::uint64_t best = 0;
    for (std::size_t i = 0; i + 1 < symbols.size(); ++i) {
      const std::uint64_t key = pair_key(symbols[i], symbols[i + 1]);
      auto it = merge_rank_.find(key);
      if (it != merge_rank_.end() && it->second < best_rank) {
        best_rank = it->second;
        best = key;
      }
    }
    if (best_rank == std::numeric_limits<int>::max()) return;
    const int left = key_left(best);
    const int right = key_right(best);
    const int merged = index_.at(vocab_[left] + vocab_[right]);
    std::vector<int> next;
    next.reserve(symbols.size());
    for (std::size_t i = 0; i < symbols.size();) {
      if (i + 1 < symbols.size() && symbols[i] == left && symbols[i + 1] == right) {
        next.push_back(merged);
        i += 2;
      } else {
        next.push_back(symbols[i++]);
      }
    }
    symbols = std::move(next);
  }
}

std::vector<int> Tokenizer::encode(std::string_view input) const {
  const std::string body = config_.lowercase ? text::to_lower_ascii(input) : std::string(input);
  std::vector<int> ids;
  for (const auto& piece : pretokenize(body)) {
    auto symbols = base_symbols(piece);
    apply_merges(symbols);
    ids.insert(ids.end(), symbols.begin(), symbols.end());
  }
  return ids;
}

std::string Tokenizer::decode(std::span<const int> ids) const {
  std::string out;
  for (int id : ids) out += token(id);
  return out;
}

const std::string& Tokenizer::token(int id) const {
  if (id < 0 || id >= vocab_size()) {
    throw std::out_of_range("token id " + std::to_string(id) + " out of range [0, " +
                            std::to_string(vocab_size()) + ")");
  }
  return vocab_[id];
}

std::optional<int> Tokenizer::token_id(std::string_view token) const {
  for (int i = 0; i < num_special(); ++i) {
    if (config_.special_tokens[i] == token) return i;
  }
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

nlohmann::json Tokenizer::to_json() const {
  nlohmann::json vocab = nlohmann::json::array();
  for (int i = 0; i < vocab_size(); ++i) {
    vocab.push_back(i < num_special() ? vocab_[i] : bytes_to_printable(vocab_[i]));
  }
  nlohmann::json merges = nlohmann::json::array();
  for (const auto& [l, r] : merge_strings_) {
    merges.push_back({bytes_to_printable(l), bytes_to_printable(r)});
  }
  return {{"version", kFormatVersion},
          {"config",
           {{"vocab_size", config_.vocab_size},
            {"special_tokens", config_.special_tokens},
            {"byte_fallback", config_.byte_fallback},
            {"lowercase", config_.lowercase}}},
          {"vocab", std::move(vocab)},
          {"merges", std::move(merges)}};
}

Tokenizer Tokenizer::from_json(const nlohmann::json& j) {
  if (j.value("version", std::string()) != kFormatVersion) {
    throw std::runtime_error("tokenizer file: expected version " + std::string(kFormatVersion));
  }
  Tokenizer tok;
  const auto& c = j.at("config");
  tok.config_.vocab_size = c.at("vocab_size").get<int>();
  tok.config_.special_tokens = c.at("special_tokens").get<std::vector<std::string>>();
  tok.config_.byte_fallback = c.at("byte_fallback").get<bool>();
  tok.config_.lowercase = c.value("lowercase", false);

  const auto vocab = j.at("vocab").get<std::vector<std::string>>();
  const int n_special = tok.num_special();
  if (static_cast<int>(vocab.size()) < n_special) {
    throw std::runtime_error("tokenizer file: vocab shorter than special-token list");
  }
  for (int i = 0; i < n_special; ++i) {
    if (vocab[i] != tok.config_.special_tokens[i]) {
      throw std::runtime_error("tokenizer file: special tokens do not lead the vocab");
    }
    tok.vocab_.push_back(vocab[i]);
  }
  for (std::size_t i = n_special; i < vocab.size(); ++i) {
    std::string bytes = printable_to_bytes(vocab[i]);
    if (tok.index_.contains(bytes)) throw std::runtime_error("tokenizer file: duplicate token");
    tok.add_token(std::move(bytes));
  }
  std::size_t base = 0;
  for (std::size_t i = n_special; i < tok.vocab_.size(); ++i, ++base) {
    const auto& t = tok.vocab_[i];
    const bool single = tok.config_.byte_fallback ? t.size() == 1 : count_code_points(t) == 1;
    if (!single) break;
  }
  tok.base_symbols_ = base;

  for (const auto& m : j.at("merges")) {
    const std::string l = printable_to_bytes(m.at(0).get<std::string>());
    const std::string r = printable_to_bytes(m.at(1).get<std::string>());
    auto li = tok.index_.find(l);
    auto ri = tok.index_.find(r);
    if (li == tok.index_.end() || ri == tok.index_.end() || !tok.index_.contains(l + r)) {
      throw std::runtime_error("tokenizer file: merge refers to an unknown token");
    }
    tok.merge_rank_.emplace(pair_key(li->second, ri->second),
                            static_cast<int>(tok.merge_strings_.size()));
    tok.merge_strings_.emplace_back(l, r);
  }
  return tok;
}

void Tokenizer::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << to_json().dump() << '\n';
}

Tokenizer Tokenizer::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
  return from_json(j);
}

FertilityReport fertility_report(const Tokenizer& tokenizer, std::span<const Document> corpus) {
  if (corpus.empty()) throw std::invalid_argument("fertility_report: empty corpus");
  FertilityReport report;
  std::size_t tokens = 0;
  std::size_t words = 0;
  for (const auto& doc : corpus) {
    const std::size_t w = text::split_whitespace(doc.text).size();
    if (w == 0) continue;
    const std::size_t t = tokenizer.encode(doc.text).size();
    auto& entry = report.per_language[doc.language];
    entry.token_count += t;
    entry.word_count += w;
    tokens += t;
    words += w;
  }
  if (words == 0) throw std::invalid_argument("fertility_report: corpus has no words");
  for (auto& [lang, entry] : report.per_language) {
    entry.ratio = static_cast<double>(entry.token_count) / static_cast<double>(entry.word_count);
  }
  report.overall_ratio = static_cast<double>(tokens) / static_cast<double>(words);
  return report;
}

}  // namespace krutrim
