#pragma once
// UTF-8 and word-level helpers shared by the tokenizer, data pipeline,
// metrics and retrieval.

#include <string>
#include <string_view>
#include <vector>

namespace krutrim::text {

// Decodes UTF-8; throws std::invalid_argument on malformed input.
std::u32string decode_utf8(std::string_view s);
bool is_valid_utf8(std::string_view s);
void append_utf8(std::string& out, char32_t cp);
std::string encode_utf8(std::u32string_view s);

bool is_space(char32_t cp);
// Letters and combining marks of alphabetic scripts; digits, punctuation,
// symbols and emoji are not letters.
bool is_letter(char32_t cp);
bool is_digit(char32_t cp);

std::string trim(std::string_view s);
std::string to_lower_ascii(std::string_view s);
std::vector<std::string> split_whitespace(std::string_view s);
// Lowercased whitespace tokens, used by BLEU/ROUGE/accuracy.
std::vector<std::string> lower_tokens(std::string_view s);

}  // namespace krutrim::text
