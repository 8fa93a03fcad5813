#pragma once

#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace lmpvc {

class NameError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

std::string to_lower(std::string_view s);
std::string trim(std::string_view s);
std::string rtrim(std::string_view s);
bool starts_with_ci(std::string_view s, std::string_view prefix);

/// Split on '\n'; a trailing '\r' on each line is removed.
std::vector<std::string> split_lines(std::string_view text);

/// Keyword form: lowercase, punctuation removed, whitespace collapsed.
std::string normalize_phrase(std::string_view text);

/// Directive form: trimmed, lowercase, trailing punctuation stripped.
/// "Move a little down." -> "move a little down"
std::string normalize_utterance(std::string_view utterance);

/// Function identifier derived from an utterance.
/// "Move a little down." -> "move_a_little_down", "30cm to the left" -> "_30cm_to_the_left".
/// Apostrophes are dropped before splitting so "what's" becomes "whats".
/// Throws NameError when the text has no alphanumeric character.
std::string sanitize_name(std::string_view utterance);

bool is_identifier(std::string_view s);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, std::string_view content);

}  // namespace lmpvc
