#pragma once

#include <string>
#include <vector>

#include <json.hpp>

namespace mvtta {

using json = nlohmann::json;

// Shortest-exact decimal text for a double: parsing the result with strtod
// recovers the identical bit pattern. Non-finite values are rejected because
// none of our file formats can represent them.
std::string format_double(double value);

// Escapes a string for embedding inside a JSON string literal (quotes not
// included).
std::string json_escape(const std::string& s);

std::string read_text_file(const std::string& path);

// Splits on '\n', strips trailing '\r', and drops empty lines.
std::vector<std::string> split_lines(const std::string& text);

// Creates missing parent directories, then writes the file atomically enough
// for our purposes (single write call).
void write_text_file(const std::string& path, const std::string& content);

// Parses a JSON document from a file; wraps parse failures in DataError with
// the file path in the message.
json parse_json_file(const std::string& path);

void write_json_file(const std::string& path, const json& doc);

}  // namespace mvtta
