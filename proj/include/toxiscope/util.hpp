#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace toxiscope {

std::string sha256_hex(std::string_view data);

std::string_view trim(std::string_view s);
std::string to_lower(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);
std::string join(const std::vector<std::string>& parts, std::string_view sep);

bool contains(std::string_view haystack, std::string_view needle);
std::size_t count_occurrences(std::string_view haystack, std::string_view needle);

/// Single-pass substitution of `open name close` slots. Text produced by a
/// substitution is never rescanned, and slots whose name is not bound are
/// copied through untouched.
std::string substitute(std::string_view body,
                       const std::map<std::string, std::string>& bindings,
                       char open = '{', char close = '}');

std::string read_file(const std::filesystem::path& path);

/// UTC wall clock, ISO-8601 with milliseconds.
std::string now_iso8601();

/// Runs fn(i) for i in [0, n) on at most max_parallel threads. The first
/// exception thrown by any task is rethrown after all workers join.
void parallel_for(std::size_t n, std::size_t max_parallel,
                  const std::function<void(std::size_t)>& fn);

}  // namespace toxiscope
