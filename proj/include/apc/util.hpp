#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace apc {

std::string trim(const std::string& s);
std::string to_lower(const std::string& s);

// Lowercase, trim, and collapse internal whitespace runs to single spaces.
// Used to match model-emitted labels against the task's label pair.
std::string fold_label(const std::string& s);

bool starts_with_icase(const std::string& s, const std::string& prefix);

// Whitespace-split count times 1.3, rounded up. The fallback used whenever a
// backend does not report token usage; callers flag the result as estimated.
std::int64_t estimate_tokens(const std::string& text);

std::string iso_utc_now();

std::string sha256_hex(const std::string& bytes);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& content);
// Write to a temp sibling then rename, so readers never see partial files.
void atomic_write_file(const std::filesystem::path& path, const std::string& content);

// Runs fn(0..n-1) across up to `workers` threads. Exceptions are collected
// and the one with the lowest index is rethrown after all threads join, so
// failure behavior does not depend on scheduling.
void parallel_for_indexed(std::size_t n, int workers, const std::function<void(std::size_t)>& fn);

} // namespace apc
