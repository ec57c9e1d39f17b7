#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace flowloc {

// Worker cap from FLOWLOC_THREADS (default: hardware concurrency, at least 1).
std::size_t worker_count();

// Runs body(i) for i in [0, n) on up to worker_count() threads. Each index is
// visited exactly once; callers must only write to index-private state.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

// Writes to a sibling temp file then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_atomic(const std::filesystem::path& path, const std::string& text);
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

// Deterministic 64-bit seed derivation (splitmix64 over the pair).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace flowloc
