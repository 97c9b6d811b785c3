#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

namespace seldlab::util {

std::string sha256_hex(const void* data, size_t len);
std::string sha256_file_hex(const std::filesystem::path& path);

// Worker count: min(hardware, SELDLAB_THREADS when set). Always >= 1.
int worker_count();

// Static-partition parallel map of fn over [0, n). Jobs must be independent;
// callers that need a deterministic reduction combine results in index order
// afterwards.
void parallel_for(size_t n, const std::function<void(size_t)>& fn);

}  // namespace seldlab::util
