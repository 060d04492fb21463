#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace twinflow {

// Thrown on contract violations (bad shapes, degenerate inputs, non-finite
// values). The CLI maps these to exit code 2/3 depending on context.
class TwinflowError : public std::runtime_error {
public:
  explicit TwinflowError(const std::string& msg) : std::runtime_error(msg) {}
};

[[noreturn]] inline void fail(const std::string& msg) { throw TwinflowError(msg); }

inline void require(bool cond, const std::string& msg) {
  if (!cond) fail(msg);
}

// FNV-1a over raw bytes. Content hashes in manifests and reports are
// integrity fingerprints, not cryptographic digests.
inline std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline std::uint64_t fnv1a(const std::string& s, std::uint64_t h = 0xcbf29ce484222325ull) {
  return fnv1a(s.data(), s.size(), h);
}

std::string hex64(std::uint64_t v);

// Worker cap for episode rollouts and per-sample gradient evaluation.
// TWINFLOW_THREADS overrides; results do not depend on the thread count.
unsigned worker_count();

// Runs fn(i) for i in [0, n). Work is claimed from a shared counter, so the
// schedule is nondeterministic but the set of calls is not; callers must keep
// per-index state independent and merge in index order.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace twinflow
