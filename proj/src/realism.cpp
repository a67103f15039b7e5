#include "gvqg/realism.hpp"

#include <atomic>

namespace gvqg::realism {
namespace {

thread_local int t_depth = 0;
std::atomic<std::uint64_t> g_violations{0};
std::atomic<std::uint64_t> g_reads{0};
std::atomic<std::uint64_t> g_scopes{0};

}  // namespace

InferenceScope::InferenceScope() {
  ++t_depth;
  g_scopes.fetch_add(1, std::memory_order_relaxed);
}

InferenceScope::~InferenceScope() { --t_depth; }

bool in_inference() { return t_depth > 0; }

void note_ground_truth_read() {
  g_reads.fetch_add(1, std::memory_order_relaxed);
  if (t_depth > 0) g_violations.fetch_add(1, std::memory_order_relaxed);
}

std::uint64_t violations() { return g_violations.load(); }
std::uint64_t ground_truth_reads() { return g_reads.load(); }
std::uint64_t scopes_opened() { return g_scopes.load(); }

void reset_counters() {
  g_violations = 0;
  g_reads = 0;
  g_scopes = 0;
}

}  // namespace gvqg::realism
