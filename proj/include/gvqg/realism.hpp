#pragma once
// Instrumentation for the inference-realism guard: any read of a ground-truth
// question, answer or template hint while an InferenceScope is open on the
// calling thread is counted as a violation.

#include <cstdint>

namespace gvqg::realism {

class InferenceScope {
 public:
  InferenceScope();
  ~InferenceScope();
  InferenceScope(const InferenceScope&) = delete;
  InferenceScope& operator=(const InferenceScope&) = delete;
};

bool in_inference();
void note_ground_truth_read();

std::uint64_t violations();
std::uint64_t ground_truth_reads();
// Number of InferenceScopes opened so far (proves the guarded paths ran).
std::uint64_t scopes_opened();
void reset_counters();

}  // namespace gvqg::realism
