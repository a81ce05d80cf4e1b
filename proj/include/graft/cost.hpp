#pragma once

#include <string>
#include <vector>

#include "graft/backbone.hpp"

// Closed-form parameter and compute accounting, derived from the spec alone.
// It never touches live tensors: tests compare these numbers against the
// enumerated parameter store to keep the two routes honest.
//
// Conventions:
//  - macs counts multiply-accumulates in matrix products only (projections,
//    attention scores/context, FFN). Bias adds are folded and not counted.
//    A plain window block therefore costs exactly 12*H*W*C^2 + 2*M^2*H*W*C.
//  - eltwise tallies unit-cost element passes (layer norm, GELU, sigmoid,
//    softmax, pooling, interpolation taps, residual adds) separately so the
//    matmul identity above stays exact.

namespace graft {

struct CostRecord {
  std::string name;
  std::string group;  // backbone | graft | head
  long long params = 0;
  long long macs = 0;
  long long eltwise = 0;
};

struct CostReport {
  std::vector<CostRecord> records;

  long long total_params() const;
  long long total_macs() const;
  long long total_eltwise() const;
  long long group_params(const std::string& group) const;
  // macs + eltwise for one group; the complexity ratio uses backbone + graft.
  long long group_cost(const std::string& group) const;
  const CostRecord* find(const std::string& name) const;
};

CostReport count_params(const BackboneSpec& spec);
CostReport count_flops(const BackboneSpec& spec);

struct ComplexityPoint {
  Index resolution = 0;  // first-stage token grid side
  long long plain = 0;   // backbone cost without grafts (macs + eltwise)
  long long grafted = 0; // same backbone with the spec's attachments
  double ratio = 1.0;
};

struct ComplexityReport {
  std::vector<ComplexityPoint> points;
  double bound = 2.0;
  double limit = 1.0;  // ratio at the largest resolution
  bool bounded = true; // every ratio <= bound
};

// Evaluates the grafted/plain cost ratio with the image scaled so the first
// stage grid matches each listed resolution. The classifier head is excluded
// from both sides: its cost does not depend on the attachments and would
// otherwise leak a resolution-independent constant into the ratio.
ComplexityReport verify_complexity_claim(const BackboneSpec& spec,
                                         const std::vector<Index>& resolutions);

}  // namespace graft
