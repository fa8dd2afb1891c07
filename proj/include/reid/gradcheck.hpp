#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace reid {

struct GradcheckOptions {
  std::uint64_t seed = 0;
  std::size_t trials = 100;
  double step = 1e-6;
  double tolerance = 1e-5;
  // Points whose metric term sits within this distance of a hinge or a
  // hardest-pair switch are redrawn.
  double kink_clearance = 1e-4;
  // With a margin, points whose target angle has sin below this are redrawn:
  // the logit kinks at angle 0 and pi, and the derivative clamps the cosine.
  double angle_clearance = 1e-3;
  // Negative control: scales the largest analytic gradient entry by 1.001.
  bool corrupt = false;
};

struct GradcheckEntry {
  std::string loss;
  std::size_t trials = 0;
  double max_rel_error = 0.0;
  bool passed = false;
};

/// Compares every loss's analytic gradient (embeddings and head weights)
/// against central finite differences at randomly drawn configurations.
std::vector<GradcheckEntry> run_gradcheck(const GradcheckOptions& opts);

void write_gradcheck_report(std::ostream& os, const std::vector<GradcheckEntry>& entries);

}  // namespace reid
