#pragma once

#include <cstdint>
#include <vector>

#include "irkit/dataset.hpp"

namespace irkit::synth {

// Knobs of the synthetic cohort generator. The generative process is
// documented in docs/synthetic_cohort.md.
struct CohortOptions {
  std::size_t n = 5000;
  Source source = Source::Nhanes;
  std::uint64_t seed = 2024;
  // Fraction of rows deliberately violating an exclusion rule (minor or
  // diabetic), for exercising the exclusion pipeline. 0 yields an all-eligible cohort.
  double ineligible_fraction = 0.0;
  // Fraction of rows with one lab value blanked out.
  double missing_lab_fraction = 0.0;
  // Scale on the latent TG/HDL noise; 1 is the documented default.
  double lipid_noise = 1.0;
};

std::vector<ParticipantRecord> generate_cohort(const CohortOptions& opt);

}  // namespace irkit::synth
