#include "irkit/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "irkit/numcore/rng.hpp"

namespace irkit::synth {
namespace {

double clamp(double v, double lo, double hi) { return std::min(std::max(v, lo), hi); }

Race draw_race(num::Rng& rng) {
  // Category shares of the development cohort.
  const double u = rng.uniform();
  if (u < 0.1728) return Race::MexicanAmerican;
  if (u < 0.1728 + 0.0848) return Race::OtherHispanic;
  if (u < 0.1728 + 0.0848 + 0.4402) return Race::NonHispanicWhite;
  if (u < 0.1728 + 0.0848 + 0.4402 + 0.1999) return Race::NonHispanicBlack;
  return Race::OtherMulti;
}

}  // namespace

std::vector<ParticipantRecord> generate_cohort(const CohortOptions& opt) {
  num::Rng rng(opt.seed);
  const bool charls = opt.source == Source::Charls;
  const std::string prefix = charls ? "C" : "N";
  std::vector<ParticipantRecord> out;
  out.reserve(opt.n);
  for (std::size_t i = 0; i < opt.n; ++i) {
    ParticipantRecord r;
    r.id = prefix + std::to_string(i + 1);
    r.source = opt.source;
    r.sex = rng.uniform() < 0.52 ? Sex::Female : Sex::Male;
    const double male = *r.sex == Sex::Male ? 1.0 : 0.0;
    r.race = charls ? Race::OtherMulti : draw_race(rng);
    const double race_shift = (*r.race == Race::NonHispanicBlack)  ? 1.2
                              : (*r.race == Race::MexicanAmerican) ? 0.8
                                                                  : 0.0;

    const double age = charls ? clamp(rng.normal(60.0, 9.9), 45.0, 95.0)
                              : clamp(rng.normal(47.0, 18.0), 18.0, 85.0);
    r.age = std::round(age);
    const double height = clamp(rng.normal(male > 0 ? 175.0 : 162.0, 7.0), 140.0, 205.0);
    const double bmi_mean = charls ? 23.8 : 28.4 + race_shift;
    const double bmi = clamp(rng.normal(bmi_mean, charls ? 3.8 : 6.3), 15.0, 60.0);
    r.height_cm = height;
    r.bmi = bmi;
    r.weight_kg = bmi * (height / 100.0) * (height / 100.0);
    r.waist_cm = clamp(35.0 + 2.2 * bmi + 5.0 * male + 0.08 * (age - 47.0) + rng.normal(0, 6.0),
                       55.0, 180.0);
    r.pulse = clamp(rng.normal(71.0 + 0.1 * (bmi - 28.0), 11.5), 40.0, 130.0);
    r.systolic = clamp(100.0 + 0.45 * age + 0.35 * (bmi - 28.0) + 4.0 * male + rng.normal(0, 14.0),
                       80.0, 220.0);
    r.diastolic = clamp(58.0 + 0.4 * (bmi - 28.0) + 0.1 * age + 2.0 * male + rng.normal(0, 10.0),
                        40.0, 130.0);
    const double fpg = clamp(88.0 + 0.15 * (age - 47.0) + 0.6 * (bmi - 28.0) + 3.0 * male +
                                 rng.normal(0, 10.0),
                             65.0, 125.0);
    r.fpg_mg_dl = fpg;

    // Latent lipids: log-normal, driven by adiposity and glucose plus noise.
    const double ln_tg = 4.62 + 0.025 * (bmi - 28.0) + 0.006 * (*r.waist_cm - 97.0) +
                         0.004 * (fpg - 100.0) + 0.1 * male + (charls ? 0.15 : 0.0) +
                         opt.lipid_noise * rng.normal(0, 0.40);
    const double ln_hdl = 3.97 - 0.010 * (bmi - 28.0) - 0.003 * (*r.waist_cm - 97.0) -
                          0.15 * male + opt.lipid_noise * rng.normal(0, 0.18);
    r.tg_mg_dl = clamp(std::exp(ln_tg), 25.0, 1200.0);
    r.hdl_mg_dl = clamp(std::exp(ln_hdl), 15.0, 150.0);
    if (!charls) {
      const double ln_ins = 2.25 + 0.055 * (bmi - 28.0) + 0.008 * (*r.waist_cm - 97.0) +
                            0.012 * (fpg - 100.0) + rng.normal(0, 0.45);
      r.insulin_uU_ml = clamp(std::exp(ln_ins), 1.0, 150.0);
    }

    if (opt.ineligible_fraction > 0.0 && rng.uniform() < opt.ineligible_fraction) {
      if (rng.uniform() < 0.5) {
        r.age = 12.0 + static_cast<double>(rng.below(6));
      } else {
        r.diabetes = true;
      }
    }
    if (opt.missing_lab_fraction > 0.0 && rng.uniform() < opt.missing_lab_fraction) {
      switch (rng.below(3)) {
        case 0:
          r.tg_mg_dl.reset();
          break;
        case 1:
          r.hdl_mg_dl.reset();
          break;
        default:
          r.insulin_uU_ml.reset();
          break;
      }
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace irkit::synth
