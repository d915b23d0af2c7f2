#pragma once

#include <string_view>

namespace irkit {

enum class IndexKind { HomaIr, Tyg, MetsIr };

struct IndexValue {
  IndexKind kind;
  double value;
};

struct IrLabel {
  IndexKind kind;
  bool positive;
};

// Cut-offs defining insulin resistance for each surrogate index. A value equal
// to the threshold is classified as negative.
constexpr double kHomaIrThreshold = 2.5;
constexpr double kTygThreshold = 8.85;
constexpr double kMetsIrThreshold = 41.33;

constexpr double kGlucoseMgPerMmol = 18.0;
constexpr double kGlucoseMgPerMmolPrecise = 18.016;

double threshold(IndexKind kind);
std::string_view to_string(IndexKind kind);
IndexKind index_kind_from_string(std::string_view name);

/// HOMA-IR = FPG[mmol/L] * insulin[mIU/L] / 22.5.
IndexValue homa_ir(double fpg_mmol_per_l, double insulin_miu_per_l);

/// TyG = ln(TG * FPG / 2), both in mg/dL.
IndexValue tyg(double tg_mg_per_dl, double fpg_mg_per_dl);

/// METS-IR = ln(2 * FPG + TG) * BMI / ln(HDL-C), lipids and glucose in mg/dL.
/// HDL-C must exceed 1 mg/dL, otherwise the denominator vanishes or flips sign.
IndexValue mets_ir(double fpg_mg_per_dl, double tg_mg_per_dl, double bmi_kg_per_m2,
                   double hdl_mg_per_dl);

IrLabel classify(const IndexValue& idx);

double glucose_mgdl_to_mmol(double fpg_mg_per_dl, double mg_per_mmol = kGlucoseMgPerMmol);

double bmi(double weight_kg, double height_cm);

}  // namespace irkit
