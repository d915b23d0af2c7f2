#include "irkit/indices.hpp"

#include <cmath>
#include <string>

#include "irkit/errors.hpp"

namespace irkit {
namespace {

void require_finite(double v, const char* name) {
  if (!std::isfinite(v)) {
    throw DomainError(std::string(name) + " must be finite");
  }
}

void require_nonnegative(double v, const char* name) {
  require_finite(v, name);
  if (v < 0.0) {
    throw DomainError(std::string(name) + " must be >= 0, got " + std::to_string(v));
  }
}

void require_positive(double v, const char* name) {
  require_finite(v, name);
  if (!(v > 0.0)) {
    throw DomainError(std::string(name) + " must be > 0, got " + std::to_string(v));
  }
}

}  // namespace

double threshold(IndexKind kind) {
  switch (kind) {
    case IndexKind::HomaIr:
      return kHomaIrThreshold;
    case IndexKind::Tyg:
      return kTygThreshold;
    case IndexKind::MetsIr:
      return kMetsIrThreshold;
  }
  throw DomainError("unknown index kind");
}

std::string_view to_string(IndexKind kind) {
  switch (kind) {
    case IndexKind::HomaIr:
      return "HOMA-IR";
    case IndexKind::Tyg:
      return "TyG";
    case IndexKind::MetsIr:
      return "METS-IR";
  }
  return "?";
}

IndexKind index_kind_from_string(std::string_view name) {
  if (name == "HOMA-IR" || name == "homa" || name == "homa-ir") return IndexKind::HomaIr;
  if (name == "TyG" || name == "tyg") return IndexKind::Tyg;
  if (name == "METS-IR" || name == "mets" || name == "mets-ir") return IndexKind::MetsIr;
  throw DomainError("unknown index kind '" + std::string(name) + "'");
}

IndexValue homa_ir(double fpg_mmol_per_l, double insulin_miu_per_l) {
  require_nonnegative(fpg_mmol_per_l, "fpg_mmol_per_l");
  require_nonnegative(insulin_miu_per_l, "insulin_miu_per_l");
  return {IndexKind::HomaIr, fpg_mmol_per_l * insulin_miu_per_l / 22.5};
}

IndexValue tyg(double tg_mg_per_dl, double fpg_mg_per_dl) {
  require_positive(tg_mg_per_dl, "tg_mg_per_dl");
  require_positive(fpg_mg_per_dl, "fpg_mg_per_dl");
  return {IndexKind::Tyg, std::log(tg_mg_per_dl * fpg_mg_per_dl / 2.0)};
}

IndexValue mets_ir(double fpg_mg_per_dl, double tg_mg_per_dl, double bmi_kg_per_m2,
                   double hdl_mg_per_dl) {
  require_finite(fpg_mg_per_dl, "fpg_mg_per_dl");
  require_finite(tg_mg_per_dl, "tg_mg_per_dl");
  require_positive(bmi_kg_per_m2, "bmi_kg_per_m2");
  require_finite(hdl_mg_per_dl, "hdl_mg_per_dl");
  if (!(hdl_mg_per_dl > 1.0)) {
    throw DomainError("hdl_mg_per_dl must be > 1 (ln(HDL-C) singular at 1), got " +
                      std::to_string(hdl_mg_per_dl));
  }
  const double glucose_lipid = 2.0 * fpg_mg_per_dl + tg_mg_per_dl;
  if (!(glucose_lipid > 0.0)) {
    throw DomainError("2*fpg_mg_per_dl + tg_mg_per_dl must be > 0");
  }
  return {IndexKind::MetsIr,
          std::log(glucose_lipid) * bmi_kg_per_m2 / std::log(hdl_mg_per_dl)};
}

IrLabel classify(const IndexValue& idx) {
  require_finite(idx.value, "index value");
  return {idx.kind, idx.value > threshold(idx.kind)};
}

double glucose_mgdl_to_mmol(double fpg_mg_per_dl, double mg_per_mmol) {
  require_nonnegative(fpg_mg_per_dl, "fpg_mg_per_dl");
  require_positive(mg_per_mmol, "mg_per_mmol");
  return fpg_mg_per_dl / mg_per_mmol;
}

double bmi(double weight_kg, double height_cm) {
  require_positive(weight_kg, "weight_kg");
  require_positive(height_cm, "height_cm");
  const double metres = height_cm / 100.0;
  return weight_kg / (metres * metres);
}

}  // namespace irkit
