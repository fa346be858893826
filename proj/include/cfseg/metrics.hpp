#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>

#include "cfseg/volume.hpp"

namespace cfseg {

/// 2|P & G| / (|P| + |G|) for one organ; nullopt (excluded) when the organ is
/// absent from the ground truth.
std::optional<double> dice(const LabelVolume& pred, const LabelVolume& gt, OrganId organ);

struct CaseScores {
  std::string case_id;
  std::array<std::optional<double>, kNumOrgans> dice;  // organ order 1..13
};

CaseScores evaluate_case(const std::string& case_id, const LabelVolume& pred, const LabelVolume& gt);

struct OrganSummary {
  int count = 0;
  double mean = 0.0;
  double std = 0.0;  // population
};

struct CohortReport {
  int cases = 0;
  std::array<std::optional<OrganSummary>, kNumOrgans> organs;  // nullopt: no data
  std::optional<double> average;                               // mean of per-organ means

  /// Tab-separated table: header row with organ columns 1..13 then AVG, one
  /// row of means labelled `method`. Missing data prints as "NA".
  std::string to_table(const std::string& method) const;
  /// Structured text for programmatic diffing.
  std::string to_json() const;
};

CohortReport aggregate(std::span<const CaseScores> cohort);

/// Short column headers in organ order (Spleen, RKid, ...).
std::string_view organ_column(OrganId organ);

}  // namespace cfseg
