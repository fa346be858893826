#include "cfseg/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "json.hpp"

namespace cfseg {

std::optional<double> dice(const LabelVolume& pred, const LabelVolume& gt, OrganId organ) {
  if (!(pred.dims == gt.dims)) fail(ErrorCode::kShapeMismatch, "prediction and ground truth dims differ");
  const auto id = static_cast<std::uint8_t>(organ.value());
  const auto p = (pred.voxels == id);
  const auto g = (gt.voxels == id);
  const Index gsize = g.count();
  if (gsize == 0) return std::nullopt;
  const Index psize = p.count();
  const Index both = (p && g).count();
  return 2.0 * static_cast<double>(both) / static_cast<double>(psize + gsize);
}

CaseScores evaluate_case(const std::string& case_id, const LabelVolume& pred, const LabelVolume& gt) {
  CaseScores s;
  s.case_id = case_id;
  for (int o = 1; o <= kNumOrgans; ++o) s.dice[static_cast<std::size_t>(o - 1)] = dice(pred, gt, OrganId(o));
  return s;
}

CohortReport aggregate(std::span<const CaseScores> cohort) {
  if (cohort.empty()) fail(ErrorCode::kEmptyInput, "cannot aggregate an empty cohort");
  CohortReport r;
  r.cases = static_cast<int>(cohort.size());
  double total = 0.0;
  int organs_with_data = 0;
  for (std::size_t o = 0; o < static_cast<std::size_t>(kNumOrgans); ++o) {
    double sum = 0.0;
    int n = 0;
    for (const CaseScores& c : cohort)
      if (c.dice[o]) {
        sum += *c.dice[o];
        ++n;
      }
    if (n == 0) continue;
    OrganSummary s;
    s.count = n;
    s.mean = sum / n;
    double sq = 0.0;
    for (const CaseScores& c : cohort)
      if (c.dice[o]) sq += (*c.dice[o] - s.mean) * (*c.dice[o] - s.mean);
    s.std = std::sqrt(sq / n);
    r.organs[o] = s;
    total += s.mean;
    ++organs_with_data;
  }
  if (organs_with_data > 0) r.average = total / organs_with_data;
  return r;
}

std::string_view organ_column(OrganId organ) {
  static constexpr std::array<std::string_view, kNumOrgans> kColumns = {
      "Spleen", "RKid", "LKid", "Gall", "Eso", "Liver", "Stomach", "Aorta", "IVC", "PSV", "Pancreas", "RAD", "LAD"};
  return kColumns[static_cast<std::size_t>(organ.value() - 1)];
}

std::string CohortReport::to_table(const std::string& method) const {
  std::ostringstream out;
  out << "method";
  for (int o = 1; o <= kNumOrgans; ++o) out << '\t' << organ_column(OrganId(o));
  out << "\tAVG\n" << method;
  char buf[32];
  for (const auto& s : organs) {
    if (s) {
      std::snprintf(buf, sizeof(buf), "%.3f", s->mean);
      out << '\t' << buf;
    } else {
      out << "\tNA";
    }
  }
  if (average) {
    std::snprintf(buf, sizeof(buf), "%.3f", *average);
    out << '\t' << buf << '\n';
  } else {
    out << "\tNA\n";
  }
  return out.str();
}

std::string CohortReport::to_json() const {
  nlohmann::json j;
  j["cases"] = cases;
  j["organs"] = nlohmann::json::array();
  for (int o = 1; o <= kNumOrgans; ++o) {
    const auto& s = organs[static_cast<std::size_t>(o - 1)];
    nlohmann::json e{{"organ", o}, {"name", OrganId(o).name()}};
    if (s) {
      e["count"] = s->count;
      e["mean"] = s->mean;
      e["std"] = s->std;
    } else {
      e["count"] = 0;
      e["mean"] = nullptr;
      e["std"] = nullptr;
    }
    j["organs"].push_back(e);
  }
  j["average"] = average ? nlohmann::json(*average) : nlohmann::json(nullptr);
  return j.dump(2) + "\n";
}

}  // namespace cfseg
