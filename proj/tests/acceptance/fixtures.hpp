#pragma once

// Committed from `distill oracle fixtures` (seeds 0..19, listing defaults).
namespace distill::fixtures {

inline constexpr int kSeeds = 20;

// Pilot medians, kept for reference in the acceptance report.
inline constexpr double kPilotLvsdMedian = 1.07775;
inline constexpr double kPilotRealVsdMedian = 6.02079;
inline constexpr double kPilotRealVsdN4Median = 3.29161;
inline constexpr double kPilotMixtureLvsdMedian = 1.37312;
inline constexpr double kPilotMixtureOverfitMedian = 5.61484;

// Pass thresholds.
inline constexpr double kLvsdMedianThreshold = 1.5;
inline constexpr double kOverfitRatioThreshold = 2.0;
inline constexpr double kEnsembleSecondsBudget = 60.0;

}  // namespace distill::fixtures
