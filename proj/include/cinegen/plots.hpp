#pragma once

// Normalized volume-curve figures: CSV table plus a static SVG with the mean
// curve, inter-quartile band and individual curves per cohort.

#include <filesystem>
#include <string>
#include <vector>

namespace cinegen {

struct CurveCohort {
  std::string name;
  std::vector<std::vector<double>> curves;  // equal length
};

struct CurveSummary {
  std::vector<double> mean, q25, q75;
};

/// Pointwise mean and linear-interpolated quartiles.
CurveSummary summarize_curves(const std::vector<std::vector<double>>& curves);

/// Columns: cohort, curve, frame, value, mean, q25, q75; one row per curve
/// point, so n_curves × T rows after the header.
void write_curves_csv(const std::filesystem::path& path, const std::vector<CurveCohort>& cohorts);
void write_curves_svg(const std::filesystem::path& path, const std::vector<CurveCohort>& cohorts);

void emit_plots(const std::vector<CurveCohort>& cohorts, const std::filesystem::path& csv,
                const std::filesystem::path& svg);

}  // namespace cinegen
