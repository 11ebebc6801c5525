#pragma once

// TrainingCurve CSV and FitResult JSON.
//
// CSV: header `compute,reward[,step]`, `#` comment lines ignored.
// JSON: {"model": "sigmoid"|"powerlaw", "R0", "A", "B", "Cmid", "D", "ssr",
//        "window": [lo, hi], "n_points", "grid_best"}; parameters that do not
// apply to the model are null.

#include <filesystem>
#include <iosfwd>
#include <string>

#include <json.hpp>

#include "scalerl/scaling_law.hpp"

namespace scalerl {

/// Parses and validates a curve. Malformed input raises InputError naming
/// the offending line and column; out-of-range rewards are all listed.
/// A file with no rows at all, header included, reads as an empty curve.
TrainingCurve read_training_curve(std::istream& in, const std::string& label = {});
TrainingCurve read_training_curve(const std::filesystem::path& path);

void write_training_curve(std::ostream& out, const TrainingCurve& curve);
void write_training_curve(const std::filesystem::path& path, const TrainingCurve& curve);

nlohmann::json to_json(const FitResult& fit);
FitResult fit_result_from_json(const nlohmann::json& j);

/// Shortest round-trippable decimal form of a double.
std::string format_double(double v);

}  // namespace scalerl
