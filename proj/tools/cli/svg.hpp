#pragma once

#include <string>

#include "scalerl/scaling_law.hpp"

namespace scalerl::cli {

/// Log-compute plot of the observed points with the fitted curve drawn solid
/// over the fit window and dashed from the window's end to `extend_to`.
/// The data and the fit parameters are repeated in XML comments.
std::string render_fit_svg(const TrainingCurve& data, const FitResult& fit, double extend_to);

}  // namespace scalerl::cli
