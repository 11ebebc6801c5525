#pragma once

namespace scalerl {

// Selects between the serial reference kernels and their OpenMP versions.
// Both produce bit-identical results; the serial path is kept for testing.
enum class Exec { serial, parallel };

bool openmp_enabled() noexcept;
int max_threads() noexcept;

}  // namespace scalerl
