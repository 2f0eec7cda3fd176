#pragma once

// Per-sequence smoothing results stored in the shared container format:
// "lengths", "prior_mean", "prior_var", "posterior_mean" are stacked (sum T) x m,
// "posterior_cov" is (sum T) x (m*m) with each covariance row-major.

#include <filesystem>
#include <vector>

#include "dns/container.hpp"
#include "dns/smoother.hpp"

namespace dns {

inline constexpr int kSmoothingDumpFormatVersion = 1;

Container smoothing_results_to_container(const std::vector<SmoothingResult>& results,
                                         nlohmann::json meta = nlohmann::json::object());
std::vector<SmoothingResult> smoothing_results_from_container(const Container& c);

void write_smoothing_results(const std::filesystem::path& path,
                             const std::vector<SmoothingResult>& results,
                             nlohmann::json meta = nlohmann::json::object());
std::vector<SmoothingResult> read_smoothing_results(const std::filesystem::path& path);

}  // namespace dns
