#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "lowpass/autograd.hpp"
#include "lowpass/spectral.hpp"

namespace lowpass {

enum class DirectionBand { all, low, high };
enum class SearchAlgorithm { level_set, null_space };

std::string_view to_string(DirectionBand b);
DirectionBand band_from_string(std::string_view s);
std::string_view to_string(SearchAlgorithm a);
SearchAlgorithm algorithm_from_string(std::string_view s);

struct SearchConfig {
    double eta = 0.01;
    std::size_t n_steps = 1000;
    /// Defaults to 1e-3 * |x0|.
    std::optional<double> eps_init;
    DirectionBand band = DirectionBand::all;
    /// Cutoff separating the low and high bands of the input.
    std::size_t band_u = 0;
    std::uint64_t seed = 0;
    SearchAlgorithm algorithm = SearchAlgorithm::level_set;
    /// After each step, one Newton-type correction back to the starting
    /// level of |f(x) - y0|.
    bool retraction = false;
    /// Flip steps that point against a fixed reference direction drawn once.
    bool non_cancelling = false;
    double rank_tol = 1e-8;

    void validate() const;
};

nlohmann::json to_json(const SearchConfig& c);
SearchConfig search_config_from_json(const nlohmann::json& j, SearchConfig base = {});

struct TrajectoryRecord {
    std::vector<std::size_t> step;
    std::vector<double> input_dist;  // |x - x0|
    std::vector<double> feat_dist;   // |f(x) - y0|
    std::vector<double> low_dist;    // |H_u(x - x0)|
    std::vector<double> high_dist;   // |(I - H_u)(x - x0)|
    std::vector<double> step_length;
    /// |<u, g>| / (|u| |g|) for every projected level-set step.
    std::vector<double> orthogonality;
    std::size_t zero_gradient_steps = 0;
    std::string status = "ok";
    Tensor final_x;

    double final_input_dist() const { return input_dist.empty() ? 0.0 : input_dist.back(); }
    double final_feat_dist() const { return feat_dist.empty() ? 0.0 : feat_dist.back(); }
};

/// White noise, optionally projected onto the low band (H_u) or its
/// complement, normalized to unit length.
Tensor sample_direction(const Shape& shape, DirectionBand band, std::size_t u, Rng& rng);

/// Walk along the level set of |f(x) - y0| by projecting random steps
/// orthogonal to its gradient.
TrajectoryRecord level_set_walk(const VarFn& f, const Tensor& x0, const SearchConfig& config);

/// Walk inside the numerical null space of the Jacobian of f.
TrajectoryRecord null_space_walk(const VarFn& f, const Tensor& x0, const SearchConfig& config);

TrajectoryRecord run_search(const VarFn& f, const Tensor& x0, const SearchConfig& config);

struct LabeledTrajectory {
    std::string variant;
    DirectionBand band = DirectionBand::all;
    const TrajectoryRecord* record = nullptr;
};

struct Quantiles {
    double mean = 0.0;
    double q25 = 0.0;
    double median = 0.0;
    double q75 = 0.0;
};

Quantiles quantiles(std::vector<double> values);

struct CollapseSummaryRow {
    std::string variant;
    DirectionBand band = DirectionBand::all;
    std::size_t count = 0;
    Quantiles input_dist;
    Quantiles feat_dist;
};

/// Final distances grouped by (variant, band), in first-seen order.
std::vector<CollapseSummaryRow> collapse_report(const std::vector<LabeledTrajectory>& trajectories);

void write_trajectory_csv(std::ostream& os, const TrajectoryRecord& r);
nlohmann::json to_json(const std::vector<CollapseSummaryRow>& rows);

}  // namespace lowpass
