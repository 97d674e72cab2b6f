#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "lowpass/nn.hpp"

namespace lowpass {

enum class ContractionVariant { as_written, lowpassed_output };
enum class DominanceMode { per_item, pairwise_difference };

std::string_view to_string(ContractionVariant v);
std::string_view to_string(DominanceMode m);

/// Lhs and rhs count as satisfying lhs <= rhs when within 1e-12 (relative
/// for rhs > 1).
bool contraction_holds(double lhs, double rhs);

struct ContractionCount {
    std::size_t satisfied = 0;
    std::size_t evaluated = 0;   // non-degenerate pairs
    std::size_t degenerate = 0;  // pairs with |H_u(x_i) - H_u(x_j)| = 0
    double max_ratio = 0.0;      // largest lhs/rhs seen

    double proportion() const {
        return evaluated == 0 ? 1.0 : static_cast<double>(satisfied) / static_cast<double>(evaluated);
    }
    std::size_t pairs() const noexcept { return evaluated + degenerate; }
};

struct CheckReport {
    std::size_t batch_size = 0;
    std::uint64_t seed = 0;
    DominanceMode dominance_mode = DominanceMode::per_item;
    /// Columns x, f1..fn: the input and the representation after each block.
    std::vector<std::string> layers;
    std::vector<std::size_t> layer_u;
    std::vector<double> dominance;
    /// One entry per block.
    std::vector<std::size_t> block_u;
    std::vector<ContractionCount> contraction_as_written;
    std::vector<ContractionCount> contraction_lowpassed;

    const std::vector<ContractionCount>& contraction(ContractionVariant v) const {
        return v == ContractionVariant::as_written ? contraction_as_written : contraction_lowpassed;
    }
};

/// Representations the analysis looks at: the batch, the input to every
/// later block (after any inter-block low-pass and BatchNorm) and the final
/// features. Eval mode.
std::vector<Tensor> layer_representations(const Network& net, const Tensor& batch);

/// Fraction of items (or of pairwise differences) that are low-band dominant
/// at every layer's cutoff.
std::vector<double> check_dominance_over_batch(const Network& net, const Tensor& batch,
                                               DominanceMode mode = DominanceMode::per_item);

/// Per block, counts pairs with |g(H_u z_i) - g(H_u z_j)| <= |H_u z_i - H_u z_j|
/// where z is the block input; `lowpassed_output` applies H_u to the branch
/// outputs first.
std::vector<ContractionCount> check_contraction_over_batch(const Network& net, const Tensor& batch,
                                                           ContractionVariant variant);

/// Both contraction variants and the dominance proportions in one report.
CheckReport run_checks(const Network& net, const Tensor& batch, std::uint64_t seed = 0,
                       DominanceMode mode = DominanceMode::per_item);

enum class BoundStatus { pass, fail, precondition_unmet };
std::string_view to_string(BoundStatus s);

struct BoundCheck {
    BoundStatus status = BoundStatus::precondition_unmet;
    double ratio = 0.0;  // |H_u f(x) - H_u f(y)| / |H_u x - H_u y|
    double bound = 0.0;  // 1 - L
};

/// Checks |H_u(f(x)) - H_u(f(y))| >= (1 - L) |H_u(x) - H_u(y)| for a single
/// block, provided x - y is low-band dominant at u.
BoundCheck theorem2_bound_check(const ResidualBlock& block, const Tensor& x, const Tensor& y, std::size_t u,
                                double branch_lipschitz);

struct ReluContraction {
    double lhs = 0.0;  // |H_u(relu(x) - relu(y))|
    double rhs = 0.0;  // |H_u(x) - H_u(y)|
    bool dominant = false;
    bool holds() const { return contraction_holds(lhs, rhs); }
};

/// Low-band distance before and after a pointwise ReLU.
ReluContraction relu_lowband_check(const Tensor& x, const Tensor& y, std::size_t u);

/// Lower constant for the low band through the whole network: the product of
/// (1 - L_i) over blocks (0 once some L_i >= 1) times the smallest eval-mode
/// BatchNorm gain |gamma| / sqrt(var + eps) of each inter-block BatchNorm.
double chain_lower_constant(const Network& net, int iters = 200);

nlohmann::json to_json(const CheckReport& r);

/// One table row: a condition evaluated at one coefficient, with the
/// mean and standard error over replicates for every column (NaN = empty).
struct TableRow {
    std::string condition;
    std::string coefficient;
    std::vector<double> mean;
    std::vector<double> stderr_;
};

/// Aggregate replicate reports into lemma1 / theorem2 / theorem2-lowpassed rows.
std::vector<TableRow> summarize(const std::vector<CheckReport>& reports, const std::string& coefficient);

void write_table_csv(std::ostream& os, const std::vector<std::string>& columns, const std::vector<TableRow>& rows);

}  // namespace lowpass
