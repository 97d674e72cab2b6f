#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "lowpass/autograd.hpp"
#include "lowpass/spectral.hpp"

namespace lowpass {

enum class FilterKind { binomial, ideal };

std::string_view to_string(FilterKind k);
FilterKind filter_from_string(std::string_view s);

/// Power-iteration state for one convolution. `coefficient` empty means the
/// kernel is left unregularized.
struct SpectralNormState {
    std::optional<double> coefficient;
    Tensor u_vec;  // shaped like one input item [1,Cin,H,W]
    int n_iters = 1;
    double sigma_hat = 0.0;

    static SpectralNormState make(std::optional<double> coefficient, const Shape& input_shape, Rng& rng,
                                  int n_iters = 1);
};

/// Runs state.n_iters power iterations v <- normalize(K^T K v) and returns
/// sigma_hat = |K v| for unit v. Each iterate is a lower bound on the operator
/// norm and never decreases.
double estimate_sigma(const Tensor& kernel, SpectralNormState& state, Padding padding = Padding::same_circular);

/// kernel * min(1, c / sigma_hat); unchanged when no coefficient is set.
Tensor apply_spectral_norm(const Tensor& kernel, const SpectralNormState& state);

/// Fresh estimate of the conv operator norm on `input_shape` from a seeded start.
double conv_operator_norm(const Tensor& kernel, const Shape& input_shape, Padding padding, int iters,
                          std::uint64_t seed = 0x5eed);

/// Distance distortion bounds L1 * d <= d' <= L2 * d.
struct BiLipschitzBounds {
    double lower = 0.0;
    double upper = 0.0;

    /// The bounds usually quoted for f = x + g(x) with lip(g) = L < 1:
    /// 1/(1+L) and 1+L.
    static BiLipschitzBounds residual_stated(double branch_lipschitz);
    /// The bounds that follow from the triangle inequality: 1-L and 1+L.
    static BiLipschitzBounds residual_guaranteed(double branch_lipschitz);

    bool contains(double ratio, double tol = 1e-12) const {
        return ratio >= lower - tol && ratio <= upper + tol;
    }
};

/// Depthwise anti-alias filter followed by decimation. `ideal` uses the exact
/// low-pass with the cutoff from FrequencyBudget{N, s}; `binomial` uses the
/// 3x3 (1/16)[1,2,1]x[1,2,1] kernel. Both have unit DC gain.
Tensor blurpool(const Tensor& x, std::size_t s, FilterKind kind);
Var blurpool(Var x, std::size_t s, FilterKind kind);
std::size_t blurpool_cutoff(std::size_t extent, std::size_t s);

/// Appends zero channels to x[B,C,H,W]; an isometry.
Tensor zero_pad_channels(const Tensor& x, std::size_t channels);

struct ResidualBlockSpec {
    std::size_t in_channels = 1;
    std::size_t out_channels = 1;
    std::size_t stride = 1;
    std::optional<double> coefficient;
};

struct NetworkSpec {
    std::size_t in_channels = 1;
    std::size_t image_size = 16;
    std::vector<ResidualBlockSpec> blocks;
    bool batchnorm_between = true;
    bool interblock_lowpass = false;
    FilterKind filter = FilterKind::ideal;
    Padding padding = Padding::same_circular;
    std::size_t num_classes = 2;  // 0: no classifier head
    int power_iterations = 1;

    /// Four blocks with strides (1,2,1,2) and channels 1->4->8->8->16.
    static NetworkSpec toy(std::optional<double> coefficient, std::size_t in_channels = 1);

    std::size_t total_downsampling() const;
    /// Spatial extent entering block i (i == blocks.size() gives the output).
    std::size_t resolution(std::size_t i) const;
    /// Downsampling still to come when entering block i.
    std::size_t remaining_downsampling(std::size_t i) const;
    FrequencyBudget budget_before(std::size_t i) const;
    FrequencyBudget budget_after(std::size_t i) const;
    Shape feature_shape() const;
    void validate() const;
};

nlohmann::json to_json(const NetworkSpec& spec);
NetworkSpec network_spec_from_json(const nlohmann::json& j);

/// f(x) = skip(x) + g(x) with g = conv3x3 -> relu -> [blurpool] -> conv3x3.
/// The skip is the identity, or s * blurpool followed by zero channel padding;
/// with the ideal filter the gain s makes it norm-preserving on the kept band.
class ResidualBlock {
public:
    ResidualBlock(ResidualBlockSpec spec, std::size_t in_resolution, FilterKind filter, Padding padding);

    const ResidualBlockSpec& spec() const noexcept { return spec_; }
    std::size_t in_resolution() const noexcept { return in_res_; }
    std::size_t out_resolution() const noexcept { return in_res_ / spec_.stride; }
    Shape input_shape(std::size_t batch = 1) const;
    Shape output_shape(std::size_t batch = 1) const;
    bool dimension_preserving() const noexcept {
        return spec_.stride == 1 && spec_.in_channels == spec_.out_channels;
    }

    Tensor conv1;
    Tensor conv2;
    SpectralNormState norm1;
    SpectralNormState norm2;

    Var skip(Var x) const;
    Var branch(Var x, Var k1, Var k2) const;
    Var forward(Var x, Var k1, Var k2) const;

    Tensor skip(const Tensor& x) const;
    Tensor branch(const Tensor& x) const;
    Tensor forward(const Tensor& x) const;

    /// Product of freshly estimated conv operator norms (relu and the
    /// anti-alias filter are 1-Lipschitz).
    double branch_lipschitz(int iters = 200) const;
    /// One power-iteration update per conv, then soft normalization.
    void renormalize();

private:
    ResidualBlockSpec spec_;
    std::size_t in_res_;
    FilterKind filter_;
    Padding padding_;
};

struct BlockTap {
    Var input;
    Var output;  // post-residual, before any inter-block low-pass or BatchNorm
};

struct ForwardResult {
    Var features;
    std::optional<Var> logits;
    std::vector<BlockTap> taps;
};

struct FixedPointResult {
    Tensor x;
    int iterations = 0;
    double residual = 0.0;
};

/// Recover x from y = x + g(x) by x <- y - g(x); needs a dimension-preserving block.
FixedPointResult invert_block(const ResidualBlock& block, const Tensor& y, int max_iters = 100, double tol = 1e-12);

class Network {
public:
    /// Kaiming-normal conv init, then soft normalization to each block's
    /// coefficient using a 200-iteration estimate.
    Network(NetworkSpec spec, Rng& rng);

    const NetworkSpec& spec() const noexcept { return spec_; }
    std::size_t num_blocks() const noexcept { return blocks_.size(); }
    ResidualBlock& block(std::size_t i) { return blocks_.at(i); }
    const ResidualBlock& block(std::size_t i) const { return blocks_.at(i); }

    struct NamedParam {
        std::string name;
        Tensor* value;
    };
    std::vector<NamedParam> parameters();
    std::vector<BatchNormState>& batchnorm_states() noexcept { return bn_states_; }
    const std::vector<BatchNormState>& batchnorm_states() const noexcept { return bn_states_; }
    const Tensor& batchnorm_gamma(std::size_t i) const { return bn_gamma_.at(i); }

    /// Training-capable forward. When `param_vars` is given the parameters
    /// become gradient leaves, listed in parameters() order.
    ForwardResult forward(Graph& g, Var x, BatchNormMode mode, std::vector<Var>* param_vars = nullptr);
    /// Eval-mode forward with frozen parameters; safe to call concurrently.
    ForwardResult forward(Graph& g, Var x) const;

    Tensor features(const Tensor& x) const;
    VarFn feature_map() const;

    void renormalize();
    void set_interblock_lowpass(bool on) noexcept { spec_.interblock_lowpass = on; }
    /// Zero every conv kernel inside the residual branches.
    void zero_branches();

    void save(const std::filesystem::path& dir) const;
    static Network load(const std::filesystem::path& network_json);

private:
    ForwardResult run(Graph& g, Var x, BatchNormMode mode, std::vector<BatchNormState>& states,
                      const std::vector<Var>& params) const;
    std::vector<const Tensor*> parameter_values() const;

    NetworkSpec spec_;
    std::vector<ResidualBlock> blocks_;
    std::vector<Tensor> bn_gamma_, bn_beta_;
    std::vector<BatchNormState> bn_states_;
    Tensor head_w_, head_b_;
};

}  // namespace lowpass
