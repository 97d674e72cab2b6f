#include "lowpass/nn.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

#include "lowpass/tensor_io.hpp"

namespace lowpass {

namespace {

Tensor eval_unary(const Tensor& x, const std::function<Var(Graph&, Var)>& f) {
    Graph g;
    return f(g, g.constant(x)).value();
}

void require_input_shape(const Shape& got, const Shape& expected, const char* op) {
    if (got.size() != 4) throw ShapeError(std::string(op) + ": input must be 4-D, got " + to_string(got));
    static const char* axes[] = {"batch", "channel", "height", "width"};
    for (std::size_t a = 1; a < 4; ++a) {
        if (got[a] != expected[a]) {
            throw ShapeError(std::string(op) + ": " + axes[a] + " axis (" + std::to_string(a) + ") is " +
                             std::to_string(got[a]) + ", expected " + std::to_string(expected[a]));
        }
    }
}

}  // namespace

std::string_view to_string(FilterKind k) { return k == FilterKind::ideal ? "ideal" : "binomial"; }

FilterKind filter_from_string(std::string_view s) {
    if (s == "ideal") return FilterKind::ideal;
    if (s == "binomial") return FilterKind::binomial;
    throw std::invalid_argument("unknown filter kind '" + std::string(s) + "' (expected ideal or binomial)");
}

SpectralNormState SpectralNormState::make(std::optional<double> coefficient, const Shape& input_shape, Rng& rng,
                                          int n_iters) {
    SpectralNormState s;
    s.coefficient = coefficient;
    s.u_vec = Tensor::randn(input_shape, rng);
    s.n_iters = n_iters;
    return s;
}

double estimate_sigma(const Tensor& kernel, SpectralNormState& state, Padding padding) {
    if (state.n_iters < 1) throw std::invalid_argument("estimate_sigma: n_iters must be at least 1");
    const double un = l2norm(state.u_vec);
    if (!(un > 0.0)) throw std::invalid_argument("estimate_sigma: power-iteration vector is zero");
    Tensor v = state.u_vec * (1.0 / un);
    for (int it = 0; it < state.n_iters; ++it) {
        Tensor z = conv2d_adjoint(conv2d(v, kernel, 1, padding), kernel, v.shape(), 1, padding);
        const double zn = l2norm(z);
        if (zn == 0.0) {
            state.sigma_hat = 0.0;
            return 0.0;
        }
        v = z * (1.0 / zn);
    }
    state.u_vec = v;
    state.sigma_hat = l2norm(conv2d(v, kernel, 1, padding));
    return state.sigma_hat;
}

Tensor apply_spectral_norm(const Tensor& kernel, const SpectralNormState& state) {
    if (!state.coefficient || state.sigma_hat <= *state.coefficient) return kernel;
    return kernel * (*state.coefficient / state.sigma_hat);
}

double conv_operator_norm(const Tensor& kernel, const Shape& input_shape, Padding padding, int iters,
                          std::uint64_t seed) {
    Rng rng(seed);
    auto state = SpectralNormState::make(std::nullopt, input_shape, rng, iters);
    return estimate_sigma(kernel, state, padding);
}

BiLipschitzBounds BiLipschitzBounds::residual_stated(double L) { return {1.0 / (1.0 + L), 1.0 + L}; }

BiLipschitzBounds BiLipschitzBounds::residual_guaranteed(double L) { return {std::max(0.0, 1.0 - L), 1.0 + L}; }

std::size_t blurpool_cutoff(std::size_t extent, std::size_t s) { return FrequencyBudget{extent, s}.cutoff(); }

Var blurpool(Var x, std::size_t s, FilterKind kind) {
    const auto& xs = x.shape();
    if (xs.size() != 4) throw ShapeError("blurpool: input must be 4-D, got " + to_string(xs));
    if (s == 0 || xs[2] % s != 0 || xs[3] % s != 0) {
        throw ShapeError("blurpool: stride " + std::to_string(s) + " does not divide extents " + to_string(xs));
    }
    if (s == 1) return x;
    Var filtered = kind == FilterKind::ideal ? ops::lowpass(x, blurpool_cutoff(std::min(xs[2], xs[3]), s))
                                             : ops::binomial_blur(x);
    return ops::decimate(filtered, s);
}

Tensor blurpool(const Tensor& x, std::size_t s, FilterKind kind) {
    return eval_unary(x, [&](Graph&, Var v) { return blurpool(v, s, kind); });
}

Tensor zero_pad_channels(const Tensor& x, std::size_t channels) {
    return eval_unary(x, [&](Graph&, Var v) { return ops::zero_pad_channels(v, channels); });
}

// ---- specs ----

NetworkSpec NetworkSpec::toy(std::optional<double> coefficient, std::size_t in_channels) {
    NetworkSpec s;
    s.in_channels = in_channels;
    s.image_size = 16;
    s.blocks = {{in_channels, 4, 1, coefficient}, {4, 8, 2, coefficient}, {8, 8, 1, coefficient},
                {8, 16, 2, coefficient}};
    return s;
}

std::size_t NetworkSpec::total_downsampling() const { return remaining_downsampling(0); }

std::size_t NetworkSpec::resolution(std::size_t i) const {
    std::size_t n = image_size;
    for (std::size_t b = 0; b < i && b < blocks.size(); ++b) n /= blocks[b].stride;
    return n;
}

std::size_t NetworkSpec::remaining_downsampling(std::size_t i) const {
    std::size_t d = 1;
    for (std::size_t b = i; b < blocks.size(); ++b) d *= blocks[b].stride;
    return d;
}

FrequencyBudget NetworkSpec::budget_before(std::size_t i) const {
    return {resolution(i), remaining_downsampling(i)};
}

FrequencyBudget NetworkSpec::budget_after(std::size_t i) const {
    return {resolution(i + 1), remaining_downsampling(i + 1)};
}

Shape NetworkSpec::feature_shape() const {
    const std::size_t n = resolution(blocks.size());
    return {blocks.empty() ? in_channels : blocks.back().out_channels, n, n};
}

void NetworkSpec::validate() const {
    if (blocks.empty()) throw std::invalid_argument("network spec: no blocks");
    if (in_channels == 0) throw std::invalid_argument("network spec: in_channels must be positive");
    std::size_t c = in_channels, n = image_size;
    for (std::size_t i = 0; i < blocks.size(); ++i) {
        const auto& b = blocks[i];
        const std::string where = "network spec: block " + std::to_string(i);
        if (b.in_channels != c) {
            throw std::invalid_argument(where + " takes " + std::to_string(b.in_channels) + " channels but receives " +
                                        std::to_string(c));
        }
        if (b.out_channels < b.in_channels) throw std::invalid_argument(where + " shrinks the channel count");
        if (b.stride != 1 && b.stride != 2) throw std::invalid_argument(where + " stride must be 1 or 2");
        if (n % b.stride != 0) throw std::invalid_argument(where + " stride does not divide resolution");
        if (n < 3) throw std::invalid_argument(where + " resolution is below the 3x3 kernel");
        if (b.coefficient && !(*b.coefficient > 0.0)) throw std::invalid_argument(where + " coefficient must be > 0");
        c = b.out_channels;
        n /= b.stride;
    }
    if (power_iterations < 1) throw std::invalid_argument("network spec: power_iterations must be >= 1");
}

nlohmann::json to_json(const NetworkSpec& spec) {
    nlohmann::json blocks = nlohmann::json::array();
    for (const auto& b : spec.blocks) {
        nlohmann::json jb{{"in_channels", b.in_channels}, {"out_channels", b.out_channels}, {"stride", b.stride}};
        jb["coefficient"] = b.coefficient ? nlohmann::json(*b.coefficient) : nlohmann::json(nullptr);
        blocks.push_back(std::move(jb));
    }
    return {{"in_channels", spec.in_channels},
            {"image_size", spec.image_size},
            {"blocks", blocks},
            {"batchnorm_between", spec.batchnorm_between},
            {"interblock_lowpass", spec.interblock_lowpass},
            {"filter", std::string(to_string(spec.filter))},
            {"padding", std::string(to_string(spec.padding))},
            {"num_classes", spec.num_classes},
            {"power_iterations", spec.power_iterations}};
}

NetworkSpec network_spec_from_json(const nlohmann::json& j) {
    NetworkSpec s;
    try {
        s.in_channels = j.value("in_channels", s.in_channels);
        s.image_size = j.value("image_size", s.image_size);
        s.batchnorm_between = j.value("batchnorm_between", s.batchnorm_between);
        s.interblock_lowpass = j.value("interblock_lowpass", s.interblock_lowpass);
        s.filter = filter_from_string(j.value("filter", std::string("ideal")));
        s.padding = padding_from_string(j.value("padding", std::string("same-circular")));
        s.num_classes = j.value("num_classes", s.num_classes);
        s.power_iterations = j.value("power_iterations", s.power_iterations);
        for (const auto& jb : j.at("blocks")) {
            ResidualBlockSpec b;
            b.in_channels = jb.at("in_channels").get<std::size_t>();
            b.out_channels = jb.at("out_channels").get<std::size_t>();
            b.stride = jb.value("stride", std::size_t{1});
            if (jb.contains("coefficient") && !jb["coefficient"].is_null()) b.coefficient = jb["coefficient"].get<double>();
            s.blocks.push_back(b);
        }
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("network spec: ") + e.what());
    }
    s.validate();
    return s;
}

// ---- residual block ----

ResidualBlock::ResidualBlock(ResidualBlockSpec spec, std::size_t in_resolution, FilterKind filter, Padding padding)
    : conv1({spec.out_channels, spec.in_channels, 3, 3}),
      conv2({spec.out_channels, spec.out_channels, 3, 3}),
      spec_(spec),
      in_res_(in_resolution),
      filter_(filter),
      padding_(padding) {
    if (spec.stride == 0 || in_resolution % spec.stride != 0) {
        throw ShapeError("residual block: stride " + std::to_string(spec.stride) + " does not divide resolution " +
                         std::to_string(in_resolution));
    }
    Rng rng(0);
    norm1 = SpectralNormState::make(spec.coefficient, input_shape(), rng);
    norm2 = SpectralNormState::make(spec.coefficient, {1, spec.out_channels, out_resolution(), out_resolution()}, rng);
}

Shape ResidualBlock::input_shape(std::size_t batch) const { return {batch, spec_.in_channels, in_res_, in_res_}; }

Shape ResidualBlock::output_shape(std::size_t batch) const {
    return {batch, spec_.out_channels, out_resolution(), out_resolution()};
}

Var ResidualBlock::skip(Var x) const {
    require_input_shape(x.shape(), input_shape(), "residual block");
    Var y = x;
    if (spec_.stride > 1) y = ops::scale(blurpool(y, spec_.stride, filter_), static_cast<double>(spec_.stride));
    if (spec_.out_channels > spec_.in_channels) y = ops::zero_pad_channels(y, spec_.out_channels);
    return y;
}

Var ResidualBlock::branch(Var x, Var k1, Var k2) const {
    require_input_shape(x.shape(), input_shape(), "residual block");
    Var h = ops::relu(ops::conv2d(x, k1, 1, padding_));
    if (spec_.stride > 1) h = blurpool(h, spec_.stride, filter_);
    return ops::conv2d(h, k2, 1, padding_);
}

Var ResidualBlock::forward(Var x, Var k1, Var k2) const { return ops::add(skip(x), branch(x, k1, k2)); }

Tensor ResidualBlock::skip(const Tensor& x) const {
    return eval_unary(x, [&](Graph&, Var v) { return skip(v); });
}

Tensor ResidualBlock::branch(const Tensor& x) const {
    return eval_unary(x, [&](Graph& g, Var v) { return branch(v, g.constant(conv1), g.constant(conv2)); });
}

Tensor ResidualBlock::forward(const Tensor& x) const {
    return eval_unary(x, [&](Graph& g, Var v) { return forward(v, g.constant(conv1), g.constant(conv2)); });
}

double ResidualBlock::branch_lipschitz(int iters) const {
    const double s1 = conv_operator_norm(conv1, input_shape(), padding_, iters);
    const double s2 = conv_operator_norm(conv2, {1, spec_.out_channels, out_resolution(), out_resolution()}, padding_,
                                         iters);
    return s1 * s2;
}

void ResidualBlock::renormalize() {
    if (!spec_.coefficient) return;
    estimate_sigma(conv1, norm1, padding_);
    conv1 = apply_spectral_norm(conv1, norm1);
    estimate_sigma(conv2, norm2, padding_);
    conv2 = apply_spectral_norm(conv2, norm2);
}

FixedPointResult invert_block(const ResidualBlock& block, const Tensor& y, int max_iters, double tol) {
    if (!block.dimension_preserving()) {
        throw std::invalid_argument("invert_block: block changes shape; fixed-point inversion needs x and y alike");
    }
    FixedPointResult r;
    r.x = y;
    for (int it = 0; it < max_iters; ++it) {
        Tensor next = y - block.branch(r.x);
        const double step = l2dist(next, r.x);
        r.x = std::move(next);
        r.iterations = it + 1;
        if (step <= tol) break;
    }
    r.residual = l2dist(block.forward(r.x), y);
    return r;
}

// ---- network ----

Network::Network(NetworkSpec spec, Rng& rng) : spec_(std::move(spec)) {
    spec_.validate();
    for (std::size_t i = 0; i < spec_.blocks.size(); ++i) {
        const auto& bs = spec_.blocks[i];
        ResidualBlock b(bs, spec_.resolution(i), spec_.filter, spec_.padding);
        b.conv1 = Tensor::randn(b.conv1.shape(), rng, std::sqrt(2.0 / (9.0 * static_cast<double>(bs.in_channels))));
        b.conv2 = Tensor::randn(b.conv2.shape(), rng, std::sqrt(2.0 / (9.0 * static_cast<double>(bs.out_channels))));
        b.norm1 = SpectralNormState::make(bs.coefficient, b.input_shape(), rng, 200);
        b.norm2 = SpectralNormState::make(bs.coefficient, {1, bs.out_channels, b.out_resolution(), b.out_resolution()},
                                          rng, 200);
        b.renormalize();
        b.norm1.n_iters = spec_.power_iterations;
        b.norm2.n_iters = spec_.power_iterations;
        blocks_.push_back(std::move(b));
    }
    if (spec_.batchnorm_between) {
        for (std::size_t i = 0; i + 1 < blocks_.size(); ++i) {
            const std::size_t c = spec_.blocks[i].out_channels;
            bn_gamma_.push_back(Tensor::ones({c}));
            bn_beta_.push_back(Tensor::zeros({c}));
            bn_states_.push_back(BatchNormState::identity(c));
        }
    }
    if (spec_.num_classes > 0) {
        const std::size_t f = numel(spec_.feature_shape());
        head_w_ = Tensor::randn({spec_.num_classes, f}, rng, std::sqrt(1.0 / static_cast<double>(f)));
        head_b_ = Tensor::zeros({spec_.num_classes});
    }
}

std::vector<Network::NamedParam> Network::parameters() {
    std::vector<NamedParam> out;
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        out.push_back({"block" + std::to_string(i) + ".conv1", &blocks_[i].conv1});
        out.push_back({"block" + std::to_string(i) + ".conv2", &blocks_[i].conv2});
    }
    for (std::size_t i = 0; i < bn_gamma_.size(); ++i) {
        out.push_back({"bn" + std::to_string(i) + ".gamma", &bn_gamma_[i]});
        out.push_back({"bn" + std::to_string(i) + ".beta", &bn_beta_[i]});
    }
    if (spec_.num_classes > 0) {
        out.push_back({"head.weight", &head_w_});
        out.push_back({"head.bias", &head_b_});
    }
    return out;
}

std::vector<const Tensor*> Network::parameter_values() const {
    std::vector<const Tensor*> out;
    for (const auto& p : const_cast<Network*>(this)->parameters()) out.push_back(p.value);
    return out;
}

ForwardResult Network::run(Graph&, Var x, BatchNormMode mode, std::vector<BatchNormState>& states,
                           const std::vector<Var>& params) const {
    require_input_shape(x.shape(), blocks_.front().input_shape(), "network");
    ForwardResult r;
    std::size_t p = 0;
    const std::size_t bn_base = 2 * blocks_.size();
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        BlockTap tap;
        tap.input = x;
        Var y = blocks_[i].forward(x, params[p], params[p + 1]);
        p += 2;
        tap.output = y;
        r.taps.push_back(tap);
        if (spec_.interblock_lowpass) y = ops::lowpass(y, spec_.budget_after(i).cutoff());
        if (spec_.batchnorm_between && i + 1 < blocks_.size()) {
            y = ops::batchnorm2d(y, params[bn_base + 2 * i], params[bn_base + 2 * i + 1], states[i], mode);
        }
        x = y;
    }
    r.features = x;
    if (spec_.num_classes > 0) {
        const std::size_t b = x.shape()[0];
        Var flat = ops::reshape(x, {b, numel(spec_.feature_shape())});
        const std::size_t hp = params.size() - 2;
        r.logits = ops::linear(flat, params[hp], params[hp + 1]);
    }
    return r;
}

ForwardResult Network::forward(Graph& g, Var x, BatchNormMode mode, std::vector<Var>* param_vars) {
    std::vector<Var> params;
    for (const Tensor* t : parameter_values()) params.push_back(g.leaf(*t, param_vars != nullptr));
    if (param_vars) *param_vars = params;
    return run(g, x, mode, bn_states_, params);
}

ForwardResult Network::forward(Graph& g, Var x) const {
    std::vector<Var> params;
    for (const Tensor* t : parameter_values()) params.push_back(g.constant(*t));
    auto states = bn_states_;
    return run(g, x, BatchNormMode::eval, states, params);
}

Tensor Network::features(const Tensor& x) const {
    Graph g;
    return forward(g, g.constant(x)).features.value();
}

VarFn Network::feature_map() const {
    return [this](Graph& g, Var x) { return forward(g, x).features; };
}

void Network::renormalize() {
    for (auto& b : blocks_) b.renormalize();
}

void Network::zero_branches() {
    for (auto& b : blocks_) {
        b.conv1 = Tensor::zeros(b.conv1.shape());
        b.conv2 = Tensor::zeros(b.conv2.shape());
    }
}

void Network::save(const std::filesystem::path& dir) const {
    std::filesystem::create_directories(dir);
    nlohmann::json j;
    j["spec"] = to_json(spec_);
    nlohmann::json params = nlohmann::json::array();
    for (const auto& p : const_cast<Network*>(this)->parameters()) {
        const std::string file = p.name + ".bin";
        save_tensor(dir / file, *p.value);
        params.push_back({{"name", p.name}, {"file", file}});
    }
    j["parameters"] = params;
    nlohmann::json bn = nlohmann::json::array();
    for (std::size_t i = 0; i < bn_states_.size(); ++i) {
        const std::string mean = "bn" + std::to_string(i) + ".running_mean.bin";
        const std::string var = "bn" + std::to_string(i) + ".running_var.bin";
        save_tensor(dir / mean, bn_states_[i].running_mean);
        save_tensor(dir / var, bn_states_[i].running_var);
        bn.push_back({{"running_mean", mean}, {"running_var", var}});
    }
    j["batchnorm"] = bn;
    std::ofstream out(dir / "network.json");
    if (!out) throw IoError("cannot write " + (dir / "network.json").string());
    out << j.dump(2) << '\n';
}

Network Network::load(const std::filesystem::path& network_json) {
    std::ifstream in(network_json);
    if (!in) throw IoError("cannot open " + network_json.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed " + network_json.string() + ": " + e.what());
    }
    const auto dir = network_json.parent_path();
    Rng rng(0);
    Network net(network_spec_from_json(j.at("spec")), rng);
    auto params = net.parameters();
    const auto& jp = j.at("parameters");
    if (jp.size() != params.size()) {
        throw IoError(network_json.string() + ": lists " + std::to_string(jp.size()) + " parameters, spec needs " +
                      std::to_string(params.size()));
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        const auto name = jp[i].at("name").get<std::string>();
        if (name != params[i].name) throw IoError(network_json.string() + ": expected parameter " + params[i].name);
        Tensor t = load_tensor(dir / jp[i].at("file").get<std::string>());
        if (t.shape() != params[i].value->shape()) {
            throw ShapeError("parameter " + name + " has shape " + to_string(t.shape()) + ", spec needs " +
                             to_string(params[i].value->shape()));
        }
        *params[i].value = std::move(t);
    }
    if (j.contains("batchnorm")) {
        const auto& jb = j["batchnorm"];
        if (jb.size() != net.bn_states_.size()) throw IoError(network_json.string() + ": batchnorm count mismatch");
        for (std::size_t i = 0; i < jb.size(); ++i) {
            net.bn_states_[i].running_mean = load_tensor(dir / jb[i].at("running_mean").get<std::string>());
            net.bn_states_[i].running_var = load_tensor(dir / jb[i].at("running_var").get<std::string>());
        }
    }
    return net;
}

}  // namespace lowpass
