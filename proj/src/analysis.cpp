#include "lowpass/analysis.hpp"

#include <cmath>
#include <limits>
#include <ostream>

namespace lowpass {

namespace {

std::vector<Tensor> split_batch(const Tensor& batch) {
    std::vector<Tensor> items;
    for (std::size_t b = 0; b < batch.extent(0); ++b) items.push_back(batch_item(batch, b));
    return items;
}

double mean_of(const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return v.empty() ? std::numeric_limits<double>::quiet_NaN() : s / static_cast<double>(v.size());
}

double stderr_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double ss = 0.0;
    for (double x : v) ss += (x - m) * (x - m);
    return std::sqrt(ss / static_cast<double>(v.size() - 1) / static_cast<double>(v.size()));
}

void write_cell(std::ostream& os, double v) {
    if (!std::isnan(v)) os << v;
}

}  // namespace

std::string_view to_string(ContractionVariant v) {
    return v == ContractionVariant::as_written ? "as-written" : "lowpassed-output";
}

std::string_view to_string(DominanceMode m) { return m == DominanceMode::per_item ? "per-item" : "pairwise"; }

std::string_view to_string(BoundStatus s) {
    switch (s) {
        case BoundStatus::pass: return "pass";
        case BoundStatus::fail: return "fail";
        case BoundStatus::precondition_unmet: return "precondition-unmet";
    }
    return "?";
}

bool contraction_holds(double lhs, double rhs) { return lhs <= rhs + 1e-12 * std::max(1.0, rhs); }

std::vector<Tensor> layer_representations(const Network& net, const Tensor& batch) {
    Graph g;
    const auto r = net.forward(g, g.constant(batch));
    std::vector<Tensor> out;
    for (const auto& tap : r.taps) out.push_back(tap.input.value());
    out.push_back(r.features.value());
    return out;
}

std::vector<double> check_dominance_over_batch(const Network& net, const Tensor& batch, DominanceMode mode) {
    if (batch.rank() != 4 || batch.extent(0) == 0) throw ShapeError("check_dominance_over_batch: batch must be [B,C,H,W], B > 0");
    const auto layers = layer_representations(net, batch);
    std::vector<double> out;
    for (std::size_t l = 0; l < layers.size(); ++l) {
        const std::size_t u = net.spec().budget_before(l).cutoff();
        const auto items = split_batch(layers[l]);
        std::size_t hits = 0, total = 0;
        if (mode == DominanceMode::per_item) {
            for (const auto& it : items) {
                hits += dominance_check(it, u).is_dominant ? 1 : 0;
                ++total;
            }
        } else {
            for (std::size_t i = 0; i < items.size(); ++i) {
                for (std::size_t j = i + 1; j < items.size(); ++j) {
                    hits += dominance_check(items[i] - items[j], u).is_dominant ? 1 : 0;
                    ++total;
                }
            }
        }
        out.push_back(total == 0 ? 1.0 : static_cast<double>(hits) / static_cast<double>(total));
    }
    return out;
}

std::vector<ContractionCount> check_contraction_over_batch(const Network& net, const Tensor& batch,
                                                           ContractionVariant variant) {
    if (batch.rank() != 4 || batch.extent(0) < 2) {
        throw ShapeError("check_contraction_over_batch: need a [B,C,H,W] batch with B >= 2");
    }
    const auto layers = layer_representations(net, batch);
    std::vector<ContractionCount> out;
    for (std::size_t b = 0; b < net.num_blocks(); ++b) {
        const auto& block = net.block(b);
        const std::size_t u = net.spec().budget_before(b).cutoff();
        const Tensor hz = lowpass(layers[b], u);
        Tensor gz = block.branch(hz);
        if (variant == ContractionVariant::lowpassed_output) gz = lowpass(gz, net.spec().budget_after(b).cutoff());
        const auto in = split_batch(hz);
        const auto outp = split_batch(gz);
        ContractionCount c;
        for (std::size_t i = 0; i < in.size(); ++i) {
            for (std::size_t j = i + 1; j < in.size(); ++j) {
                const double rhs = l2dist(in[i], in[j]);
                if (rhs == 0.0) {
                    ++c.degenerate;
                    continue;
                }
                const double lhs = l2dist(outp[i], outp[j]);
                ++c.evaluated;
                if (contraction_holds(lhs, rhs)) ++c.satisfied;
                c.max_ratio = std::max(c.max_ratio, lhs / rhs);
            }
        }
        out.push_back(c);
    }
    return out;
}

CheckReport run_checks(const Network& net, const Tensor& batch, std::uint64_t seed, DominanceMode mode) {
    CheckReport r;
    r.batch_size = batch.extent(0);
    r.seed = seed;
    r.dominance_mode = mode;
    for (std::size_t l = 0; l <= net.num_blocks(); ++l) {
        r.layers.push_back(l == 0 ? "x" : "f" + std::to_string(l));
        r.layer_u.push_back(net.spec().budget_before(l).cutoff());
    }
    for (std::size_t b = 0; b < net.num_blocks(); ++b) r.block_u.push_back(net.spec().budget_before(b).cutoff());
    r.dominance = check_dominance_over_batch(net, batch, mode);
    r.contraction_as_written = check_contraction_over_batch(net, batch, ContractionVariant::as_written);
    r.contraction_lowpassed = check_contraction_over_batch(net, batch, ContractionVariant::lowpassed_output);
    return r;
}

BoundCheck theorem2_bound_check(const ResidualBlock& block, const Tensor& x, const Tensor& y, std::size_t u,
                                double branch_lipschitz) {
    BoundCheck r;
    r.bound = 1.0 - branch_lipschitz;
    const double rhs = l2dist(lowpass(x, u), lowpass(y, u));
    if (rhs == 0.0 || !dominance_check(x - y, u).is_dominant) return r;
    const double lhs = l2dist(lowpass(block.forward(x), u), lowpass(block.forward(y), u));
    r.ratio = lhs / rhs;
    r.status = r.ratio >= r.bound - 1e-12 ? BoundStatus::pass : BoundStatus::fail;
    return r;
}

ReluContraction relu_lowband_check(const Tensor& x, const Tensor& y, std::size_t u) {
    ReluContraction r;
    r.lhs = l2norm(lowpass(relu(x) - relu(y), u));
    r.rhs = l2dist(lowpass(x, u), lowpass(y, u));
    r.dominant = dominance_check(x - y, u).is_dominant;
    return r;
}

double chain_lower_constant(const Network& net, int iters) {
    double c = 1.0;
    for (std::size_t b = 0; b < net.num_blocks(); ++b) c *= std::max(0.0, 1.0 - net.block(b).branch_lipschitz(iters));
    const auto& states = net.batchnorm_states();
    for (std::size_t i = 0; i < states.size(); ++i) {
        const Tensor& gamma = net.batchnorm_gamma(i);
        double gain = std::numeric_limits<double>::infinity();
        for (std::size_t ch = 0; ch < states[i].running_var.size(); ++ch) {
            const double g = std::abs(gamma[ch]);
            gain = std::min(gain, g / std::sqrt(states[i].running_var[ch] + states[i].eps));
        }
        c *= gain;
    }
    return c;
}

nlohmann::json to_json(const CheckReport& r) {
    auto counts = [](const std::vector<ContractionCount>& v) {
        nlohmann::json a = nlohmann::json::array();
        for (const auto& c : v) {
            a.push_back({{"proportion", c.proportion()},
                         {"satisfied", c.satisfied},
                         {"evaluated", c.evaluated},
                         {"degenerate", c.degenerate},
                         {"max_ratio", c.max_ratio}});
        }
        return a;
    };
    return {{"batch_size", r.batch_size},
            {"pairs", r.batch_size * (r.batch_size - (r.batch_size > 0 ? 1 : 0)) / 2},
            {"seed", r.seed},
            {"dominance_mode", std::string(to_string(r.dominance_mode))},
            {"layers", r.layers},
            {"layer_u", r.layer_u},
            {"dominance", r.dominance},
            {"block_u", r.block_u},
            {"contraction_as_written", counts(r.contraction_as_written)},
            {"contraction_lowpassed_output", counts(r.contraction_lowpassed)}};
}

std::vector<TableRow> summarize(const std::vector<CheckReport>& reports, const std::string& coefficient) {
    if (reports.empty()) return {};
    const std::size_t cols = reports.front().layers.size();
    auto row = [&](const std::string& name, auto value_at) {
        TableRow t{name, coefficient, {}, {}};
        for (std::size_t c = 0; c < cols; ++c) {
            std::vector<double> vals;
            for (const auto& r : reports) {
                const double v = value_at(r, c);
                if (!std::isnan(v)) vals.push_back(v);
            }
            t.mean.push_back(mean_of(vals));
            t.stderr_.push_back(vals.empty() ? std::numeric_limits<double>::quiet_NaN() : stderr_of(vals));
        }
        return t;
    };
    const double nan = std::numeric_limits<double>::quiet_NaN();
    // Block b produces f_{b+1}, so its contraction entry sits under that column.
    auto contraction = [nan](ContractionVariant v) {
        return [v, nan](const CheckReport& r, std::size_t c) {
            const auto& cs = r.contraction(v);
            return c >= 1 && c - 1 < cs.size() ? cs[c - 1].proportion() : nan;
        };
    };
    return {row("lemma1", [](const CheckReport& r, std::size_t c) { return r.dominance[c]; }),
            row("theorem2", contraction(ContractionVariant::as_written)),
            row("theorem2-lowpassed", contraction(ContractionVariant::lowpassed_output))};
}

void write_table_csv(std::ostream& os, const std::vector<std::string>& columns, const std::vector<TableRow>& rows) {
    os << "# lowpass-lab check-table v1\n";
    os << "condition,c,stat";
    for (const auto& c : columns) os << ',' << c;
    os << '\n';
    os.precision(17);
    for (const auto& r : rows) {
        for (int stat = 0; stat < 2; ++stat) {
            os << r.condition << ',' << r.coefficient << ',' << (stat == 0 ? "mean" : "stderr");
            const auto& v = stat == 0 ? r.mean : r.stderr_;
            for (std::size_t c = 0; c < columns.size(); ++c) {
                os << ',';
                if (c < v.size()) write_cell(os, v[c]);
            }
            os << '\n';
        }
    }
}

}  // namespace lowpass
