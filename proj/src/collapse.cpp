#include "lowpass/collapse.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <stdexcept>

#include <Eigen/SVD>

namespace lowpass {

namespace {

struct Recorder {
    const VarFn& f;
    const Tensor& x0;
    const Tensor& y0;
    std::size_t u;
    TrajectoryRecord& rec;

    void operator()(std::size_t k, const Tensor& x) const {
        Graph g;
        const Tensor y = f(g, g.constant(x)).value();
        Tensor d = x - x0;
        if (d.rank() < 2) d = d.reshaped({1, d.size()});
        const Tensor lo = lowpass(d, u);
        rec.step.push_back(k);
        rec.input_dist.push_back(l2norm(d));
        rec.feat_dist.push_back(l2dist(y, y0));
        rec.low_dist.push_back(l2norm(lo));
        rec.high_dist.push_back(l2norm(d - lo));
    }
};

Tensor evaluate(const VarFn& f, const Tensor& x) {
    Graph g;
    return f(g, g.constant(x)).value();
}

Eigen::VectorXd as_vector(const Tensor& t) {
    const auto d = t.data();
    return Eigen::Map<const Eigen::VectorXd>(d.data(), static_cast<Eigen::Index>(d.size()));
}

Tensor from_vector(const Eigen::VectorXd& v, const Shape& shape) {
    return Tensor(shape, std::vector<double>(v.data(), v.data() + v.size()));
}

double eps_for(const SearchConfig& c, const Tensor& x0) {
    return c.eps_init ? *c.eps_init : 1e-3 * l2norm(x0);
}

}  // namespace

std::string_view to_string(DirectionBand b) {
    switch (b) {
        case DirectionBand::all: return "all";
        case DirectionBand::low: return "low";
        case DirectionBand::high: return "high";
    }
    return "?";
}

DirectionBand band_from_string(std::string_view s) {
    if (s == "all") return DirectionBand::all;
    if (s == "low") return DirectionBand::low;
    if (s == "high") return DirectionBand::high;
    throw std::invalid_argument("unknown direction band '" + std::string(s) + "' (expected all, low or high)");
}

std::string_view to_string(SearchAlgorithm a) { return a == SearchAlgorithm::level_set ? "level-set" : "null-space"; }

SearchAlgorithm algorithm_from_string(std::string_view s) {
    if (s == "level-set") return SearchAlgorithm::level_set;
    if (s == "null-space") return SearchAlgorithm::null_space;
    throw std::invalid_argument("unknown search algorithm '" + std::string(s) + "' (expected level-set or null-space)");
}

void SearchConfig::validate() const {
    if (!(eta > 0.0)) throw std::invalid_argument("search config: eta must be > 0");
    if (n_steps < 1) throw std::invalid_argument("search config: n_steps must be >= 1");
    if (eps_init && !(*eps_init > 0.0)) throw std::invalid_argument("search config: eps_init must be > 0");
    if (!(rank_tol > 0.0)) throw std::invalid_argument("search config: rank_tol must be > 0");
}

nlohmann::json to_json(const SearchConfig& c) {
    nlohmann::json j{{"eta", c.eta},
                     {"n_steps", c.n_steps},
                     {"band", std::string(to_string(c.band))},
                     {"band_u", c.band_u},
                     {"seed", c.seed},
                     {"algorithm", std::string(to_string(c.algorithm))},
                     {"retraction", c.retraction},
                     {"non_cancelling", c.non_cancelling},
                     {"rank_tol", c.rank_tol}};
    j["eps_init"] = c.eps_init ? nlohmann::json(*c.eps_init) : nlohmann::json(nullptr);
    return j;
}

SearchConfig search_config_from_json(const nlohmann::json& j, SearchConfig c) {
    try {
        c.eta = j.value("eta", c.eta);
        c.n_steps = j.value("n_steps", c.n_steps);
        if (j.contains("eps_init")) {
            c.eps_init = j["eps_init"].is_null() ? std::nullopt : std::optional<double>(j["eps_init"].get<double>());
        }
        if (j.contains("band")) c.band = band_from_string(j["band"].get<std::string>());
        c.band_u = j.value("band_u", c.band_u);
        c.seed = j.value("seed", c.seed);
        if (j.contains("algorithm")) c.algorithm = algorithm_from_string(j["algorithm"].get<std::string>());
        c.retraction = j.value("retraction", c.retraction);
        c.non_cancelling = j.value("non_cancelling", c.non_cancelling);
        c.rank_tol = j.value("rank_tol", c.rank_tol);
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("search config: ") + e.what());
    }
    c.validate();
    return c;
}

Tensor sample_direction(const Shape& shape, DirectionBand band, std::size_t u, Rng& rng) {
    for (;;) {
        Tensor v = Tensor::randn(shape, rng);
        if (band == DirectionBand::low) v = lowpass(v, u);
        if (band == DirectionBand::high) v = highpass(v, u);
        const double n = l2norm(v);
        if (n > 1e-12) return v * (1.0 / n);
    }
}

TrajectoryRecord level_set_walk(const VarFn& f, const Tensor& x0, const SearchConfig& config) {
    config.validate();
    Rng rng(config.seed);
    const Tensor y0 = evaluate(f, x0);
    const VarFn phi = [&](Graph& g, Var x) { return ops::l2dist(f(g, x), g.constant(y0)); };

    TrajectoryRecord rec;
    Recorder record{f, x0, y0, config.band_u, rec};
    const auto& shape = x0.shape();
    Tensor x = x0 + sample_direction(shape, config.band, config.band_u, rng) * eps_for(config, x0);
    const Tensor ref = config.non_cancelling ? sample_direction(shape, config.band, config.band_u, rng) : Tensor();
    const double level = config.retraction ? value_and_grad(phi, x).first : 0.0;
    record(0, x);

    for (std::size_t k = 1; k <= config.n_steps; ++k) {
        const Tensor v = sample_direction(shape, config.band, config.band_u, rng);
        const auto [value, grad] = value_and_grad(phi, x);
        (void)value;
        const double gg = dot(grad, grad);
        Tensor step = v;
        if (std::sqrt(gg) < 1e-12) {
            ++rec.zero_gradient_steps;
        } else {
            step.add_scaled(grad, -dot(v, grad) / gg);
            const double sn = l2norm(step);
            rec.orthogonality.push_back(sn > 0.0 ? std::abs(dot(step, grad)) / (sn * std::sqrt(gg)) : 0.0);
        }
        if (config.non_cancelling && dot(step, ref) < 0.0) step *= -1.0;
        const Tensor before = x;
        x.add_scaled(step, config.eta);
        if (config.retraction) {
            const auto [pv, pg] = value_and_grad(phi, x);
            const double pgg = dot(pg, pg);
            if (pgg > 1e-24) x.add_scaled(pg, -(pv - level) / pgg);
        }
        rec.step_length.push_back(l2dist(x, before));
        record(k, x);
    }
    rec.final_x = x;
    return rec;
}

TrajectoryRecord null_space_walk(const VarFn& f, const Tensor& x0, const SearchConfig& config) {
    config.validate();
    Rng rng(config.seed);
    const Tensor y0 = evaluate(f, x0);
    TrajectoryRecord rec;
    Recorder record{f, x0, y0, config.band_u, rec};
    const auto& shape = x0.shape();

    // Null-space projection of r at x; empty when the Jacobian has full column rank.
    auto project = [&](const Tensor& x, const Tensor& r) -> std::optional<Tensor> {
        const Eigen::MatrixXd J = jacobian(f, x);
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(J, Eigen::ComputeThinV);
        const auto& s = svd.singularValues();
        const double smax = s.size() > 0 ? s(0) : 0.0;
        Eigen::Index rank = 0;
        while (rank < s.size() && s(rank) > config.rank_tol * smax) ++rank;
        if (rank >= J.cols()) return std::nullopt;
        const auto V = svd.matrixV().leftCols(rank);
        const Eigen::VectorXd rv = as_vector(r);
        return from_vector(rv - V * (V.transpose() * rv), shape);
    };

    Tensor x = x0;
    {
        const auto p = project(x0, sample_direction(shape, config.band, config.band_u, rng));
        if (!p) {
            rec.status = "no-null-space";
            record(0, x);
            rec.final_x = x;
            return rec;
        }
        const double pn = l2norm(*p);
        if (pn > 0.0) x.add_scaled(*p, eps_for(config, x0) / pn);
    }
    record(0, x);

    for (std::size_t k = 1; k <= config.n_steps; ++k) {
        const auto p = project(x, sample_direction(shape, config.band, config.band_u, rng));
        if (!p) {
            rec.status = "no-null-space";
            break;
        }
        const Tensor before = x;
        x.add_scaled(*p, config.eta);
        rec.step_length.push_back(l2dist(x, before));
        record(k, x);
    }
    rec.final_x = x;
    return rec;
}

TrajectoryRecord run_search(const VarFn& f, const Tensor& x0, const SearchConfig& config) {
    return config.algorithm == SearchAlgorithm::level_set ? level_set_walk(f, x0, config)
                                                          : null_space_walk(f, x0, config);
}

Quantiles quantiles(std::vector<double> v) {
    Quantiles q;
    if (v.empty()) return q;
    std::sort(v.begin(), v.end());
    double s = 0.0;
    for (double x : v) s += x;
    q.mean = s / static_cast<double>(v.size());
    auto at = [&](double p) {
        const double pos = p * static_cast<double>(v.size() - 1);
        const auto lo = static_cast<std::size_t>(std::floor(pos));
        const auto hi = std::min(lo + 1, v.size() - 1);
        return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
    };
    q.q25 = at(0.25);
    q.median = at(0.5);
    q.q75 = at(0.75);
    return q;
}

std::vector<CollapseSummaryRow> collapse_report(const std::vector<LabeledTrajectory>& trajectories) {
    struct Group {
        CollapseSummaryRow row;
        std::vector<double> in, feat;
    };
    std::vector<Group> groups;
    for (const auto& t : trajectories) {
        auto it = std::find_if(groups.begin(), groups.end(),
                               [&](const Group& g) { return g.row.variant == t.variant && g.row.band == t.band; });
        if (it == groups.end()) {
            groups.push_back({{t.variant, t.band, 0, {}, {}}, {}, {}});
            it = groups.end() - 1;
        }
        it->in.push_back(t.record->final_input_dist());
        it->feat.push_back(t.record->final_feat_dist());
    }
    std::vector<CollapseSummaryRow> rows;
    for (auto& g : groups) {
        g.row.count = g.in.size();
        g.row.input_dist = quantiles(g.in);
        g.row.feat_dist = quantiles(g.feat);
        rows.push_back(g.row);
    }
    return rows;
}

void write_trajectory_csv(std::ostream& os, const TrajectoryRecord& r) {
    os << "# lowpass-lab trajectory v1\n";
    os << "step,input_dist,feat_dist,low_dist,high_dist\n";
    os.precision(17);
    for (std::size_t i = 0; i < r.step.size(); ++i) {
        os << r.step[i] << ',' << r.input_dist[i] << ',' << r.feat_dist[i] << ',' << r.low_dist[i] << ','
           << r.high_dist[i] << '\n';
    }
}

nlohmann::json to_json(const std::vector<CollapseSummaryRow>& rows) {
    auto q = [](const Quantiles& x) {
        return nlohmann::json{{"mean", x.mean}, {"q25", x.q25}, {"median", x.median}, {"q75", x.q75}};
    };
    nlohmann::json a = nlohmann::json::array();
    for (const auto& r : rows) {
        a.push_back({{"variant", r.variant},
                     {"band", std::string(to_string(r.band))},
                     {"count", r.count},
                     {"input_dist", q(r.input_dist)},
                     {"feat_dist", q(r.feat_dist)}});
    }
    return a;
}

}  // namespace lowpass
