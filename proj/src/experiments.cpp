#include "lowpass/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <istream>
#include <mutex>
#include <numbers>
#include <numeric>
#include <ostream>
#include <sstream>
#include <thread>

namespace lowpass {

// ---- parallelism ----

std::size_t lab_threads() {
    if (const char* env = std::getenv("LOWPASS_LAB_THREADS")) {
        try {
            const long v = std::stol(env);
            if (v > 0) return static_cast<std::size_t>(v);
        } catch (const std::exception&) {
        }
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn) {
    const std::size_t workers = std::min(lab_threads(), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

// ---- data ----

namespace {

struct ModeBasis {
    std::vector<Tensor> planes;  // [H,W] each
};

ModeBasis low_band_basis(std::size_t n) {
    ModeBasis b;
    b.planes.push_back(cosine_mode(n, n, 0, 0));
    const long ks[4][2] = {{0, 1}, {1, 0}, {1, 1}, {1, -1}};
    for (const auto& k : ks) {
        b.planes.push_back(cosine_mode(n, n, k[0], k[1]));
        b.planes.push_back(cosine_mode(n, n, k[0], k[1], -std::numbers::pi / 2));
    }
    return b;
}

void fill_split(std::size_t count, const ToyDatasetConfig& c, const ModeBasis& basis, const std::vector<double>& w,
                Rng& rng, Tensor& xs, std::vector<int>& ys) {
    const std::size_t n = c.image_size, plane = n * n, item = c.channels * plane;
    const std::size_t nb = basis.planes.size();
    std::normal_distribution<double> normal(0.0, 1.0);
    std::size_t quota[2] = {count - count / 2, count / 2};
    std::vector<std::vector<double>> images;
    std::vector<int> labels;
    while (quota[0] + quota[1] > 0) {
        std::vector<double> a(c.channels * nb);
        for (double& v : a) v = normal(rng);
        double score = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) score += w[i] * a[i];
        const int label = score > 0.0 ? 1 : 0;
        if (quota[label] == 0) continue;
        --quota[label];
        std::vector<double> img(item, 0.0);
        for (std::size_t ch = 0; ch < c.channels; ++ch) {
            Tensor noise = highpass(Tensor::randn({n, n}, rng, c.noise), 1);
            for (std::size_t p = 0; p < plane; ++p) {
                double v = noise[p];
                for (std::size_t j = 0; j < nb; ++j) v += a[ch * nb + j] * basis.planes[j][p];
                img[ch * plane + p] = v;
            }
        }
        images.push_back(std::move(img));
        labels.push_back(label);
    }
    std::vector<std::size_t> order(count);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<double> data;
    data.reserve(count * item);
    ys.clear();
    for (std::size_t i : order) {
        data.insert(data.end(), images[i].begin(), images[i].end());
        ys.push_back(labels[i]);
    }
    xs = Tensor({count, c.channels, n, n}, std::move(data));
}

}  // namespace

ToyDataset ToyDataset::make(const ToyDatasetConfig& config) {
    if (config.image_size < 4 || config.channels == 0 || config.train_size < 2) {
        throw std::invalid_argument("toy dataset: need image_size >= 4, channels >= 1 and train_size >= 2");
    }
    Rng rng(config.seed);
    const auto basis = low_band_basis(config.image_size);
    std::vector<double> w(config.channels * basis.planes.size());
    std::normal_distribution<double> normal(0.0, 1.0);
    for (double& v : w) v = normal(rng);
    ToyDataset d;
    fill_split(config.train_size, config, basis, w, rng, d.train_x, d.train_y);
    if (config.test_size > 0) fill_split(config.test_size, config, basis, w, rng, d.test_x, d.test_y);
    return d;
}

Tensor take_batch(const Tensor& x, std::size_t begin, std::size_t count) {
    if (x.rank() == 0 || begin + count > x.extent(0)) {
        throw ShapeError("take_batch: range [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") exceeds batch axis (0) of " + to_string(x.shape()));
    }
    Shape s = x.shape();
    const std::size_t item = x.size() / s[0];
    s[0] = count;
    const auto d = x.data();
    return Tensor(s, std::vector<double>(d.begin() + static_cast<std::ptrdiff_t>(begin * item),
                                         d.begin() + static_cast<std::ptrdiff_t>((begin + count) * item)));
}

namespace {

Tensor gather(const Tensor& x, const std::vector<std::size_t>& idx) {
    std::vector<Tensor> items;
    for (std::size_t i : idx) items.push_back(batch_item(x, i));
    return stack_batch(items);
}

}  // namespace

// ---- training ----

TrainingDiverged::TrainingDiverged(std::size_t e, std::size_t s, double l)
    : std::runtime_error("training diverged at epoch " + std::to_string(e) + ", step " + std::to_string(s) +
                         " (loss " + std::to_string(l) + ")"),
      epoch(e),
      step(s),
      loss(l) {}

void TrainConfig::validate() const {
    if (epochs == 0 || batch_size == 0 || check_every == 0 || check_batch < 2) {
        throw std::invalid_argument("train config: epochs, batch_size, check_every must be positive, check_batch >= 2");
    }
    if (!(learning_rate > 0.0)) throw std::invalid_argument("train config: learning_rate must be > 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("train config: momentum must be in [0,1)");
    if (coefficient && !(*coefficient > 0.0)) throw std::invalid_argument("train config: coefficient must be > 0");
    if (power_iterations < 1) throw std::invalid_argument("train config: power_iterations must be >= 1");
    if (check_batch > data.train_size) throw std::invalid_argument("train config: check_batch exceeds train_size");
}

std::string coefficient_label(const std::optional<double>& c) {
    if (!c) return "none";
    std::ostringstream os;
    os << *c;
    return os.str();
}

nlohmann::json to_json(const TrainConfig& c) {
    nlohmann::json j{{"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"learning_rate", c.learning_rate},
                     {"momentum", c.momentum},
                     {"seed", c.seed},
                     {"check_every", c.check_every},
                     {"check_batch", c.check_batch},
                     {"interblock_lowpass", c.interblock_lowpass},
                     {"power_iterations", c.power_iterations},
                     {"data",
                      {{"train_size", c.data.train_size},
                       {"test_size", c.data.test_size},
                       {"channels", c.data.channels},
                       {"image_size", c.data.image_size},
                       {"noise", c.data.noise},
                       {"seed", c.data.seed}}}};
    j["coefficient"] = c.coefficient ? nlohmann::json(*c.coefficient) : nlohmann::json(nullptr);
    return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig c) {
    try {
        c.epochs = j.value("epochs", c.epochs);
        c.batch_size = j.value("batch_size", c.batch_size);
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.momentum = j.value("momentum", c.momentum);
        c.seed = j.value("seed", c.seed);
        c.check_every = j.value("check_every", c.check_every);
        c.check_batch = j.value("check_batch", c.check_batch);
        c.interblock_lowpass = j.value("interblock_lowpass", c.interblock_lowpass);
        c.power_iterations = j.value("power_iterations", c.power_iterations);
        if (j.contains("coefficient")) {
            const auto& jc = j["coefficient"];
            if (jc.is_null() || (jc.is_string() && jc.get<std::string>() == "none")) {
                c.coefficient.reset();
            } else {
                c.coefficient = jc.get<double>();
            }
        }
        if (j.contains("data")) {
            const auto& d = j["data"];
            c.data.train_size = d.value("train_size", c.data.train_size);
            c.data.test_size = d.value("test_size", c.data.test_size);
            c.data.channels = d.value("channels", c.data.channels);
            c.data.image_size = d.value("image_size", c.data.image_size);
            c.data.noise = d.value("noise", c.data.noise);
            c.data.seed = d.value("seed", c.data.seed);
        }
    } catch (const nlohmann::json::exception& e) {
        throw std::invalid_argument(std::string("train config: ") + e.what());
    }
    c.validate();
    return c;
}

double accuracy(const Network& net, const Tensor& x, const std::vector<int>& y) {
    if (net.spec().num_classes == 0) throw std::invalid_argument("accuracy: network has no classifier head");
    Graph g;
    const auto r = net.forward(g, g.constant(x));
    const Tensor& logits = r.logits->value();
    const std::size_t k = logits.extent(1);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < k; ++c) {
            if (logits[i * k + c] > logits[i * k + best]) best = c;
        }
        correct += static_cast<int>(best) == y[i] ? 1 : 0;
    }
    return y.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(y.size());
}

TrainResult train_toy(const TrainConfig& config) {
    config.validate();
    ToyDatasetConfig dc = config.data;
    dc.seed = config.data.seed + config.seed;
    const auto data = ToyDataset::make(dc);

    NetworkSpec spec = NetworkSpec::toy(config.coefficient, dc.channels);
    spec.image_size = dc.image_size;
    spec.interblock_lowpass = config.interblock_lowpass;
    spec.power_iterations = config.power_iterations;
    Rng rng(config.seed * 7919 + 17);
    TrainResult result{Network(spec, rng), {}, 0.0};
    Network& net = result.network;

    const Tensor check_x = take_batch(data.train_x, 0, config.check_batch);
    auto record = [&](std::size_t epoch, double loss) {
        EpochCheck c;
        c.epoch = epoch;
        c.train_loss = loss;
        for (const auto& cc : check_contraction_over_batch(net, check_x, ContractionVariant::as_written)) {
            c.as_written.push_back(cc.proportion());
        }
        for (const auto& cc : check_contraction_over_batch(net, check_x, ContractionVariant::lowpassed_output)) {
            c.lowpassed.push_back(cc.proportion());
        }
        result.checks.push_back(std::move(c));
    };
    record(0, std::numeric_limits<double>::quiet_NaN());

    auto params = net.parameters();
    std::vector<Tensor> velocity;
    for (const auto& p : params) velocity.push_back(Tensor::zeros(p.value->shape()));

    const std::size_t n = data.train_x.extent(0);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::size_t step = 0;
    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        const double lr = (epoch - 1) >= (2 * config.epochs + 2) / 3 ? config.learning_rate / 10 : config.learning_rate;
        std::shuffle(order.begin(), order.end(), rng);
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t b = 0; b < n; b += config.batch_size) {
            const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(b),
                                               order.begin() + static_cast<std::ptrdiff_t>(std::min(n, b + config.batch_size)));
            if (idx.size() < 2) continue;
            std::vector<int> labels;
            for (std::size_t i : idx) labels.push_back(data.train_y[i]);
            ++step;
            double lv = std::numeric_limits<double>::quiet_NaN();
            try {
                Graph g;
                std::vector<Var> pv;
                const auto out = net.forward(g, g.constant(gather(data.train_x, idx)), BatchNormMode::train, &pv);
                const Var loss = ops::cross_entropy(*out.logits, labels);
                lv = loss.value().item();
                if (!std::isfinite(lv)) throw TrainingDiverged(epoch, step, lv);
                g.backward(loss);
                for (std::size_t i = 0; i < params.size(); ++i) {
                    velocity[i] *= config.momentum;
                    velocity[i] += g.grad(pv[i]);
                    params[i].value->add_scaled(velocity[i], -lr);
                    if (!params[i].value->all_finite()) throw TrainingDiverged(epoch, step, lv);
                }
                net.renormalize();
            } catch (const std::domain_error&) {
                // a non-finite intermediate tensor
                throw TrainingDiverged(epoch, step, lv);
            }
            loss_sum += lv;
            ++batches;
        }
        if (epoch % config.check_every == 0 || epoch == config.epochs) {
            record(epoch, batches ? loss_sum / static_cast<double>(batches) : 0.0);
        }
    }
    if (!data.test_y.empty()) result.test_accuracy = accuracy(net, data.test_x, data.test_y);
    return result;
}

void write_epoch_csv(std::ostream& os, const std::vector<EpochCheck>& checks) {
    os << "# lowpass-lab epoch-checks v1\n";
    os << "epoch,train_loss,block,as_written,lowpassed_output\n";
    os.precision(17);
    for (const auto& c : checks) {
        for (std::size_t b = 0; b < c.as_written.size(); ++b) {
            os << c.epoch << ',';
            if (!std::isnan(c.train_loss)) os << c.train_loss;
            os << ',' << b + 1 << ',' << c.as_written[b] << ',' << c.lowpassed[b] << '\n';
        }
    }
}

// ---- demos ----

namespace {

std::vector<Complex> dft1(const std::vector<double>& x) {
    std::vector<Complex> c(x.begin(), x.end());
    fft(c, false);
    return c;
}

std::vector<double> magnitudes(const std::vector<Complex>& c) {
    std::vector<double> m;
    for (const auto& v : c) m.push_back(std::abs(v));
    return m;
}

std::vector<double> decimate1(const std::vector<double>& x, std::size_t s) {
    std::vector<double> out;
    for (std::size_t i = 0; i < x.size(); i += s) out.push_back(x[i]);
    return out;
}

long peak_frequency(const std::vector<double>& mag) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < mag.size(); ++i) {
        if (mag[i] > mag[best] + 1e-9) best = i;
    }
    return signed_frequency(best, mag.size());
}

}  // namespace

AliasDemo demo_alias(std::size_t n, long mode, std::size_t factor) {
    if (n < 2 || factor == 0 || n % factor != 0) {
        throw std::invalid_argument("demo-alias: factor " + std::to_string(factor) + " must divide N = " +
                                    std::to_string(n));
    }
    AliasDemo d;
    d.n = n;
    d.factor = factor;
    d.mode = mode;
    d.cutoff = FrequencyBudget{n, factor}.cutoff();
    d.predicted_alias = fold_frequency(mode, n, factor);
    for (std::size_t i = 0; i < n; ++i) {
        d.signal.push_back(std::cos(2.0 * std::numbers::pi * static_cast<double>(mode) * static_cast<double>(i) /
                                    static_cast<double>(n)));
    }
    auto spec = dft1(d.signal);
    d.spectrum = magnitudes(spec);
    d.decimated_raw = decimate1(d.signal, factor);
    for (std::size_t k = 0; k < n; ++k) {
        if (static_cast<std::size_t>(std::abs(signed_frequency(k, n))) > d.cutoff) spec[k] = 0.0;
    }
    fft(spec, true);
    std::vector<double> filtered;
    for (const auto& v : spec) filtered.push_back(v.real() / static_cast<double>(n));
    d.decimated_filtered = decimate1(filtered, factor);
    d.spectrum_raw = magnitudes(dft1(d.decimated_raw));
    d.spectrum_filtered = magnitudes(dft1(d.decimated_filtered));
    d.raw_peak = peak_frequency(d.spectrum_raw);
    double ss = 0.0;
    for (double v : d.decimated_filtered) ss += v * v;
    d.filtered_norm = std::sqrt(ss);
    return d;
}

void write_alias_csv(std::ostream& os, const AliasDemo& d) {
    os << "# lowpass-lab demo-alias v1\n";
    os << "panel,index,value\n";
    os.precision(17);
    auto panel = [&](const char* name, const std::vector<double>& v) {
        for (std::size_t i = 0; i < v.size(); ++i) os << name << ',' << i << ',' << v[i] << '\n';
    };
    panel("signal", d.signal);
    panel("spectrum", d.spectrum);
    panel("decimated_raw", d.decimated_raw);
    panel("spectrum_raw", d.spectrum_raw);
    panel("decimated_filtered", d.decimated_filtered);
    panel("spectrum_filtered", d.spectrum_filtered);
}

bool alias_demo_consistent(const AliasDemo& d, std::string* why) {
    auto fail = [&](const std::string& msg) {
        if (why) *why = msg;
        return false;
    };
    if (std::abs(d.raw_peak) != std::abs(d.predicted_alias)) {
        return fail("raw decimation peaks at " + std::to_string(d.raw_peak) + ", fold formula predicts " +
                    std::to_string(d.predicted_alias));
    }
    const long folded_mode = std::abs(signed_frequency(wrap_frequency(d.mode, d.n), d.n));
    if (static_cast<std::size_t>(folded_mode) <= d.cutoff) {
        double diff = 0.0;
        for (std::size_t i = 0; i < d.decimated_raw.size(); ++i) {
            diff = std::max(diff, std::abs(d.decimated_raw[i] - d.decimated_filtered[i]));
        }
        if (diff > 1e-9) return fail("sub-cutoff mode distorted by the filter (max diff " + std::to_string(diff) + ")");
        if (std::abs(peak_frequency(d.spectrum_filtered)) != folded_mode) {
            return fail("filtered spectrum does not peak at the original frequency");
        }
    } else if (d.filtered_norm > 1e-9 * std::sqrt(static_cast<double>(d.n))) {
        return fail("supra-cutoff mode survives the filter (norm " + std::to_string(d.filtered_norm) + ")");
    }
    return true;
}

Tensor normalize_plane(const Tensor& x) {
    const double n = static_cast<double>(x.size());
    double mean = 0.0;
    for (double v : x.data()) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : x.data()) var += (v - mean) * (v - mean);
    const double sd = std::sqrt(var / n);
    Tensor out = x;
    for (double& v : out.data()) v = sd > 0.0 ? (v - mean) / sd : v - mean;
    return out;
}

ReluFourierReport verify_relu_fourier(const std::vector<Tensor>& images) {
    ReluFourierReport r;
    for (const auto& img : images) {
        const Tensor x = normalize_plane(img.rank() == 2 ? img : img.reshaped({img.extent(img.rank() - 2),
                                                                              img.extent(img.rank() - 1)}));
        const Tensor rx = relu(x);
        const Spectrum direct = dft2(rx);
        const Spectrum via = relu_via_frequency(x);
        double num = 0.0, den = 0.0;
        for (std::size_t i = 0; i < direct.coeffs().size(); ++i) {
            num += std::norm(direct.coeffs()[i] - via.coeffs()[i]);
            den += std::norm(direct.coeffs()[i]);
        }
        r.max_spectrum_error = std::max(r.max_spectrum_error, den > 0.0 ? std::sqrt(num / den) : std::sqrt(num));
        const Tensor back = idft2(via);
        const double rn = l2norm(rx);
        const double e = l2dist(back, rx);
        r.max_spatial_error = std::max(r.max_spatial_error, rn > 0.0 ? e / rn : e);
        ++r.images;
    }
    return r;
}

// ---- condition checks and searches ----

ConditionCheckResult check_conditions(const Network& net, const Tensor& pool, const ConditionCheckConfig& config,
                                      const std::string& coefficient) {
    if (config.batch_size < 2 || config.batch_size > pool.extent(0)) {
        throw std::invalid_argument("check-conditions: batch size must be in [2, " + std::to_string(pool.extent(0)) + "]");
    }
    if (config.seeds == 0) throw std::invalid_argument("check-conditions: need at least one seed");
    ConditionCheckResult out;
    out.reports.resize(config.seeds);
    parallel_for(config.seeds, [&](std::size_t s) {
        Rng rng(config.seed + s);
        std::vector<std::size_t> idx(pool.extent(0));
        std::iota(idx.begin(), idx.end(), 0);
        std::shuffle(idx.begin(), idx.end(), rng);
        idx.resize(config.batch_size);
        out.reports[s] = run_checks(net, gather(pool, idx), config.seed + s, config.dominance_mode);
    });
    out.columns = out.reports.front().layers;
    out.rows = summarize(out.reports, coefficient);
    return out;
}

std::vector<CollapseRun> search_collapse(const Network& net, const Tensor& images, const SearchConfig& base,
                                         const std::vector<DirectionBand>& bands) {
    std::vector<Network> variants{net, net};
    variants[0].set_interblock_lowpass(false);
    variants[1].set_interblock_lowpass(true);
    const char* names[2] = {"normal", "lowpass"};
    const std::size_t u = net.spec().budget_before(0).cutoff();

    std::vector<CollapseRun> runs;
    for (std::size_t v = 0; v < 2; ++v) {
        for (auto band : bands) {
            for (std::size_t i = 0; i < images.extent(0); ++i) runs.push_back({names[v], band, i, {}});
        }
    }
    parallel_for(runs.size(), [&](std::size_t j) {
        auto& run = runs[j];
        SearchConfig c = base;
        c.band = run.band;
        c.band_u = u;
        c.seed = base.seed + 1000 * run.image + static_cast<std::uint64_t>(run.band);
        const Network& vnet = variants[run.variant == std::string("normal") ? 0 : 1];
        run.record = run_search(vnet.feature_map(), take_batch(images, run.image, 1), c);
    });
    return runs;
}

// ---- csv ----

std::size_t CsvTable::column(const std::string& col) const {
    const auto it = std::find(header.begin(), header.end(), col);
    if (it == header.end()) throw std::out_of_range("csv '" + name + "' has no column '" + col + "'");
    return static_cast<std::size_t>(it - header.begin());
}

double CsvTable::number(std::size_t row, const std::string& col) const {
    const auto& cell = rows.at(row).at(column(col));
    if (cell.empty()) return std::numeric_limits<double>::quiet_NaN();
    return std::stod(cell);
}

CsvTable read_csv(std::istream& is) {
    auto split = [](const std::string& line) {
        std::vector<std::string> cells;
        std::string cell;
        std::istringstream ss(line);
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (!line.empty() && line.back() == ',') cells.emplace_back();
        return cells;
    };
    CsvTable t;
    std::string line;
    if (!std::getline(is, line)) throw std::runtime_error("csv: empty input");
    {
        std::istringstream ss(line);
        std::string hash, tool, version;
        ss >> hash >> tool >> t.name >> version;
        if (hash != "#" || tool != "lowpass-lab" || version.size() < 2 || version[0] != 'v') {
            throw std::runtime_error("csv: missing '# lowpass-lab <name> v<k>' version line");
        }
        t.version = std::stoi(version.substr(1));
    }
    if (!std::getline(is, line)) throw std::runtime_error("csv: missing header line");
    t.header = split(line);
    std::size_t lineno = 2;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto cells = split(line);
        if (cells.size() != t.header.size()) {
            throw std::runtime_error("csv: line " + std::to_string(lineno) + " has " + std::to_string(cells.size()) +
                                     " cells, header has " + std::to_string(t.header.size()));
        }
        t.rows.push_back(std::move(cells));
    }
    return t;
}

}  // namespace lowpass
