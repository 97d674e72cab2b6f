#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "lowpass/experiments.hpp"
#include "lowpass/tensor_io.hpp"

namespace fs = std::filesystem;
using namespace lowpass;

namespace {

constexpr int kPass = 0;
constexpr int kAssertion = 1;
constexpr int kUsage = 2;

struct Common {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out = ".";
};

nlohmann::json read_config(const Common& c) {
    if (c.config.empty()) return nlohmann::json::object();
    std::ifstream in(c.config);
    if (!in) throw IoError("cannot open config " + c.config);
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed config " + c.config + ": " + e.what());
    }
}

fs::path out_dir(const Common& c) {
    fs::path p(c.out);
    fs::create_directories(p);
    return p;
}

std::ofstream open_out(const fs::path& p) {
    std::ofstream os(p);
    if (!os) throw IoError("cannot write " + p.string());
    return os;
}

void write_json(const fs::path& p, const nlohmann::json& j) { open_out(p) << j.dump(2) << '\n'; }

std::optional<double> parse_coefficient(const std::string& s) {
    if (s == "none") return std::nullopt;
    return std::stod(s);
}

bool all_contractive(const Network& net) {
    for (std::size_t b = 0; b < net.num_blocks(); ++b) {
        const auto& c = net.block(b).spec().coefficient;
        if (!c || *c >= 1.0) return false;
    }
    return true;
}

std::string network_coefficient(const Network& net) { return coefficient_label(net.block(0).spec().coefficient); }

// Network from --network, or a toy network (optionally trained) otherwise.
Network obtain_network(const std::string& path, const std::string& coefficient, std::size_t train_epochs,
                       std::uint64_t seed) {
    if (!path.empty()) return Network::load(path);
    if (train_epochs > 0) {
        TrainConfig tc;
        tc.coefficient = parse_coefficient(coefficient);
        tc.epochs = train_epochs;
        tc.seed = seed;
        return train_toy(tc).network;
    }
    Rng rng(seed);
    return Network(NetworkSpec::toy(parse_coefficient(coefficient)), rng);
}

Tensor obtain_images(const std::string& path, std::uint64_t seed, bool test_split) {
    if (!path.empty()) return load_tensor(path);
    ToyDatasetConfig dc;
    dc.seed = seed;
    const auto data = ToyDataset::make(dc);
    return test_split ? data.test_x : data.train_x;
}

// An explicit flag wins over the config file, which wins over the default.
template <class T>
T pick(const CLI::App* sub, const std::string& flag, const nlohmann::json& cfg, const char* key, const T& value) {
    if (sub->count(flag) > 0) return value;
    return cfg.value(key, value);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Frequency-domain experiments on bi-Lipschitz residual networks", "lowpass-lab"};
    app.require_subcommand(1);
    app.fallthrough();
    Common common;
    app.add_option("--config", common.config, "JSON config file for the subcommand")->check(CLI::ExistingFile);
    app.add_option("--seed", common.seed, "Seed for every random choice");
    app.add_option("--out", common.out, "Output directory")->capture_default_str();

    // demo-alias
    auto* alias = app.add_subcommand("demo-alias", "Aliasing of a 1-D cosine under decimation");
    std::size_t alias_n = 64, alias_factor = 2;
    long alias_mode = 5;
    alias->add_option("--n", alias_n, "Signal length")->capture_default_str();
    alias->add_option("--mode", alias_mode, "Cosine frequency")->capture_default_str();
    alias->add_option("--factor", alias_factor, "Decimation factor")->capture_default_str();

    // verify-relu-fourier
    auto* relu = app.add_subcommand("verify-relu-fourier", "ReLU as a mask convolution in frequency space");
    std::string relu_image;
    std::size_t relu_count = 100, relu_size = 16;
    relu->add_option("--image", relu_image, "Tensor file with one or more [H,W] planes");
    relu->add_option("--count", relu_count, "Random images when no file is given")->capture_default_str();
    relu->add_option("--size", relu_size, "Random image extent")->capture_default_str();

    // check-conditions
    auto* check = app.add_subcommand("check-conditions", "Dominance and contraction proportions");
    std::string check_network, check_data, check_coefficient = "0.9", check_mode = "per-item";
    std::size_t check_batch = 32, check_seeds = 5, check_train = 0;
    check->add_option("--network", check_network, "network.json written by train-toy");
    check->add_option("--data", check_data, "Tensor file [B,C,H,W] to draw batches from");
    check->add_option("--coefficient", check_coefficient, "Spectral coefficient for a toy network, or none")
        ->capture_default_str();
    check->add_option("--train-epochs", check_train, "Train the toy network first")->capture_default_str();
    check->add_option("--batch-size", check_batch)->capture_default_str();
    check->add_option("--seeds", check_seeds, "Replicate batches")->capture_default_str();
    check->add_option("--dominance", check_mode, "per-item or pairwise")
        ->check(CLI::IsMember({"per-item", "pairwise"}))
        ->capture_default_str();

    // search-collapse
    auto* search = app.add_subcommand("search-collapse", "Band-restricted feature-collapse searches");
    std::string search_network, search_data, search_coefficient = "0.9";
    std::size_t search_images = 2, search_train = 0;
    search->add_option("--network", search_network, "network.json written by train-toy");
    search->add_option("--data", search_data, "Tensor file [B,C,H,W] of start points");
    search->add_option("--coefficient", search_coefficient, "Spectral coefficient for a toy network, or none")
        ->capture_default_str();
    search->add_option("--train-epochs", search_train, "Train the toy network first")->capture_default_str();
    search->add_option("--images", search_images, "Number of start points")->capture_default_str();

    // train-toy
    auto* train = app.add_subcommand("train-toy", "Train the toy network and track the contraction check");
    std::string train_coefficient;
    std::optional<std::size_t> train_epochs;
    train->add_option("--coefficient", train_coefficient, "Spectral coefficient or none");
    train->add_option("--epochs", train_epochs);

    // spectrum
    auto* spectrum = app.add_subcommand("spectrum", "Radial power spectrum of an image");
    std::string spectrum_image;
    spectrum->add_option("--image", spectrum_image, "Tensor file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kPass : kUsage;
    }

    try {
        const auto cfg = read_config(common);
        const std::uint64_t seed = common.seed.value_or(cfg.value("seed", std::uint64_t{0}));

        if (*alias) {
            const auto d = demo_alias(pick(alias, "--n", cfg, "n", alias_n), pick(alias, "--mode", cfg, "mode", alias_mode),
                                      pick(alias, "--factor", cfg, "factor", alias_factor));
            auto os = open_out(out_dir(common) / "demo_alias.csv");
            write_alias_csv(os, d);
            std::string why;
            const bool ok = alias_demo_consistent(d, &why);
            std::cout << "mode " << d.mode << ", cutoff " << d.cutoff << ", raw peak " << d.raw_peak
                      << ", predicted alias " << d.predicted_alias << ", filtered norm " << d.filtered_norm << '\n';
            if (!ok) std::cerr << "demo-alias: " << why << '\n';
            return ok ? kPass : kAssertion;
        }

        if (*relu) {
            std::vector<Tensor> images;
            if (!relu_image.empty()) {
                const Tensor t = load_tensor(relu_image);
                if (t.rank() < 2) throw ShapeError("verify-relu-fourier: image must have rank >= 2");
                const std::size_t h = t.extent(t.rank() - 2), w = t.extent(t.rank() - 1);
                const Tensor planes = t.reshaped({t.size() / (h * w), h, w});
                for (std::size_t i = 0; i < planes.extent(0); ++i) images.push_back(batch_item(planes, i).reshaped({h, w}));
            } else {
                Rng rng(seed);
                const std::size_t n = pick(relu, "--size", cfg, "size", relu_size);
                for (std::size_t i = 0; i < pick(relu, "--count", cfg, "count", relu_count); ++i) images.push_back(Tensor::randn({n, n}, rng));
            }
            const auto r = verify_relu_fourier(images);
            write_json(out_dir(common) / "relu_fourier.json", {{"images", r.images},
                                                               {"max_spectrum_error", r.max_spectrum_error},
                                                               {"max_spatial_error", r.max_spatial_error},
                                                               {"passed", r.passed()}});
            std::cout << r.images << " images, spectrum error " << r.max_spectrum_error << ", spatial error "
                      << r.max_spatial_error << '\n';
            return r.passed() ? kPass : kAssertion;
        }

        if (*check) {
            const Network net = obtain_network(check_network, pick(check, "--coefficient", cfg, "coefficient", check_coefficient),
                                               pick(check, "--train-epochs", cfg, "train_epochs", check_train), seed);
            const Tensor pool = obtain_images(check_data, seed, true);
            ConditionCheckConfig cc;
            cc.batch_size = pick(check, "--batch-size", cfg, "batch_size", check_batch);
            cc.seeds = pick(check, "--seeds", cfg, "seeds", check_seeds);
            cc.seed = seed;
            cc.dominance_mode = pick(check, "--dominance", cfg, "dominance", check_mode) == "pairwise" ? DominanceMode::pairwise_difference
                                                                                  : DominanceMode::per_item;
            const auto result = check_conditions(net, pool, cc, network_coefficient(net));
            const auto dir = out_dir(common);
            auto os = open_out(dir / "check_conditions.csv");
            write_table_csv(os, result.columns, result.rows);
            nlohmann::json reports = nlohmann::json::array();
            for (const auto& r : result.reports) reports.push_back(to_json(r));
            write_json(dir / "check_conditions.json", {{"coefficient", network_coefficient(net)}, {"reports", reports}});
            bool ok = true;
            if (all_contractive(net)) {
                for (const auto& r : result.reports) {
                    for (const auto& c : r.contraction_as_written) ok = ok && c.proportion() == 1.0;
                }
            }
            for (const auto& row : result.rows) {
                std::cout << row.condition << " c=" << row.coefficient << ':';
                for (double m : row.mean) std::cout << ' ' << m;
                std::cout << '\n';
            }
            if (!ok) std::cerr << "check-conditions: contraction violated although every block has c < 1\n";
            return ok ? kPass : kAssertion;
        }

        if (*search) {
            const Network net = obtain_network(search_network, pick(search, "--coefficient", cfg, "coefficient", search_coefficient),
                                               pick(search, "--train-epochs", cfg, "train_epochs", search_train), seed);
            const Tensor all = obtain_images(search_data, seed, true);
            const std::size_t count = std::min<std::size_t>(pick(search, "--images", cfg, "images", search_images), all.extent(0));
            SearchConfig sc = search_config_from_json(cfg.value("search", nlohmann::json::object()));
            sc.seed = seed;
            const auto runs = search_collapse(net, take_batch(all, 0, count), sc);

            const auto dir = out_dir(common);
            fs::create_directories(dir / "trajectories");
            std::vector<LabeledTrajectory> labeled;
            for (const auto& r : runs) {
                auto os = open_out(dir / "trajectories" /
                                   (r.variant + "_" + std::string(to_string(r.band)) + "_" + std::to_string(r.image) + ".csv"));
                write_trajectory_csv(os, r.record);
                labeled.push_back({r.variant, r.band, &r.record});
            }
            const auto rows = collapse_report(labeled);

            // The low-band bound only applies to the filtered variant with contractive blocks.
            bool ok = true;
            std::optional<double> lower;
            if (all_contractive(net)) {
                Network filtered = net;
                filtered.set_interblock_lowpass(true);
                lower = chain_lower_constant(filtered);
                for (const auto& r : runs) {
                    if (r.variant != "lowpass" || r.band != DirectionBand::low) continue;
                    ok = ok && r.record.final_feat_dist() >= *lower * r.record.low_dist.back() * (1 - 1e-9);
                }
            }
            write_json(dir / "collapse_summary.json",
                       {{"config", to_json(sc)},
                        {"rows", to_json(rows)},
                        {"lowband_lower_constant", lower ? nlohmann::json(*lower) : nlohmann::json(nullptr)}});
            for (const auto& r : rows) {
                std::cout << r.variant << ' ' << to_string(r.band) << ": |x-x0| " << r.input_dist.mean << ", |y-y0| "
                          << r.feat_dist.mean << '\n';
            }
            if (!ok) std::cerr << "search-collapse: low-band lower bound violated\n";
            return ok ? kPass : kAssertion;
        }

        if (*train) {
            TrainConfig tc = train_config_from_json(cfg);
            if (common.seed) tc.seed = *common.seed;
            if (!train_coefficient.empty()) tc.coefficient = parse_coefficient(train_coefficient);
            if (train_epochs) tc.epochs = *train_epochs;
            tc.validate();
            TrainResult r = [&] {
                try {
                    return train_toy(tc);
                } catch (const TrainingDiverged& e) {
                    std::cerr << nlohmann::json{{"error", "diverged"}, {"epoch", e.epoch}, {"step", e.step}}.dump()
                              << '\n';
                    throw;
                }
            }();
            const auto dir = out_dir(common);
            r.network.save(dir / "model");
            auto os = open_out(dir / "epoch_checks.csv");
            write_epoch_csv(os, r.checks);
            write_json(dir / "train_summary.json",
                       {{"config", to_json(tc)}, {"test_accuracy", r.test_accuracy}, {"checkpoints", r.checks.size()}});
            std::cout << "test accuracy " << r.test_accuracy << '\n';
            bool ok = true;
            if (tc.coefficient && *tc.coefficient < 1.0) {
                for (const auto& c : r.checks) {
                    for (double p : c.as_written) ok = ok && p == 1.0;
                }
            }
            if (!ok) std::cerr << "train-toy: contraction check below 1.0 with c < 1\n";
            return ok ? kPass : kAssertion;
        }

        if (*spectrum) {
            const Tensor t = load_tensor(spectrum_image);
            if (t.rank() < 2) throw ShapeError("spectrum: image must have rank >= 2");
            auto os = open_out(out_dir(common) / "spectrum.csv");
            write_radial_csv(os, radial_spectrum(t));
            return kPass;
        }
    } catch (const TrainingDiverged&) {
        return kAssertion;
    } catch (const std::exception& e) {
        std::cerr << "lowpass-lab: " << e.what() << '\n';
        return kUsage;
    }
    return kUsage;
}
