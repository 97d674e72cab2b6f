#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "lowpass/analysis.hpp"
#include "lowpass/collapse.hpp"
#include "lowpass/nn.hpp"

namespace lowpass {

// ---- parallelism ----

/// Worker count: LOWPASS_LAB_THREADS when set to a positive integer, else the
/// hardware concurrency (at least 1).
std::size_t lab_threads();

/// Runs fn(0..n-1) on up to lab_threads() threads; rethrows the first error.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

// ---- data ----

struct ToyDatasetConfig {
    std::size_t train_size = 512;
    std::size_t test_size = 256;
    std::size_t channels = 1;
    std::size_t image_size = 16;
    /// Standard deviation of the high-band noise per pixel.
    double noise = 0.05;
    std::uint64_t seed = 0;
};

/// Images are random mixtures of the |k| <= 1 Fourier modes plus small
/// high-band noise; the label is the sign of a fixed linear form in the mode
/// amplitudes. Each split holds exactly half of each class.
struct ToyDataset {
    Tensor train_x, test_x;
    std::vector<int> train_y, test_y;

    static ToyDataset make(const ToyDatasetConfig& config);
};

/// First `count` items of a [B,...] tensor.
Tensor take_batch(const Tensor& x, std::size_t begin, std::size_t count);

// ---- training ----

class TrainingDiverged : public std::runtime_error {
public:
    TrainingDiverged(std::size_t epoch, std::size_t step, double loss);
    std::size_t epoch, step;
    double loss;
};

struct TrainConfig {
    std::size_t epochs = 12;
    std::size_t batch_size = 32;
    double learning_rate = 0.05;
    double momentum = 0.9;
    std::optional<double> coefficient = 0.9;
    std::uint64_t seed = 0;
    std::size_t check_every = 1;
    std::size_t check_batch = 32;
    bool interblock_lowpass = false;
    /// Power iterations per SGD step for the persistent estimate.
    int power_iterations = 10;
    ToyDatasetConfig data;

    void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});
std::string coefficient_label(const std::optional<double>& c);

struct EpochCheck {
    std::size_t epoch = 0;
    double train_loss = 0.0;  // mean over the epoch; NaN before training
    std::vector<double> as_written;
    std::vector<double> lowpassed;
};

struct TrainResult {
    Network network;
    std::vector<EpochCheck> checks;
    double test_accuracy = 0.0;
};

/// SGD with momentum on the toy network, soft spectral normalization after
/// every step, learning rate divided by 10 at two thirds of training. The
/// theorem check runs on a fixed batch at epoch 0 and every check_every epochs.
TrainResult train_toy(const TrainConfig& config);

double accuracy(const Network& net, const Tensor& x, const std::vector<int>& y);

void write_epoch_csv(std::ostream& os, const std::vector<EpochCheck>& checks);

// ---- demos ----

struct AliasDemo {
    std::size_t n = 0, factor = 0;
    long mode = 0;
    std::size_t cutoff = 0;
    std::vector<double> signal, decimated_raw, decimated_filtered;
    std::vector<double> spectrum, spectrum_raw, spectrum_filtered;  // DFT magnitudes
    long raw_peak = 0;       // signed frequency of the largest decimated bin
    long predicted_alias = 0;
    double filtered_norm = 0.0;
};

/// 1-D cosine of frequency `mode` on n samples, decimated by `factor` with and
/// without an ideal low-pass first.
AliasDemo demo_alias(std::size_t n, long mode, std::size_t factor);
void write_alias_csv(std::ostream& os, const AliasDemo& d);
/// Checks the demo against the fold formula and the filter behaviour.
bool alias_demo_consistent(const AliasDemo& d, std::string* why = nullptr);

struct ReluFourierReport {
    std::size_t images = 0;
    double max_spectrum_error = 0.0;  // relative, dft2(relu x) vs M * X / HW
    double max_spatial_error = 0.0;   // relative, inverse of the frequency path vs relu x
    bool passed(double tol = 1e-8) const { return max_spectrum_error <= tol && max_spatial_error <= tol; }
};

/// Normalizes each plane to zero mean and unit deviation, then compares the
/// spatial ReLU with the frequency-domain mask convolution.
ReluFourierReport verify_relu_fourier(const std::vector<Tensor>& images);
Tensor normalize_plane(const Tensor& x);

// ---- condition checks and searches ----

struct ConditionCheckConfig {
    std::size_t batch_size = 32;
    std::size_t seeds = 5;
    std::uint64_t seed = 0;
    DominanceMode dominance_mode = DominanceMode::per_item;
    ToyDatasetConfig data;
};

struct ConditionCheckResult {
    std::vector<CheckReport> reports;
    std::vector<TableRow> rows;
    std::vector<std::string> columns;
};

/// One report per replicate seed, each on a fresh batch drawn from `pool`.
ConditionCheckResult check_conditions(const Network& net, const Tensor& pool, const ConditionCheckConfig& config,
                                      const std::string& coefficient);

struct CollapseRun {
    std::string variant;
    DirectionBand band;
    std::size_t image;
    TrajectoryRecord record;
};

/// Every (variant, band, image) combination; the `lowpass` variant is the same
/// weights with inter-block low-pass filters switched on.
std::vector<CollapseRun> search_collapse(const Network& net, const Tensor& images, const SearchConfig& base,
                                         const std::vector<DirectionBand>& bands = {DirectionBand::all,
                                                                                    DirectionBand::low,
                                                                                    DirectionBand::high});

// ---- csv ----

struct CsvTable {
    std::string name;
    int version = 0;
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(const std::string& name) const;
    double number(std::size_t row, const std::string& column) const;
};

/// Parses "# lowpass-lab <name> v<k>", a header line and rectangular rows.
CsvTable read_csv(std::istream& is);

}  // namespace lowpass
