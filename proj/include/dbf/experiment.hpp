#pragma once

// Config-driven training runs, reports and the rho grid.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dbf/eval.hpp"
#include "dbf/flops.hpp"
#include "dbf/nn.hpp"
#include "dbf/optim.hpp"
#include "dbf/schedule.hpp"
#include "dbf/synth.hpp"

namespace dbf {

inline constexpr std::string_view kConfigSchema = "dbf-experiment/1";

struct ExperimentConfig {
    std::uint64_t seed = 0;
    std::uint64_t total_epochs = 16;
    std::uint64_t eval_every = 4;  // 0: evaluate after the last epoch only
    std::uint64_t switch_epoch = 4;  // used by the grid runner
    ArchConfig arch = ArchConfig::desk_default();
    SceneConfig data;
    std::size_t n_train = 256;
    std::size_t n_val = 64;
    LrConfig lr;
    SgdConfig sgd;
    TimeModel time_model;
    ScheduleSpec schedule = ScheduleSpec::full_training();
    std::filesystem::path output_dir = "out";

    // Throws ConfigError naming the first invalid field.
    void validate() const;

    // Desk-scale defaults used by the shipped config and the acceptance suite.
    static ExperimentConfig desk_default();
};

// JSON document with "schema": "dbf-experiment/1"; missing fields take the
// desk defaults. See configs/desk.json and README for the schema.
ExperimentConfig parse_config(std::string_view json_text);
ExperimentConfig load_config(const std::filesystem::path& path);
std::string config_to_json(const ExperimentConfig& cfg);

// Compact schedule text for CSV cells, e.g. "4:1;inf:inf".
std::string schedule_cell(const ScheduleSpec& spec);

struct TrainSettings {
    std::uint64_t seed = 0;
    LrConfig lr;
    SgdConfig sgd;
};

struct Batch {
    Tensor images;   // [B, C, H, W]
    Tensor targets;  // [B, S, S, 1 + C + 4]
};

// Deterministic permutation of [0, n) for one epoch.
std::vector<std::size_t> epoch_order(std::uint64_t seed, std::uint64_t epoch, std::size_t n);

Batch make_batch(std::span<const Scene> scenes, std::span<const std::size_t> indices, const ArchConfig& arch);

std::uint64_t iterations_per_epoch(std::size_t n_samples, std::size_t batch_size);

// forward (gated by freeze) -> loss -> backward -> clip -> SGD over
// `trainable`. Returns the batch loss.
double train_step(Detector& d, std::span<Parameter> trainable, const Batch& batch, FreezeSignal freeze,
                  OptimState& state, double lr, const SgdConfig& sgd);

struct EpochStats {
    double mean_loss = 0.0;
    double last_lr = 0.0;
};

// One pass over `train` in epoch_order, then records the epoch in `ledger`.
EpochStats train_epoch(Detector& d, std::span<const Scene> train, std::uint64_t epoch, FreezeSignal freeze,
                       OptimState& state, FlopsLedger& ledger, const TrainSettings& settings);

EvalReport evaluate(const Detector& d, std::span<const Scene> scenes, std::size_t batch_size);

struct EpochRecord {
    std::uint64_t epoch = 0;
    bool frozen = false;
    double mean_loss = 0.0;
    double lr = 0.0;
    BigInt cum_flops;
    std::optional<double> val_map50;
};

struct ExperimentResult {
    std::vector<EpochRecord> records;
    std::optional<EvalReport> final_eval;
    FlopsLedger ledger;
    Detector detector;
};

ExperimentResult run_experiment(const ExperimentConfig& cfg);
ExperimentResult run_experiment(const ExperimentConfig& cfg, const Dataset& data);

// Writes curves.csv and summary.csv into `dir`. With no baseline the Δ cells
// hold "NA".
void emit_report(std::span<const EpochRecord> records, const FlopsLedger& ledger,
                 std::optional<double> final_map50, const FlopsLedger* baseline, const ExperimentConfig& cfg,
                 const std::filesystem::path& dir);

// emit_report plus ledger.csv, checkpoint.bin and config.json.
void write_run(const ExperimentResult& result, const ExperimentConfig& cfg, const FlopsLedger* baseline,
               const std::filesystem::path& dir);

// Re-emits the summary of a finished run directory against a baseline run.
void report_run(const std::filesystem::path& run_dir, const std::filesystem::path& baseline_dir);

struct GridEntry {
    std::uint64_t seed = 0;
    Rho rho = Rho(1);
    ExperimentResult result;
    std::uint64_t frozen_epochs = 0;
};

struct GridResult {
    std::vector<GridEntry> entries;
};

// Runs, per seed, rho = 1 (full training, the baseline) and every other rho as
// "rho = 1 until switch_epoch, then rho". Writes <out>/seed<s>/rho_<r>/ run
// directories plus grid.csv and delta_map.csv in `out`.
GridResult run_grid(const ExperimentConfig& cfg, std::span<const Rho> rhos, std::span<const std::uint64_t> seeds,
                    const std::filesystem::path& out);

}  // namespace dbf
