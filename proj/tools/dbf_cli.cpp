// dbf: train detectors under freezing schedules and report their cost.
//
//   dbf run    --config <file> [--baseline <ledger.csv>] [--out <dir>]
//   dbf report --run <dir> --baseline <dir>
//   dbf grid   --config <file> --rhos 1,2,5,10,inf [--seeds 0] [--out <dir>]
//   dbf eval   --dets <csv> --gts <csv> --classes <C>
//   dbf dataset --config <file> --out <dir>
//   dbf estimate --epochs 400 --switch 50 --rhos 1,2,5,10,inf [--unfrozen 23 --frozen 16]

#include <cstdio>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dbf/csv.hpp"
#include "dbf/errors.hpp"
#include "dbf/experiment.hpp"

namespace {

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> items;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ',')) {
        if (!item.empty()) items.push_back(item);
    }
    return items;
}

std::vector<dbf::Rho> parse_rhos(const std::string& text) {
    std::vector<dbf::Rho> rhos;
    for (const std::string& s : split_list(text)) rhos.push_back(dbf::Rho::parse(s));
    if (rhos.empty()) throw dbf::ConfigError("--rhos must list at least one value");
    return rhos;
}

void print_epoch(const dbf::EpochRecord& r) {
    std::cout << "epoch " << r.epoch << (r.frozen ? " frozen  " : " trained ") << " loss "
              << dbf::format_double(r.mean_loss) << " lr " << dbf::format_double(r.lr) << " F_total "
              << r.cum_flops.str();
    if (r.val_map50) std::cout << " mAP@50 " << dbf::format_double(*r.val_map50);
    std::cout << '\n';
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Dynamic backbone freezing lab"};
    app.require_subcommand(1);

    std::string config_path, baseline_path, out_dir, run_dir, rhos_text = "1,2,5,10,inf", seeds_text;
    auto* run = app.add_subcommand("run", "Train one configuration and write curves, ledger and summary");
    run->add_option("--config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    run->add_option("--baseline", baseline_path, "Baseline ledger.csv for delta FLOPs")->check(CLI::ExistingFile);
    run->add_option("--out", out_dir, "Output directory (default: config output_dir)");

    auto* report = app.add_subcommand("report", "Re-emit a run summary against a baseline run");
    report->add_option("--run", run_dir, "Run directory")->required()->check(CLI::ExistingDirectory);
    report->add_option("--baseline", baseline_path, "Baseline run directory")->required()->check(CLI::ExistingDirectory);

    auto* grid = app.add_subcommand("grid", "Full training baseline plus one DBF run per rho");
    grid->add_option("--config", config_path, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    grid->add_option("--rhos", rhos_text, "Comma-separated rho values, 'inf' allowed");
    grid->add_option("--seeds", seeds_text, "Comma-separated seeds (default: config seed)");
    grid->add_option("--out", out_dir, "Output directory (default: config output_dir)");

    std::string dets_path, gts_path;
    std::size_t num_classes = 0;
    auto* eval = app.add_subcommand("eval", "mAP@50 of a detections CSV against a ground-truth CSV");
    eval->add_option("--dets", dets_path)->required()->check(CLI::ExistingFile);
    eval->add_option("--gts", gts_path)->required()->check(CLI::ExistingFile);
    eval->add_option("--classes", num_classes)->required();

    auto* dataset = app.add_subcommand("dataset", "Dump the synthetic train/val scenes");
    dataset->add_option("--config", config_path)->required()->check(CLI::ExistingFile);
    dataset->add_option("--out", out_dir)->required();

    std::uint64_t epochs = 400, switch_epoch = 50;
    dbf::TimeModel tm;
    auto* estimate = app.add_subcommand("estimate", "Training-time estimate per schedule from per-epoch minutes");
    estimate->add_option("--epochs", epochs);
    estimate->add_option("--switch", switch_epoch);
    estimate->add_option("--rhos", rhos_text);
    estimate->add_option("--unfrozen", tm.unfrozen_epoch_minutes);
    estimate->add_option("--frozen", tm.frozen_epoch_minutes);

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) {
            dbf::ExperimentConfig cfg = dbf::load_config(config_path);
            if (!out_dir.empty()) cfg.output_dir = out_dir;
            std::optional<dbf::FlopsLedger> baseline;
            if (!baseline_path.empty()) baseline = dbf::FlopsLedger::read_csv(baseline_path);
            const dbf::ExperimentResult result = dbf::run_experiment(cfg);
            for (const dbf::EpochRecord& r : result.records) print_epoch(r);
            dbf::write_run(result, cfg, baseline ? &*baseline : nullptr, cfg.output_dir);
            std::cout << "wrote " << cfg.output_dir.string() << '\n';
        } else if (*report) {
            dbf::report_run(run_dir, baseline_path);
            std::cout << "wrote " << (std::filesystem::path(run_dir) / "summary.csv").string() << '\n';
        } else if (*grid) {
            dbf::ExperimentConfig cfg = dbf::load_config(config_path);
            if (!out_dir.empty()) cfg.output_dir = out_dir;
            std::vector<std::uint64_t> seeds;
            for (const std::string& s : split_list(seeds_text)) seeds.push_back(std::stoull(s));
            if (seeds.empty()) seeds.push_back(cfg.seed);
            const dbf::GridResult result = dbf::run_grid(cfg, parse_rhos(rhos_text), seeds, cfg.output_dir);
            for (const dbf::GridEntry& e : result.entries) {
                std::cout << "seed " << e.seed << " rho " << e.rho.to_string() << " frozen epochs " << e.frozen_epochs
                          << " F_total " << e.result.ledger.total().str();
                if (e.result.final_eval) std::cout << " mAP@50 " << dbf::format_double(e.result.final_eval->map50);
                std::cout << '\n';
            }
            std::cout << "wrote " << cfg.output_dir.string() << '\n';
        } else if (*eval) {
            const auto dets = dbf::read_detections_csv(dets_path);
            const auto gts = dbf::read_ground_truths_csv(gts_path);
            const dbf::EvalReport r = dbf::map50(dets, gts, num_classes);
            std::cout << "class,ground_truths,detections,ap50\n";
            for (const dbf::ClassReport& c : r.classes) {
                std::cout << c.class_id << ',' << c.num_ground_truths << ',' << c.num_detections << ','
                          << dbf::format_double(c.ap) << '\n';
            }
            std::cout << "mAP@50," << dbf::format_double(r.map50) << '\n';
        } else if (*dataset) {
            const dbf::ExperimentConfig cfg = dbf::load_config(config_path);
            const dbf::Dataset data = dbf::generate_dataset(cfg.data, cfg.n_train, cfg.n_val);
            dbf::dump_dataset(data.train, 0, std::filesystem::path(out_dir) / "train");
            dbf::dump_dataset(data.val, cfg.n_train, std::filesystem::path(out_dir) / "val");
            std::cout << "wrote " << out_dir << '\n';
        } else if (*estimate) {
            tm.validate();
            const double full = dbf::estimate_training_time(tm, dbf::ScheduleSpec::full_training(), epochs);
            std::cout << "schedule,minutes,delta_minutes\n";
            for (const dbf::Rho& rho : parse_rhos(rhos_text)) {
                const dbf::ScheduleSpec spec =
                    rho == dbf::Rho(1) ? dbf::ScheduleSpec::full_training() : dbf::ScheduleSpec::dynamic(switch_epoch, rho);
                const double minutes = dbf::estimate_training_time(tm, spec, epochs);
                std::cout << dbf::schedule_cell(spec) << ',' << dbf::format_double(minutes) << ','
                          << dbf::format_double(minutes - full) << '\n';
            }
        }
    } catch (const std::exception& e) {
        std::cerr << "dbf: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
