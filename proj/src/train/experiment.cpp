#include "dbf/experiment.hpp"

#include <cmath>
#include <fstream>
#include <map>
#include <numeric>

#include "dbf/csv.hpp"
#include "dbf/errors.hpp"
#include "dbf/rng.hpp"

namespace dbf {

namespace {

constexpr std::uint64_t kShuffleStream = 0x5348;  // "SH"
constexpr const char* kCurvesHeader = "epoch,frozen,mean_loss,lr,cum_flops,val_map50";
constexpr const char* kSummaryHeader =
    "schedule,total_epochs,final_map50,total_flops,baseline_total_flops,delta_flops,estimated_minutes,"
    "full_training_minutes,delta_minutes";
constexpr const char* kNotAvailable = "NA";

std::string optional_cell(const std::optional<double>& v) { return v ? format_double(*v) : kNotAvailable; }

void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
    out << text;
    if (!out) throw IoError("write failed for '" + path.string() + "'");
}

}  // namespace

std::vector<std::size_t> epoch_order(std::uint64_t seed, std::uint64_t epoch, std::size_t n) {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    KeyedStream rng(derive_key(seed, kShuffleStream, epoch));
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    return order;
}

Batch make_batch(std::span<const Scene> scenes, std::span<const std::size_t> indices, const ArchConfig& arch) {
    if (indices.empty()) throw ShapeError("make_batch: empty batch");
    const std::size_t per_sample = element_count(arch.input_shape);
    std::vector<double> pixels;
    pixels.reserve(indices.size() * per_sample);
    std::vector<std::vector<GroundTruth>> gts;
    gts.reserve(indices.size());
    for (std::size_t i : indices) {
        const Scene& s = scenes[i];
        if (s.image.shape() != arch.input_shape) {
            throw ShapeError("scene image " + shape_string(s.image.shape()) + " does not match model input " +
                             shape_string(arch.input_shape));
        }
        pixels.insert(pixels.end(), s.image.values().begin(), s.image.values().end());
        gts.push_back(s.ground_truths);
    }
    Shape shape{indices.size()};
    shape.insert(shape.end(), arch.input_shape.begin(), arch.input_shape.end());
    return Batch{Tensor(std::move(shape), std::move(pixels)),
                 encode_targets(gts, arch.grid_size, arch.num_classes, static_cast<double>(arch.input_shape[1]))};
}

std::uint64_t iterations_per_epoch(std::size_t n_samples, std::size_t batch_size) {
    return (n_samples + batch_size - 1) / batch_size;
}

double train_step(Detector& d, std::span<Parameter> trainable, const Batch& batch, FreezeSignal freeze,
                  OptimState& state, double lr, const SgdConfig& sgd) {
    Tape tape;
    const PredictionGrid pred = detector_forward(d, batch.images, freeze, &tape);
    const Tensor loss = detection_loss(pred, batch.targets);
    const Gradients grads = clip_gradients(backward(loss, tape), sgd.clip_max_norm);
    sgd_step(trainable, grads, state, lr, sgd);
    return loss.item();
}

EpochStats train_epoch(Detector& d, std::span<const Scene> train, std::uint64_t epoch, FreezeSignal freeze,
                       OptimState& state, FlopsLedger& ledger, const TrainSettings& settings) {
    for (const EpochFlops& r : ledger.records()) {
        if (r.epoch == epoch) throw LedgerError("epoch " + std::to_string(epoch) + " already trained");
    }
    const std::size_t bs = settings.sgd.batch_size;
    const std::uint64_t iters = iterations_per_epoch(train.size(), bs);
    const std::vector<std::size_t> order = epoch_order(settings.seed, epoch, train.size());

    EpochStats stats;
    double loss_sum = 0.0;
    for (std::uint64_t it = 0; it < iters; ++it) {
        const std::size_t first = it * bs;
        const std::size_t count = std::min(bs, train.size() - first);
        const Batch batch = make_batch(train, std::span(order).subspan(first, count), d.arch());
        const double lr = lr_at(epoch * iters + it, epoch, settings.lr);
        loss_sum += train_step(d, d.parameters(), batch, freeze, state, lr, settings.sgd);
        stats.last_lr = lr;
    }
    if (iters > 0) stats.mean_loss = loss_sum / static_cast<double>(iters);
    ledger.record_epoch(epoch, freeze, model_flops(d), train.size());
    return stats;
}

EvalReport evaluate(const Detector& d, std::span<const Scene> scenes, std::size_t batch_size) {
    std::vector<Detection> dets;
    std::vector<GroundTruth> gts;
    std::vector<std::size_t> indices(scenes.size());
    std::iota(indices.begin(), indices.end(), std::size_t{0});
    const auto image_size = static_cast<double>(d.arch().input_shape[1]);
    for (std::size_t first = 0; first < scenes.size(); first += batch_size) {
        const std::size_t count = std::min(batch_size, scenes.size() - first);
        const Batch batch = make_batch(scenes, std::span(indices).subspan(first, count), d.arch());
        const PredictionGrid pred = detector_forward(d, batch.images, FreezeSignal::unfrozen, nullptr);
        for (Detection det : decode_predictions(pred, image_size)) {
            det.image_id += first;
            dets.push_back(det);
        }
    }
    for (std::size_t i = 0; i < scenes.size(); ++i) {
        for (GroundTruth g : scenes[i].ground_truths) {
            g.image_id = i;
            gts.push_back(g);
        }
    }
    return map50(dets, gts, d.arch().num_classes);
}

ExperimentResult run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    SceneConfig data = cfg.data;
    data.seed = cfg.seed;
    return run_experiment(cfg, generate_dataset(data, cfg.n_train, cfg.n_val));
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const Dataset& data) {
    cfg.validate();
    ExperimentResult result;
    result.detector = build_detector(cfg.arch, cfg.seed);
    const TrainSettings settings{cfg.seed, cfg.lr, cfg.sgd};
    OptimState state;
    std::optional<FreezeSignal> previous;

    for (std::uint64_t epoch = 0; epoch < cfg.total_epochs; ++epoch) {
        const FreezeSignal freeze = phase_freeze_signal(epoch, cfg.schedule);
        if (cfg.sgd.reset_velocity_on_unfreeze && previous == FreezeSignal::frozen &&
            freeze == FreezeSignal::unfrozen) {
            for (const Parameter& p : result.detector.group_parameters(Group::backbone)) state.velocity.erase(p.id);
        }
        previous = freeze;

        const EpochStats stats = train_epoch(result.detector, data.train, epoch, freeze, state, result.ledger, settings);

        EpochRecord rec;
        rec.epoch = epoch;
        rec.frozen = freeze == FreezeSignal::frozen;
        rec.mean_loss = stats.mean_loss;
        rec.lr = stats.last_lr;
        rec.cum_flops = result.ledger.total();
        const bool last = epoch + 1 == cfg.total_epochs;
        const bool due = cfg.eval_every > 0 && (epoch + 1) % cfg.eval_every == 0;
        if (!data.val.empty() && (due || last)) {
            EvalReport report = evaluate(result.detector, data.val, cfg.sgd.batch_size);
            rec.val_map50 = report.map50;
            if (last) result.final_eval = std::move(report);
        }
        result.records.push_back(std::move(rec));
    }
    return result;
}

void emit_report(std::span<const EpochRecord> records, const FlopsLedger& ledger, std::optional<double> final_map50,
                 const FlopsLedger* baseline, const ExperimentConfig& cfg, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    {
        CsvWriter curves(dir / "curves.csv", kCurvesHeader);
        for (const EpochRecord& r : records) {
            curves.row(r.epoch, r.frozen, r.mean_loss, r.lr, r.cum_flops, optional_cell(r.val_map50));
        }
    }

    const std::uint64_t epochs = ledger.records().size();
    const BigInt total = total_flops(ledger);
    std::string baseline_total = kNotAvailable, delta = kNotAvailable;
    if (baseline) {
        baseline_total = total_flops(*baseline).str();
        delta = delta_flops(ledger, *baseline).str();
    }
    std::string minutes = kNotAvailable, full_minutes = kNotAvailable, delta_minutes = kNotAvailable;
    if (epochs > 0) {
        const double est = estimate_training_time(cfg.time_model, cfg.schedule, epochs);
        const double full = estimate_training_time(cfg.time_model, ScheduleSpec::full_training(), epochs);
        minutes = format_double(est);
        full_minutes = format_double(full);
        delta_minutes = format_double(est - full);
    }
    CsvWriter summary(dir / "summary.csv", kSummaryHeader);
    summary.row(schedule_cell(cfg.schedule), epochs, optional_cell(final_map50), total, baseline_total, delta, minutes,
                full_minutes, delta_minutes);
}

void write_run(const ExperimentResult& result, const ExperimentConfig& cfg, const FlopsLedger* baseline,
               const std::filesystem::path& dir) {
    std::optional<double> final_map;
    if (result.final_eval) final_map = result.final_eval->map50;
    emit_report(result.records, result.ledger, final_map, baseline, cfg, dir);
    result.ledger.write_csv(dir / "ledger.csv");
    save_checkpoint(result.detector, dir / "checkpoint.bin");
    write_text(dir / "config.json", config_to_json(cfg));
}

void report_run(const std::filesystem::path& run_dir, const std::filesystem::path& baseline_dir) {
    const ExperimentConfig cfg = load_config(run_dir / "config.json");
    const FlopsLedger ledger = FlopsLedger::read_csv(run_dir / "ledger.csv");
    const FlopsLedger baseline = FlopsLedger::read_csv(baseline_dir / "ledger.csv");

    const std::filesystem::path curves_path = run_dir / "curves.csv";
    const CsvTable curves = read_csv(curves_path);
    if (curves.header != split_csv_line(kCurvesHeader)) {
        throw IoError(curves_path.string() + ": expected header '" + kCurvesHeader + "'");
    }
    std::vector<EpochRecord> records;
    for (std::size_t i = 0; i < curves.rows.size(); ++i) {
        const auto& f = curves.rows[i];
        const std::string where = curves_path.string() + ":" + std::to_string(i + 2);
        EpochRecord r;
        r.epoch = parse_size(f[0], where);
        r.frozen = parse_size(f[1], where) != 0;
        r.mean_loss = parse_double(f[2], where);
        r.lr = parse_double(f[3], where);
        r.cum_flops = BigInt(f[4]);
        if (f[5] != kNotAvailable) r.val_map50 = parse_double(f[5], where);
        records.push_back(std::move(r));
    }

    const std::filesystem::path summary_path = run_dir / "summary.csv";
    const CsvTable summary = read_csv(summary_path);
    if (summary.header != split_csv_line(kSummaryHeader) || summary.rows.size() != 1) {
        throw IoError(summary_path.string() + ": not a run summary");
    }
    std::optional<double> final_map;
    if (summary.rows[0][2] != kNotAvailable) final_map = parse_double(summary.rows[0][2], summary_path.string());

    emit_report(records, ledger, final_map, &baseline, cfg, run_dir);
}

GridResult run_grid(const ExperimentConfig& base, std::span<const Rho> rhos, std::span<const std::uint64_t> seeds,
                    const std::filesystem::path& out) {
    std::vector<Rho> grid{Rho(1)};
    for (const Rho& r : rhos) {
        if (r != Rho(1)) grid.push_back(r);
    }
    GridResult result;
    std::filesystem::create_directories(out);
    CsvWriter table(out / "grid.csv",
                    "seed,rho,schedule,frozen_epochs,final_map50,delta_map50,total_flops,delta_flops,estimated_minutes");
    std::map<std::string, std::vector<double>> delta_maps;

    for (std::uint64_t seed : seeds) {
        ExperimentConfig cfg = base;
        cfg.seed = seed;
        cfg.data.seed = seed;
        cfg.validate();
        const Dataset data = generate_dataset(cfg.data, cfg.n_train, cfg.n_val);
        const std::filesystem::path seed_dir = out / ("seed" + std::to_string(seed));

        std::optional<FlopsLedger> baseline;
        std::optional<double> baseline_map;
        for (const Rho& rho : grid) {
            cfg.schedule = rho == Rho(1) ? ScheduleSpec::full_training() : ScheduleSpec::dynamic(cfg.switch_epoch, rho);
            GridEntry entry;
            entry.seed = seed;
            entry.rho = rho;
            entry.result = run_experiment(cfg, data);
            entry.frozen_epochs = count_frozen_epochs(cfg.schedule, 0, cfg.total_epochs);
            if (!baseline) baseline = entry.result.ledger;

            const std::filesystem::path dir = seed_dir / ("rho_" + rho.to_string());
            cfg.output_dir = dir;
            write_run(entry.result, cfg, &*baseline, dir);

            std::optional<double> map;
            if (entry.result.final_eval) map = entry.result.final_eval->map50;
            if (rho == Rho(1)) baseline_map = map;
            std::optional<double> delta_map;
            if (map && baseline_map) delta_map = *map - *baseline_map;
            if (delta_map && rho != Rho(1)) delta_maps[rho.to_string()].push_back(*delta_map);

            table.row(seed, rho.to_string(), schedule_cell(cfg.schedule), entry.frozen_epochs, optional_cell(map),
                      optional_cell(delta_map), total_flops(entry.result.ledger),
                      delta_flops(entry.result.ledger, *baseline),
                      estimate_training_time(cfg.time_model, cfg.schedule, cfg.total_epochs));
            result.entries.push_back(std::move(entry));
        }
    }

    // Mean and population standard deviation of delta mAP per rho across seeds.
    CsvWriter delta_table(out / "delta_map.csv", "rho,mean_delta_map50,std_delta_map50,runs");
    for (const Rho& rho : grid) {
        if (rho == Rho(1)) continue;
        const auto it = delta_maps.find(rho.to_string());
        if (it == delta_maps.end() || it->second.empty()) {
            delta_table.row(rho.to_string(), kNotAvailable, kNotAvailable, std::size_t{0});
            continue;
        }
        const std::vector<double>& v = it->second;
        double mean = 0.0;
        for (double x : v) mean += x;
        mean /= static_cast<double>(v.size());
        double var = 0.0;
        for (double x : v) var += (x - mean) * (x - mean);
        delta_table.row(rho.to_string(), mean, std::sqrt(var / static_cast<double>(v.size())), v.size());
    }
    return result;
}

}  // namespace dbf
