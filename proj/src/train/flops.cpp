#include "dbf/flops.hpp"

#include "dbf/csv.hpp"
#include "dbf/errors.hpp"

namespace dbf {

namespace {

constexpr const char* kLedgerHeader = "epoch,frozen,n_samples,fwd_backbone,bwd_backbone,fwd_rest,bwd_rest,cum_total";

BigInt parse_bigint(const std::string& text, const std::string& where) {
    if (text.empty() || text.find_first_not_of("-0123456789") != std::string::npos) {
        throw IoError(where + ": expected an integer, got '" + text + "'");
    }
    return BigInt(text);
}

}  // namespace

BigInt layer_forward_flops(const LayerSpec& layer, const Shape& input_shape) {
    const Shape out = layer_output_shape(layer, input_shape);
    const BigInt out_elems = element_count(out);
    switch (layer.kind) {
        case LayerKind::dense: return BigInt(2) * layer.in * layer.out + layer.out;
        case LayerKind::conv2d: {
            const BigInt positions = BigInt(out[1]) * out[2];
            return BigInt(2) * layer.in * layer.kernel * layer.kernel * layer.out * positions + layer.out * positions;
        }
        case LayerKind::relu:
        case LayerKind::maxpool2d:
        case LayerKind::flatten: return out_elems;
    }
    throw ShapeError("unknown layer kind");
}

std::vector<LayerFlopsSpec> model_flops(const Detector& d) {
    std::vector<LayerFlopsSpec> specs;
    for (const Layer& layer : d.layers()) {
        specs.push_back({layer.layer_id, layer.group, layer_forward_flops(layer.spec, layer.input_shape)});
    }
    return specs;
}

void FlopsLedger::record_epoch(std::uint64_t epoch, FreezeSignal freeze, std::span<const LayerFlopsSpec> model,
                               std::uint64_t n_samples) {
    for (const EpochFlops& r : records_) {
        if (r.epoch == epoch) throw LedgerError("epoch " + std::to_string(epoch) + " already recorded");
    }
    BigInt backbone, rest;
    for (const LayerFlopsSpec& l : model) (l.group == Group::backbone ? backbone : rest) += l.forward_flops_per_sample;

    EpochFlops r;
    r.epoch = epoch;
    r.freeze = freeze;
    r.n_samples = n_samples;
    r.fwd_backbone = backbone * n_samples;
    r.bwd_backbone = freeze == FreezeSignal::frozen ? BigInt(0) : BigInt(2 * r.fwd_backbone);
    r.fwd_rest = rest * n_samples;
    r.bwd_rest = 2 * r.fwd_rest;
    total_ += r.total();
    r.cum_total = total_;
    records_.push_back(std::move(r));
}

void FlopsLedger::write_csv(const std::filesystem::path& path) const {
    CsvWriter w(path, kLedgerHeader);
    for (const EpochFlops& r : records_) {
        w.row(r.epoch, to_int(r.freeze), r.n_samples, r.fwd_backbone, r.bwd_backbone, r.fwd_rest, r.bwd_rest,
              r.cum_total);
    }
}

FlopsLedger FlopsLedger::read_csv(const std::filesystem::path& path) {
    const CsvTable table = dbf::read_csv(path);
    if (table.header != split_csv_line(kLedgerHeader)) {
        throw IoError(path.string() + ": expected header '" + kLedgerHeader + "'");
    }
    FlopsLedger ledger;
    for (std::size_t i = 0; i < table.rows.size(); ++i) {
        const auto& f = table.rows[i];
        const std::string where = path.string() + ":" + std::to_string(i + 2);
        EpochFlops r;
        r.epoch = parse_size(f[0], where);
        const std::size_t frozen = parse_size(f[1], where);
        if (frozen > 1) throw IoError(where + ": frozen must be 0 or 1");
        r.freeze = frozen ? FreezeSignal::frozen : FreezeSignal::unfrozen;
        r.n_samples = parse_size(f[2], where);
        r.fwd_backbone = parse_bigint(f[3], where);
        r.bwd_backbone = parse_bigint(f[4], where);
        r.fwd_rest = parse_bigint(f[5], where);
        r.bwd_rest = parse_bigint(f[6], where);
        for (const EpochFlops& prev : ledger.records_) {
            if (prev.epoch == r.epoch) throw IoError(where + ": duplicate epoch " + std::to_string(r.epoch));
        }
        ledger.total_ += r.total();
        r.cum_total = ledger.total_;
        if (parse_bigint(f[7], where) != r.cum_total) throw IoError(where + ": cum_total does not match the row sums");
        ledger.records_.push_back(std::move(r));
    }
    return ledger;
}

BigInt total_flops(const FlopsLedger& ledger) {
    BigInt total;
    for (const EpochFlops& r : ledger.records()) total += r.total();
    return total;
}

BigInt delta_flops(const FlopsLedger& candidate, const FlopsLedger& baseline) {
    const auto& a = candidate.records();
    const auto& b = baseline.records();
    if (a.size() != b.size()) {
        throw LedgerError("cannot compare runs of " + std::to_string(a.size()) + " and " + std::to_string(b.size()) +
                          " epochs");
    }
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].epoch != b[i].epoch || a[i].n_samples != b[i].n_samples || a[i].fwd_backbone != b[i].fwd_backbone ||
            a[i].fwd_rest != b[i].fwd_rest) {
            throw LedgerError("runs differ at record " + std::to_string(i) +
                              " (epoch, sample count or model forward cost)");
        }
    }
    return total_flops(candidate) - total_flops(baseline);
}

void TimeModel::validate() const {
    if (!(unfrozen_epoch_minutes > 0.0 && frozen_epoch_minutes > 0.0)) {
        throw ConfigError("time model minutes must be > 0");
    }
    if (frozen_epoch_minutes > unfrozen_epoch_minutes) {
        throw ConfigError("time model: a frozen epoch cannot take longer than an unfrozen one");
    }
}

double estimate_training_time(const TimeModel& tm, const ScheduleSpec& spec, std::uint64_t total_epochs) {
    if (total_epochs == 0) throw ConfigError("estimate_training_time: total_epochs must be >= 1");
    double minutes = 0.0;
    for (std::uint64_t e = 0; e < total_epochs; ++e) {
        minutes += phase_freeze_signal(e, spec) == FreezeSignal::unfrozen ? tm.unfrozen_epoch_minutes
                                                                           : tm.frozen_epoch_minutes;
    }
    return minutes;
}

}  // namespace dbf
