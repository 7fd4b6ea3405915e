#pragma once

// Exact training-cost accounting: total FLOPs summed over epochs, samples and
// layers, forward plus backward, with backward costed at twice the forward.
// A frozen backbone still runs forward but contributes no backward cost.
//
// Counting convention (per sample):
//   dense      2 * in * out + out            (multiply-add = 2, plus bias)
//   conv2d     2 * in_ch * k * k * out_ch * Ho * Wo + out_ch * Ho * Wo
//   relu, maxpool2d, flatten   1 per output element

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "dbf/nn.hpp"
#include "dbf/schedule.hpp"

namespace dbf {

using BigInt = boost::multiprecision::cpp_int;

struct LayerFlopsSpec {
    std::size_t layer_id = 0;
    Group group = Group::backbone;
    BigInt forward_flops_per_sample;
};

BigInt layer_forward_flops(const LayerSpec& layer, const Shape& input_shape);

// One entry per layer of `d`, using its per-sample input shapes.
std::vector<LayerFlopsSpec> model_flops(const Detector& d);

struct EpochFlops {
    std::uint64_t epoch = 0;
    FreezeSignal freeze = FreezeSignal::unfrozen;
    std::uint64_t n_samples = 0;
    BigInt fwd_backbone;
    BigInt bwd_backbone;
    BigInt fwd_rest;  // neck + head
    BigInt bwd_rest;
    BigInt cum_total;  // running total including this epoch

    BigInt total() const { return fwd_backbone + bwd_backbone + fwd_rest + bwd_rest; }
};

class FlopsLedger {
public:
    // Appends one epoch. Throws LedgerError if `epoch` is already recorded.
    void record_epoch(std::uint64_t epoch, FreezeSignal freeze, std::span<const LayerFlopsSpec> model,
                      std::uint64_t n_samples);

    const std::vector<EpochFlops>& records() const { return records_; }
    const BigInt& total() const { return total_; }

    // CSV columns: epoch,frozen,n_samples,fwd_backbone,bwd_backbone,fwd_rest,bwd_rest,cum_total
    void write_csv(const std::filesystem::path& path) const;
    static FlopsLedger read_csv(const std::filesystem::path& path);

private:
    std::vector<EpochFlops> records_;
    BigInt total_;
};

BigInt total_flops(const FlopsLedger& ledger);

// total(candidate) - total(baseline); negative means savings. Both ledgers must
// cover the same epochs with the same sample counts and per-epoch forward
// costs (the forward cost pins down the model), else LedgerError.
BigInt delta_flops(const FlopsLedger& candidate, const FlopsLedger& baseline);

struct TimeModel {
    double unfrozen_epoch_minutes = 23.0;
    double frozen_epoch_minutes = 16.0;

    void validate() const;
};

double estimate_training_time(const TimeModel& tm, const ScheduleSpec& spec, std::uint64_t total_epochs);

}  // namespace dbf
