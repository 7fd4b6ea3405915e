#pragma once

// Freezing schedulers and the learning-rate schedule.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace dbf {

// 0 lets the backbone update, 1 freezes it.
enum class FreezeSignal : std::uint8_t { unfrozen = 0, frozen = 1 };

FreezeSignal freeze_signal_from_int(int value);
inline int to_int(FreezeSignal s) { return static_cast<int>(s); }

// Step period of the freezing scheduler: a positive integer or infinity.
class Rho {
public:
    static constexpr Rho infinity() { return Rho(); }
    explicit Rho(std::uint64_t period);

    bool is_infinite() const { return period_ == 0; }
    // Throws ConfigError when infinite.
    std::uint64_t period() const;

    std::string to_string() const;
    // Accepts a positive integer or "inf".
    static Rho parse(std::string_view text);

    friend bool operator==(const Rho&, const Rho&) = default;

private:
    constexpr Rho() = default;
    std::uint64_t period_ = 0;  // 0 encodes infinity
};

struct Phase {
    std::optional<std::uint64_t> end_epoch;  // exclusive; nullopt is infinity
    Rho rho = Rho::infinity();

    friend bool operator==(const Phase&, const Phase&) = default;
};

// Ordered phases; epochs are 0-indexed and the last phase is open-ended.
class ScheduleSpec {
public:
    explicit ScheduleSpec(std::vector<Phase> phases);

    // Every epoch unfrozen.
    static ScheduleSpec full_training();
    // Every epoch frozen.
    static ScheduleSpec frozen_backbone();
    // rho = 1 until `switch_epoch`, then `rho`.
    static ScheduleSpec dynamic(std::uint64_t switch_epoch, Rho rho);

    const std::vector<Phase>& phases() const { return phases_; }
    const Phase& phase_at(std::uint64_t epoch) const;

    std::string to_string() const;

    friend bool operator==(const ScheduleSpec&, const ScheduleSpec&) = default;

private:
    std::vector<Phase> phases_;
};

FreezeSignal step_freeze_signal(std::uint64_t epoch, Rho rho);
FreezeSignal phase_freeze_signal(std::uint64_t epoch, const ScheduleSpec& spec);

// Number of frozen epochs in [first, last) under `spec`.
std::uint64_t count_frozen_epochs(const ScheduleSpec& spec, std::uint64_t first, std::uint64_t last);

struct LrConfig {
    double base_lr = 0.005;
    std::uint64_t warmup_iters = 500;
    double warmup_end_fraction = 1.0 / 3.0;
    std::uint64_t decay_epoch = 12;
    double decay_factor = 0.25;

    void validate() const;
};

// Linear warmup to base_lr * warmup_end_fraction over the first warmup_iters
// iterations, then base_lr; multiplied by decay_factor for epochs past
// decay_epoch.
double lr_at(std::uint64_t iteration, std::uint64_t epoch, const LrConfig& cfg);

}  // namespace dbf
