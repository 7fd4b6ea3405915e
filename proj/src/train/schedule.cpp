#include "dbf/schedule.hpp"

#include <charconv>
#include <sstream>

#include "dbf/errors.hpp"

namespace dbf {

FreezeSignal freeze_signal_from_int(int value) {
    if (value == 0) return FreezeSignal::unfrozen;
    if (value == 1) return FreezeSignal::frozen;
    throw ConfigError("freeze signal must be 0 or 1, got " + std::to_string(value));
}

Rho::Rho(std::uint64_t period) : period_(period) {
    if (period == 0) throw ConfigError("rho must be >= 1");
}

std::uint64_t Rho::period() const {
    if (is_infinite()) throw ConfigError("rho is infinite and has no finite period");
    return period_;
}

std::string Rho::to_string() const { return is_infinite() ? "inf" : std::to_string(period_); }

Rho Rho::parse(std::string_view text) {
    if (text == "inf" || text == "infinity" || text == "\xe2\x88\x9e") return infinity();
    std::uint64_t value = 0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
    if (ec != std::errc{} || ptr != text.data() + text.size()) {
        throw ConfigError("rho must be a positive integer or 'inf', got '" + std::string(text) + "'");
    }
    return Rho(value);
}

ScheduleSpec::ScheduleSpec(std::vector<Phase> phases) : phases_(std::move(phases)) {
    if (phases_.empty()) throw ConfigError("schedule needs at least one phase");
    for (std::size_t i = 0; i < phases_.size(); ++i) {
        const bool last = i + 1 == phases_.size();
        if (last != !phases_[i].end_epoch.has_value()) {
            throw ConfigError("schedule: only the last phase may (and must) end at infinity");
        }
        if (i > 0 && phases_[i].end_epoch && *phases_[i].end_epoch <= *phases_[i - 1].end_epoch) {
            throw ConfigError("schedule: phase end epochs must be strictly increasing");
        }
        if (phases_[i].end_epoch && *phases_[i].end_epoch == 0) {
            throw ConfigError("schedule: phase end epoch must be positive");
        }
    }
}

ScheduleSpec ScheduleSpec::full_training() { return ScheduleSpec({Phase{std::nullopt, Rho(1)}}); }

ScheduleSpec ScheduleSpec::frozen_backbone() { return ScheduleSpec({Phase{std::nullopt, Rho::infinity()}}); }

ScheduleSpec ScheduleSpec::dynamic(std::uint64_t switch_epoch, Rho rho) {
    if (switch_epoch == 0) return ScheduleSpec({Phase{std::nullopt, rho}});
    return ScheduleSpec({Phase{switch_epoch, Rho(1)}, Phase{std::nullopt, rho}});
}

const Phase& ScheduleSpec::phase_at(std::uint64_t epoch) const {
    for (const Phase& p : phases_) {
        if (!p.end_epoch || epoch < *p.end_epoch) return p;
    }
    return phases_.back();
}

std::string ScheduleSpec::to_string() const {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < phases_.size(); ++i) {
        if (i) out << ", ";
        out << '(' << (phases_[i].end_epoch ? std::to_string(*phases_[i].end_epoch) : "inf") << ", "
            << phases_[i].rho.to_string() << ')';
    }
    out << ']';
    return out.str();
}

FreezeSignal step_freeze_signal(std::uint64_t epoch, Rho rho) {
    if (rho.is_infinite()) return FreezeSignal::frozen;
    return epoch % rho.period() == 0 ? FreezeSignal::unfrozen : FreezeSignal::frozen;
}

FreezeSignal phase_freeze_signal(std::uint64_t epoch, const ScheduleSpec& spec) {
    return step_freeze_signal(epoch, spec.phase_at(epoch).rho);
}

std::uint64_t count_frozen_epochs(const ScheduleSpec& spec, std::uint64_t first, std::uint64_t last) {
    std::uint64_t frozen = 0;
    for (std::uint64_t e = first; e < last; ++e) frozen += phase_freeze_signal(e, spec) == FreezeSignal::frozen;
    return frozen;
}

void LrConfig::validate() const {
    if (!(base_lr > 0.0)) throw ConfigError("lr.base_lr must be > 0");
    if (!(warmup_end_fraction > 0.0 && warmup_end_fraction <= 1.0)) {
        throw ConfigError("lr.warmup_end_fraction must be in (0, 1]");
    }
    if (!(decay_factor > 0.0 && decay_factor <= 1.0)) throw ConfigError("lr.decay_factor must be in (0, 1]");
}

double lr_at(std::uint64_t iteration, std::uint64_t epoch, const LrConfig& cfg) {
    double lr = cfg.base_lr;
    if (iteration < cfg.warmup_iters) {
        lr = cfg.base_lr * cfg.warmup_end_fraction * static_cast<double>(iteration + 1) /
             static_cast<double>(cfg.warmup_iters);
    }
    if (epoch > cfg.decay_epoch) lr *= cfg.decay_factor;
    return lr;
}

}  // namespace dbf
