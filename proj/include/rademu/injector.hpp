#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "rademu/addrspace.hpp"
#include "rademu/dram.hpp"
#include "rademu/radiation.hpp"

namespace rademu::inject {

struct PlannedCell {
    dram::CellCoord cell;
    uint64_t pa = 0;           // physical byte address
    uint64_t va = 0;           // virtual byte address, always inside the ROI
    uint8_t bit_in_byte = 0;
};

struct PlannedEvent {
    rad::FlipCluster cluster;
    std::vector<PlannedCell> cells;
};

struct InjectionPlan {
    std::vector<PlannedEvent> events;
    uint64_t total_bits = 0;
    uint64_t seed = 0;
};

struct PlanLimits {
    uint64_t max_attempts_per_event = 10000;
};

// Sampling/acceptance bookkeeping, e.g. for interleaving-validity studies.
struct PlanStats {
    uint64_t attempts = 0;
    uint64_t accepted_events = 0;
};

// Virtual byte window events must land in; defaults to the whole ROI.
struct AcceptWindow {
    uint64_t va_lo = 0;
    uint64_t va_hi = 0;  // exclusive
};

// One sampling attempt: reference cell drawn uniformly from the span of the
// window's physical extremes, cluster grown, every cell encoded and mapped
// back to virtual space. Empty result if any cell misses the window.
std::optional<PlannedEvent> try_plan_event(uint32_t multiplicity, const dram::LevelSpan& span,
                                           const vmem::BlockMap& map, const dram::DramConfig& cfg,
                                           const dram::AddressScheme& scheme,
                                           const rad::ErrorModelConfig& model,
                                           const AcceptWindow& window, Rng& rng);

// Full pipeline: level span over the window's physical extremes, event mix
// for the budget, per-event sampling with whole-event resampling on window
// misses and on duplicate (address, bit) picks.
InjectionPlan plan_injection(const vmem::Roi& roi, const vmem::BlockMap& map,
                             const dram::DramConfig& cfg, const dram::AddressScheme& scheme,
                             const rad::ErrorModelConfig& model, uint64_t total_bits, uint64_t seed,
                             std::optional<AcceptWindow> window = std::nullopt,
                             const PlanLimits& limits = {}, PlanStats* stats = nullptr);

struct InjectionRecord {
    InjectionPlan plan;
    std::vector<uint8_t> pre_flip_bits;  // original value of each planned bit
};

// Flips every planned bit in a buffer co-extensive with the ROI.
InjectionRecord apply_flips(std::span<std::byte> buffer, const vmem::Roi& roi,
                            const InjectionPlan& plan);

// Restores the buffer to its pre-injection state (XOR of the same bits).
void revert(std::span<std::byte> buffer, const vmem::Roi& roi, const InjectionRecord& record);

}  // namespace rademu::inject
