#include "rademu/injector.hpp"

#include <set>
#include <string>

namespace rademu::inject {

namespace {

dram::CellCoord draw_reference(const dram::LevelSpan& span, const dram::DramConfig& cfg, Rng& rng) {
    using dram::Level;
    dram::CellCoord c;
    c.row = rng.uniform_incl(span.at(Level::row).lo, span.at(Level::row).hi);
    c.column = rng.uniform_incl(span.at(Level::column).lo, span.at(Level::column).hi);
    c.channel = static_cast<uint32_t>(
        rng.uniform_incl(span.at(Level::channel).lo, span.at(Level::channel).hi));
    c.rank =
        static_cast<uint32_t>(rng.uniform_incl(span.at(Level::rank).lo, span.at(Level::rank).hi));
    c.bank =
        static_cast<uint32_t>(rng.uniform_incl(span.at(Level::bank).lo, span.at(Level::bank).hi));
    c.bit_in_block = static_cast<uint32_t>(rng.uniform(cfg.block_bits()));
    return c;
}

}  // namespace

std::optional<PlannedEvent> try_plan_event(uint32_t multiplicity, const dram::LevelSpan& span,
                                           const vmem::BlockMap& map, const dram::DramConfig& cfg,
                                           const dram::AddressScheme& scheme,
                                           const rad::ErrorModelConfig& model,
                                           const AcceptWindow& window, Rng& rng) {
    const dram::CellCoord ref = draw_reference(span, cfg, rng);

    // Clipping must not shrink the cluster below its multiplicity.
    const uint64_t rows_left = cfg.rows - ref.row;
    const uint64_t cols_left = cfg.column_blocks() - ref.column;
    const uint64_t box = std::min<uint64_t>(rows_left, model.max_row_extent) *
                         std::min<uint64_t>(cols_left, model.max_col_extent);
    if (box < multiplicity) return std::nullopt;

    PlannedEvent event;
    event.cluster = rad::sample_cluster(ref, multiplicity, model, cfg, rng);
    event.cells.reserve(multiplicity);
    for (const auto& cell : event.cluster.cells) {
        PlannedCell pc;
        pc.cell = cell;
        pc.pa = dram::encode_cell(cell, cfg, scheme);
        const auto va = map.phys_to_virt(pc.pa);
        if (!va || *va < window.va_lo || *va >= window.va_hi) return std::nullopt;
        pc.va = *va;
        pc.bit_in_byte = static_cast<uint8_t>(dram::bit_in_byte(cell));
        event.cells.push_back(pc);
    }
    return event;
}

InjectionPlan plan_injection(const vmem::Roi& roi, const vmem::BlockMap& map,
                             const dram::DramConfig& cfg, const dram::AddressScheme& scheme,
                             const rad::ErrorModelConfig& model, uint64_t total_bits, uint64_t seed,
                             std::optional<AcceptWindow> window, const PlanLimits& limits,
                             PlanStats* stats) {
    if (total_bits < 1) throw ConfigError("plan_injection: total_bits must be >= 1");
    roi.validate();
    model.validate();

    const AcceptWindow win = window.value_or(AcceptWindow{roi.start, roi.end()});
    if (win.va_lo < roi.start || win.va_hi > roi.end() || win.va_lo >= win.va_hi)
        throw ConfigError("plan_injection: acceptance window outside the ROI");

    const auto [pa_min, pa_max] = map.phys_extremes(win.va_lo, win.va_hi);
    const dram::LevelSpan span = dram::level_span(pa_min, pa_max, cfg, scheme);

    Rng rng(splitmix64(seed));
    const std::vector<uint32_t> mix = rad::compose_event_mix(total_bits, model, rng);

    InjectionPlan plan;
    plan.total_bits = total_bits;
    plan.seed = seed;
    plan.events.reserve(mix.size());

    std::set<std::pair<uint64_t, uint8_t>> taken;
    uint64_t bits_placed = 0;
    for (const uint32_t multiplicity : mix) {
        bool placed = false;
        for (uint64_t attempt = 0; attempt < limits.max_attempts_per_event; ++attempt) {
            if (stats) ++stats->attempts;
            auto event = try_plan_event(multiplicity, span, map, cfg, scheme, model, win, rng);
            if (!event) continue;
            bool duplicate = false;
            for (const auto& c : event->cells)
                if (taken.count({c.va, c.bit_in_byte})) duplicate = true;
            if (duplicate) continue;
            for (const auto& c : event->cells) taken.insert({c.va, c.bit_in_byte});
            bits_placed += event->cells.size();
            plan.events.push_back(std::move(*event));
            if (stats) ++stats->accepted_events;
            placed = true;
            break;
        }
        if (!placed) {
            const double achieved = static_cast<double>(bits_placed) / static_cast<double>(total_bits);
            throw PlanningError("plan_injection: retry budget exhausted; placed " +
                                    std::to_string(bits_placed) + "/" + std::to_string(total_bits) +
                                    " bits",
                                achieved);
        }
    }
    return plan;
}

InjectionRecord apply_flips(std::span<std::byte> buffer, const vmem::Roi& roi,
                            const InjectionPlan& plan) {
    if (buffer.size() != roi.size)
        throw std::invalid_argument("apply_flips: buffer length must equal the ROI size");
    InjectionRecord record;
    record.plan = plan;
    for (const auto& event : plan.events) {
        for (const auto& cell : event.cells) {
            const uint64_t off = cell.va - roi.start;
            const uint8_t mask = static_cast<uint8_t>(1u << cell.bit_in_byte);
            const uint8_t before = static_cast<uint8_t>(buffer[off]);
            record.pre_flip_bits.push_back((before >> cell.bit_in_byte) & 1u);
            buffer[off] = static_cast<std::byte>(before ^ mask);
        }
    }
    return record;
}

void revert(std::span<std::byte> buffer, const vmem::Roi& roi, const InjectionRecord& record) {
    if (buffer.size() != roi.size)
        throw std::invalid_argument("revert: buffer length must equal the ROI size");
    for (const auto& event : record.plan.events) {
        for (const auto& cell : event.cells) {
            const uint64_t off = cell.va - roi.start;
            buffer[off] ^= static_cast<std::byte>(1u << cell.bit_in_byte);
        }
    }
}

}  // namespace rademu::inject
