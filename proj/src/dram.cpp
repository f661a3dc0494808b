#include "rademu/dram.hpp"

#include <algorithm>
#include <bit>

namespace rademu::dram {

namespace {

bool is_pow2(uint64_t v) { return v != 0 && (v & (v - 1)) == 0; }

uint32_t log2_u64(uint64_t v) { return 63 - std::countl_zero(v); }

uint64_t bits_of(uint64_t pa, uint32_t lo, uint32_t width) {
    return (pa >> lo) & ((width >= 64) ? ~0ULL : ((1ULL << width) - 1));
}

}  // namespace

uint64_t DramConfig::capacity_bits() const {
    return static_cast<uint64_t>(channels) * ranks * banks * rows * columns * dq_width;
}

uint32_t DramConfig::block_offset_bits() const { return log2_u64(block_bytes()); }

uint64_t DramConfig::column_blocks() const {
    return columns * dq_width / block_bits();
}

uint64_t DramConfig::level_count(int level) const {
    switch (static_cast<Level>(level)) {
        case Level::channel: return channels;
        case Level::rank: return ranks;
        case Level::bank: return banks;
        case Level::row: return rows;
        case Level::column: return column_blocks();
    }
    return 0;
}

void DramConfig::validate() const {
    for (uint64_t v : {static_cast<uint64_t>(channels), static_cast<uint64_t>(ranks),
                       static_cast<uint64_t>(banks), rows, columns,
                       static_cast<uint64_t>(dq_width), static_cast<uint64_t>(channel_width),
                       static_cast<uint64_t>(burst_length), static_cast<uint64_t>(page_size)}) {
        if (!is_pow2(v)) throw ConfigError("dram config: all counts must be powers of two and >= 1");
    }
    if (block_bits() % 8 != 0 || block_bytes() == 0)
        throw ConfigError("dram config: burst_length * channel_width must be a whole number of bytes");
    if (columns * dq_width < block_bits())
        throw ConfigError("dram config: a row is smaller than one burst data block");
    if (capacity_bits() % 8 != 0) throw ConfigError("dram config: capacity must be whole bytes");
}

const char* level_name(Level l) {
    switch (l) {
        case Level::channel: return "channel";
        case Level::rank: return "rank";
        case Level::bank: return "bank";
        case Level::row: return "row";
        case Level::column: return "column";
    }
    return "?";
}

const char* scheme_name(SchemeId id) {
    switch (id) {
        case SchemeId::s1: return "s1";
        case SchemeId::s2: return "s2";
        case SchemeId::s3: return "s3";
    }
    return "?";
}

SchemeId scheme_from_name(const std::string& name) {
    if (name == "s1" || name == "S1") return SchemeId::s1;
    if (name == "s2" || name == "S2") return SchemeId::s2;
    if (name == "s3" || name == "S3") return SchemeId::s3;
    throw ConfigError("unknown addressing scheme: " + name);
}

void AddressScheme::validate(const DramConfig& cfg) const {
    const uint32_t off = cfg.block_offset_bits();
    const uint32_t addr_bits = log2_u64(cfg.capacity_bytes());

    // Field ranges must be disjoint and cover exactly [off, addr_bits).
    std::vector<uint8_t> covered(addr_bits, 0);
    std::array<uint32_t, kLevelCount> width_per_level{};
    for (const auto& f : fields) {
        if (f.width == 0) throw ConfigError("scheme: zero-width field");
        if (f.lo < off) throw ConfigError("scheme: field overlaps the data-block offset bits");
        if (f.lo + f.width > addr_bits) throw ConfigError("scheme: field exceeds address width");
        for (uint32_t b = f.lo; b < f.lo + f.width; ++b) {
            if (covered[b]) throw ConfigError("scheme: overlapping field bit ranges");
            covered[b] = 1;
        }
        width_per_level[static_cast<int>(f.level)] += f.width;
    }
    for (uint32_t b = off; b < addr_bits; ++b)
        if (!covered[b]) throw ConfigError("scheme: addressable bit not covered by any field");

    for (int l = 0; l < kLevelCount; ++l) {
        const uint64_t count = cfg.level_count(l);
        const uint32_t want = count > 1 ? log2_u64(count) : 0;
        if (width_per_level[l] != want)
            throw ConfigError(std::string("scheme: field width mismatch for level ") +
                              level_name(static_cast<Level>(l)));
    }

    for (const auto& x : xors) {
        if (x.width == 0) throw ConfigError("scheme: zero-width xor");
        // Target bits must sit inside one of the target level's fields.
        bool inside = false;
        for (const auto& f : fields)
            if (f.level == x.target && x.tgt_lo >= f.lo && x.tgt_lo + x.width <= f.lo + f.width)
                inside = true;
        if (!inside) throw ConfigError("scheme: xor target range not inside the target level field");
        // Source bits must come from levels that are not XOR targets (keeps
        // the mapping invertible: sources are fully determined before undo).
        for (uint32_t b = x.src_lo; b < x.src_lo + x.width; ++b) {
            for (const auto& f : fields) {
                if (b >= f.lo && b < f.lo + f.width) {
                    for (const auto& y : xors)
                        if (y.target == f.level)
                            throw ConfigError("scheme: xor source drawn from an xor-target level");
                }
            }
        }
    }
}

AddressScheme make_scheme(const DramConfig& cfg, SchemeId id) {
    AddressScheme s;
    s.id = id;
    uint32_t bit = cfg.block_offset_bits();
    uint32_t col_lo = bit;

    auto push = [&](Level level, uint64_t count) {
        if (count <= 1) return;
        const uint32_t w = log2_u64(count);
        s.fields.push_back(FieldRange{level, bit, w});
        bit += w;
    };

    push(Level::column, cfg.column_blocks());
    const uint32_t bank_lo = bit;
    push(Level::bank, cfg.banks);
    const uint32_t ch_lo = bit;
    push(Level::channel, cfg.channels);
    push(Level::rank, cfg.ranks);
    push(Level::row, cfg.rows);

    const uint32_t col_w = cfg.column_blocks() > 1 ? log2_u64(cfg.column_blocks()) : 0;
    if (id == SchemeId::s2 && cfg.banks > 1 && col_w > 0) {
        const uint32_t w = std::min(log2_u64(cfg.banks), col_w);
        s.xors.push_back(XorFunction{Level::bank, col_lo, w, bank_lo});
    } else if (id == SchemeId::s3 && cfg.channels > 1 && col_w > 0) {
        const uint32_t w = std::min(log2_u64(cfg.channels), col_w);
        s.xors.push_back(XorFunction{Level::channel, col_lo, w, ch_lo});
    }
    return s;
}

void check_cell_bounds(const CellCoord& cell, const DramConfig& cfg) {
    if (cell.channel >= cfg.channels || cell.rank >= cfg.ranks || cell.bank >= cfg.banks ||
        cell.row >= cfg.rows || cell.column >= cfg.column_blocks() ||
        cell.bit_in_block >= cfg.block_bits())
        throw std::out_of_range("cell coordinate out of dram config bounds");
}

namespace {

// Offset of address bit `abs_bit` within the concatenated value of `level`.
uint32_t value_shift(const AddressScheme& s, Level level, uint32_t abs_bit) {
    uint32_t acc = 0;
    for (const auto& f : s.fields) {
        if (f.level != level) continue;
        if (abs_bit >= f.lo && abs_bit < f.lo + f.width) return acc + (abs_bit - f.lo);
        acc += f.width;
    }
    throw ConfigError("xor target bit not inside target level");
}

uint64_t extract_level(uint64_t pa, const AddressScheme& s, Level level) {
    uint64_t v = 0;
    uint32_t acc = 0;
    for (const auto& f : s.fields) {
        if (f.level != level) continue;
        v |= bits_of(pa, f.lo, f.width) << acc;
        acc += f.width;
    }
    for (const auto& x : s.xors)
        if (x.target == level) v ^= bits_of(pa, x.src_lo, x.width) << value_shift(s, level, x.tgt_lo);
    return v;
}

}  // namespace

CellCoord decode_bit(uint64_t pa, uint32_t bit, const DramConfig& cfg, const AddressScheme& scheme) {
    if (pa >= cfg.capacity_bytes()) throw std::out_of_range("physical address beyond device capacity");
    if (bit >= 8) throw std::out_of_range("bit index within byte must be < 8");
    CellCoord c;
    c.channel = static_cast<uint32_t>(extract_level(pa, scheme, Level::channel));
    c.rank = static_cast<uint32_t>(extract_level(pa, scheme, Level::rank));
    c.bank = static_cast<uint32_t>(extract_level(pa, scheme, Level::bank));
    c.row = extract_level(pa, scheme, Level::row);
    c.column = extract_level(pa, scheme, Level::column);
    c.bit_in_block = static_cast<uint32_t>((pa & (cfg.block_bytes() - 1)) * 8 + bit);
    return c;
}

CellCoord decode_address(uint64_t pa, const DramConfig& cfg, const AddressScheme& scheme) {
    return decode_bit(pa, 0, cfg, scheme);
}

uint64_t encode_cell(const CellCoord& cell, const DramConfig& cfg, const AddressScheme& scheme) {
    check_cell_bounds(cell, cfg);

    auto place = [&](Level level, uint64_t value, uint64_t& pa) {
        uint32_t acc = 0;
        for (const auto& f : scheme.fields) {
            if (f.level != level) continue;
            pa |= bits_of(value, acc, f.width) << f.lo;
            acc += f.width;
        }
    };
    auto value_of = [&](Level level) -> uint64_t {
        switch (level) {
            case Level::channel: return cell.channel;
            case Level::rank: return cell.rank;
            case Level::bank: return cell.bank;
            case Level::row: return cell.row;
            case Level::column: return cell.column;
        }
        return 0;
    };
    auto is_target = [&](Level level) {
        for (const auto& x : scheme.xors)
            if (x.target == level) return true;
        return false;
    };

    uint64_t pa = cell.bit_in_block / 8;  // byte offset within the data block

    // Non-target levels first so XOR source bits are in place for the undo.
    for (Level l : {Level::channel, Level::rank, Level::bank, Level::row, Level::column})
        if (!is_target(l)) place(l, value_of(l), pa);
    for (Level l : {Level::channel, Level::rank, Level::bank, Level::row, Level::column}) {
        if (!is_target(l)) continue;
        uint64_t raw = value_of(l);
        for (const auto& x : scheme.xors)
            if (x.target == l)
                raw ^= bits_of(pa, x.src_lo, x.width) << value_shift(scheme, l, x.tgt_lo);
        place(l, raw, pa);
    }
    return pa;
}

namespace {

// Index range of a bit-field over a contiguous address interval. Sound
// always; tight when the interval does not wrap the field's period.
IndexRange field_window(uint64_t pa_min, uint64_t pa_max, uint32_t lo, uint32_t width) {
    const uint64_t full = (width >= 64) ? ~0ULL : (1ULL << width) - 1;
    const uint64_t len = pa_max - pa_min;  // may be 0
    if (width + lo >= 64) {
        // period exceeds the address space: never wraps
        return IndexRange{bits_of(pa_min, lo, width), bits_of(pa_max, lo, width)};
    }
    const uint64_t period = 1ULL << (lo + width);
    if (len >= period - 1) return IndexRange{0, full};
    if ((pa_min >> (lo + width)) != (pa_max >> (lo + width))) return IndexRange{0, full};
    return IndexRange{bits_of(pa_min, lo, width), bits_of(pa_max, lo, width)};
}

}  // namespace

LevelSpan level_span(uint64_t pa_min, uint64_t pa_max, const DramConfig& cfg,
                     const AddressScheme& scheme) {
    if (pa_min > pa_max) throw std::invalid_argument("level_span: pa_min > pa_max");
    if (pa_max >= cfg.capacity_bytes())
        throw std::out_of_range("level_span: address beyond device capacity");

    LevelSpan span;
    for (int li = 0; li < kLevelCount; ++li) {
        const Level level = static_cast<Level>(li);
        const uint64_t count = cfg.level_count(li);
        if (count <= 1) {
            span.ranges[li] = IndexRange{0, 0};
            continue;
        }

        // Raw field range: single contiguous field -> window trick; odd
        // multi-field layouts fall back to the full (sound) range.
        const FieldRange* single = nullptr;
        int nfields = 0;
        for (const auto& f : scheme.fields)
            if (f.level == level) { single = &f; ++nfields; }
        IndexRange raw = (nfields == 1)
                             ? field_window(pa_min, pa_max, single->lo, single->width)
                             : IndexRange{0, count - 1};

        bool has_xor = false;
        for (const auto& x : scheme.xors) has_xor |= (x.target == level);
        if (!has_xor) {
            span.ranges[li] = raw;
            continue;
        }

        // XORed levels are small (bank/channel); enumerate reachable values
        // over the raw range times each XOR source window.
        if (raw.width() == count || count > 4096) {
            span.ranges[li] = IndexRange{0, count - 1};
            continue;
        }
        std::vector<uint64_t> reachable;
        for (uint64_t v = raw.lo; v <= raw.hi; ++v) reachable.push_back(v);
        for (const auto& x : scheme.xors) {
            if (x.target != level) continue;
            const IndexRange src = field_window(pa_min, pa_max, x.src_lo, x.width);
            const uint32_t shift = value_shift(scheme, level, x.tgt_lo);
            std::vector<uint64_t> next;
            next.reserve(reachable.size() * src.width());
            for (uint64_t a : reachable)
                for (uint64_t sv = src.lo; sv <= src.hi; ++sv) next.push_back(a ^ (sv << shift));
            reachable = std::move(next);
        }
        const auto [mn, mx] = std::minmax_element(reachable.begin(), reachable.end());
        span.ranges[li] = IndexRange{*mn, *mx};
    }
    return span;
}

}  // namespace rademu::dram
