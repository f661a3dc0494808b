#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "rademu/errors.hpp"

namespace rademu::dram {

// DRAM device geometry. All level counts are powers of two. A column index
// in CellCoord addresses one burst data block (burst_length * channel_width
// bits); the bits inside a block are tracked separately (bit_in_block), so
// every bit of the device has exactly one cell home.
struct DramConfig {
    uint32_t channels = 1;
    uint32_t ranks = 1;
    uint32_t banks = 1;
    uint64_t rows = 1;
    uint64_t columns = 1;       // physical columns, each dq_width bits
    uint32_t dq_width = 8;      // bits per column access (W_DQ)
    uint32_t channel_width = 8; // bits per beat on one channel (W_CH)
    uint32_t burst_length = 1;  // beats per access (BL)
    uint32_t page_size = 4096;  // bytes, for page-level reporting

    uint64_t capacity_bits() const;
    uint64_t capacity_bytes() const { return capacity_bits() / 8; }
    uint32_t block_bits() const { return burst_length * channel_width; }
    uint32_t block_bytes() const { return block_bits() / 8; }
    uint32_t block_offset_bits() const;
    // Number of addressable burst blocks per row (range of CellCoord.column).
    uint64_t column_blocks() const;
    uint64_t level_count(int level) const;

    void validate() const;  // throws ConfigError
};

enum class Level : uint8_t { channel = 0, rank = 1, bank = 2, row = 3, column = 4 };
inline constexpr int kLevelCount = 5;
const char* level_name(Level l);

enum class SchemeId : uint8_t { s1 = 0, s2 = 1, s3 = 2 };
const char* scheme_name(SchemeId id);
SchemeId scheme_from_name(const std::string& name);

// One contiguous run of physical-address bits feeding a level's index.
// Several ranges may feed the same level; they concatenate LSB-first in
// order of appearance.
struct FieldRange {
    Level level;
    uint32_t lo = 0;     // lowest physical-address bit
    uint32_t width = 0;  // number of bits
};

// value(target) ^= bits(pa, src_lo, width) aligned at address bit tgt_lo,
// applied after raw field extraction. Sources must live in levels that are
// not XOR targets themselves so encoding stays invertible.
struct XorFunction {
    Level target;
    uint32_t src_lo = 0;
    uint32_t width = 0;
    uint32_t tgt_lo = 0;
};

struct AddressScheme {
    SchemeId id = SchemeId::s1;
    std::vector<FieldRange> fields;
    std::vector<XorFunction> xors;

    void validate(const DramConfig& cfg) const;  // throws ConfigError
};

// Built-in layouts: field order column, bank, channel, rank, row from the
// lowest addressing bit upward. s2 XORs the bank index with the lowest
// column bits, s3 does the same for the channel index.
AddressScheme make_scheme(const DramConfig& cfg, SchemeId id);

struct CellCoord {
    uint64_t row = 0;
    uint64_t column = 0;  // burst-block index within the row
    uint32_t channel = 0;
    uint32_t rank = 0;
    uint32_t bank = 0;
    uint32_t bit_in_block = 0;  // which of the block_bits() bits

    bool operator==(const CellCoord&) const = default;
};

inline uint32_t bit_in_byte(const CellCoord& c) { return c.bit_in_block % 8; }

// Byte address -> cell of that byte's bit `bit` (default bit 0).
CellCoord decode_address(uint64_t pa, const DramConfig& cfg, const AddressScheme& scheme);
CellCoord decode_bit(uint64_t pa, uint32_t bit, const DramConfig& cfg, const AddressScheme& scheme);

// Exact inverse including XOR undo. Returns the byte address holding the
// cell's bit; the bit within that byte is bit_in_byte(cell).
uint64_t encode_cell(const CellCoord& cell, const DramConfig& cfg, const AddressScheme& scheme);

struct IndexRange {
    uint64_t lo = 0;
    uint64_t hi = 0;  // inclusive
    uint64_t width() const { return hi - lo + 1; }
    bool contains(uint64_t v) const { return v >= lo && v <= hi; }
};

// Per-level index ranges reachable from addresses in [pa_min, pa_max].
// Sound for every level; tight for row and column.
struct LevelSpan {
    std::array<IndexRange, kLevelCount> ranges{};
    IndexRange& at(Level l) { return ranges[static_cast<int>(l)]; }
    const IndexRange& at(Level l) const { return ranges[static_cast<int>(l)]; }
};

LevelSpan level_span(uint64_t pa_min, uint64_t pa_max, const DramConfig& cfg,
                     const AddressScheme& scheme);

void check_cell_bounds(const CellCoord& cell, const DramConfig& cfg);

}  // namespace rademu::dram
