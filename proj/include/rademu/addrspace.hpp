#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <vector>

#include "rademu/errors.hpp"
#include "rademu/rng.hpp"

namespace rademu::vmem {

// Region of interest in a process's virtual space.
struct Roi {
    uint64_t start = 0;  // V0
    uint64_t size = 0;   // bytes
    uint64_t end() const { return start + size; }
    bool contains(uint64_t va) const { return va >= start && va < end(); }
    void validate() const;
};

// A maximal virtually AND physically contiguous mapped run.
struct BlockPair {
    uint64_t virtual_base = 0;
    uint64_t physical_base = 0;
    uint64_t length = 0;
};

// Ordered block pairs exactly tiling the ROI; physical ranges are disjoint.
class BlockMap {
  public:
    BlockMap() = default;
    BlockMap(std::vector<BlockPair> pairs, uint32_t page_size);

    const std::vector<BlockPair>& pairs() const { return pairs_; }
    uint32_t page_size() const { return page_size_; }

    uint64_t virt_to_phys(uint64_t va) const;              // throws std::out_of_range
    std::optional<uint64_t> phys_to_virt(uint64_t pa) const;

    uint64_t phys_min() const;
    uint64_t phys_max() const;  // inclusive
    // Physical extremes restricted to a virtual sub-range [va_lo, va_hi).
    std::pair<uint64_t, uint64_t> phys_extremes(uint64_t va_lo, uint64_t va_hi) const;

  private:
    std::vector<BlockPair> pairs_;           // sorted by virtual_base
    std::vector<uint32_t> by_phys_;          // pair indices sorted by physical_base
    uint32_t page_size_ = 4096;
};

// Answers which physical frame backs a virtual page.
class PageMapProvider {
  public:
    virtual ~PageMapProvider() = default;
    virtual std::optional<uint64_t> frame_of(uint64_t virtual_page) = 0;
};

struct SyntheticAllocatorConfig {
    double fragmentation_prob = 0.5;  // next frame non-adjacent with this probability
    uint64_t physical_space = 0;      // bytes available for frames
    uint64_t rng_seed = 0;
    void validate(uint64_t roi_size) const;
};

// Deterministic stand-in for a kernel allocator under memory pressure:
// walks the ROI's pages in order handing out frames, breaking physical
// contiguity with fragmentation_prob.
class SyntheticAllocator final : public PageMapProvider {
  public:
    SyntheticAllocator(const SyntheticAllocatorConfig& cfg, uint64_t pages_needed,
                       uint32_t page_size);
    std::optional<uint64_t> frame_of(uint64_t virtual_page) override;

  private:
    std::vector<uint64_t> frames_;  // frame per ROI page index, fixed at construction
    uint64_t first_page_ = UINT64_MAX;
};

// Reads the host kernel's per-process page tables (/proc/self/pagemap).
// Requires privileges; only used behind an explicit CLI opt-in.
class OsPagemapProvider final : public PageMapProvider {
  public:
    OsPagemapProvider();
    ~OsPagemapProvider() override;
    static bool available();
    std::optional<uint64_t> frame_of(uint64_t virtual_page) override;

  private:
    int fd_ = -1;
};

// Walks the ROI page by page, querying the provider and coalescing
// physically consecutive frames into blocks. Handles an unaligned ROI start
// and a residual tail.
BlockMap build_block_map(const Roi& roi, PageMapProvider& provider, uint32_t page_size);

}  // namespace rademu::vmem
