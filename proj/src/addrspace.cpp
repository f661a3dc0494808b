#include "rademu/addrspace.hpp"

#include <algorithm>
#include <unordered_set>

#include <fcntl.h>
#include <unistd.h>

namespace rademu::vmem {

void Roi::validate() const {
    if (size == 0) throw ConfigError("roi: size must be > 0");
    if (start + size < start) throw ConfigError("roi: start + size overflows the address width");
}

void SyntheticAllocatorConfig::validate(uint64_t roi_size) const {
    if (fragmentation_prob < 0.0 || fragmentation_prob > 1.0)
        throw ConfigError("synthetic allocator: fragmentation_prob must be in [0, 1]");
    if (physical_space < roi_size)
        throw ConfigError("synthetic allocator: physical_space smaller than the ROI");
}

BlockMap::BlockMap(std::vector<BlockPair> pairs, uint32_t page_size)
    : pairs_(std::move(pairs)), page_size_(page_size) {
    std::sort(pairs_.begin(), pairs_.end(),
              [](const BlockPair& a, const BlockPair& b) { return a.virtual_base < b.virtual_base; });
    for (size_t i = 0; i + 1 < pairs_.size(); ++i) {
        if (pairs_[i].virtual_base + pairs_[i].length != pairs_[i + 1].virtual_base)
            throw ConfigError("block map: virtual ranges must tile the ROI contiguously");
    }
    by_phys_.resize(pairs_.size());
    for (uint32_t i = 0; i < pairs_.size(); ++i) by_phys_[i] = i;
    std::sort(by_phys_.begin(), by_phys_.end(), [&](uint32_t a, uint32_t b) {
        return pairs_[a].physical_base < pairs_[b].physical_base;
    });
    for (size_t i = 0; i + 1 < by_phys_.size(); ++i) {
        const auto& a = pairs_[by_phys_[i]];
        const auto& b = pairs_[by_phys_[i + 1]];
        if (a.physical_base + a.length > b.physical_base)
            throw ConfigError("block map: physical ranges overlap");
    }
}

uint64_t BlockMap::virt_to_phys(uint64_t va) const {
    auto it = std::upper_bound(pairs_.begin(), pairs_.end(), va,
                               [](uint64_t v, const BlockPair& p) { return v < p.virtual_base; });
    if (it == pairs_.begin()) throw std::out_of_range("virt_to_phys: address below the ROI");
    --it;
    if (va >= it->virtual_base + it->length)
        throw std::out_of_range("virt_to_phys: address beyond the ROI");
    return it->physical_base + (va - it->virtual_base);
}

std::optional<uint64_t> BlockMap::phys_to_virt(uint64_t pa) const {
    auto it = std::upper_bound(by_phys_.begin(), by_phys_.end(), pa, [&](uint64_t v, uint32_t i) {
        return v < pairs_[i].physical_base;
    });
    if (it == by_phys_.begin()) return std::nullopt;
    const BlockPair& p = pairs_[*std::prev(it)];
    if (pa >= p.physical_base + p.length) return std::nullopt;
    return p.virtual_base + (pa - p.physical_base);
}

uint64_t BlockMap::phys_min() const {
    uint64_t m = UINT64_MAX;
    for (const auto& p : pairs_) m = std::min(m, p.physical_base);
    return m;
}

uint64_t BlockMap::phys_max() const {
    uint64_t m = 0;
    for (const auto& p : pairs_) m = std::max(m, p.physical_base + p.length - 1);
    return m;
}

std::pair<uint64_t, uint64_t> BlockMap::phys_extremes(uint64_t va_lo, uint64_t va_hi) const {
    uint64_t lo = UINT64_MAX, hi = 0;
    for (const auto& p : pairs_) {
        const uint64_t blo = std::max(p.virtual_base, va_lo);
        const uint64_t bhi = std::min(p.virtual_base + p.length, va_hi);
        if (blo >= bhi) continue;
        lo = std::min(lo, p.physical_base + (blo - p.virtual_base));
        hi = std::max(hi, p.physical_base + (bhi - 1 - p.virtual_base));
    }
    if (lo > hi) throw std::out_of_range("phys_extremes: window does not intersect the map");
    return {lo, hi};
}

SyntheticAllocator::SyntheticAllocator(const SyntheticAllocatorConfig& cfg, uint64_t pages_needed,
                                       uint32_t page_size) {
    cfg.validate(pages_needed * page_size);
    const uint64_t total_frames = cfg.physical_space / page_size;
    if (total_frames < pages_needed)
        throw ConfigError("synthetic allocator: not enough frames for the ROI");

    Rng rng(splitmix64(cfg.rng_seed));
    std::unordered_set<uint64_t> used;
    frames_.reserve(pages_needed);

    // Leave head-room so a fully contiguous run always fits.
    uint64_t frame = rng.uniform(total_frames - pages_needed + 1);
    used.insert(frame);
    frames_.push_back(frame);
    for (uint64_t i = 1; i < pages_needed; ++i) {
        uint64_t next = UINT64_MAX;
        const bool contiguous = !rng.bernoulli(cfg.fragmentation_prob);
        if (contiguous && frame + 1 < total_frames && !used.count(frame + 1)) {
            next = frame + 1;
        } else {
            // non-adjacent free frame; fall back to a scan when the space is
            // nearly full so the rejection loop terminates
            for (int attempt = 0; attempt < 64; ++attempt) {
                const uint64_t cand = rng.uniform(total_frames);
                if (!used.count(cand) && cand != frame + 1) {
                    next = cand;
                    break;
                }
            }
            if (next == UINT64_MAX) {
                for (uint64_t cand = 0; cand < total_frames; ++cand) {
                    if (used.count(cand)) continue;
                    next = cand;
                    if (cand != frame + 1) break;
                }
            }
        }
        used.insert(next);
        frames_.push_back(next);
        frame = next;
    }
}

std::optional<uint64_t> SyntheticAllocator::frame_of(uint64_t virtual_page) {
    if (first_page_ == UINT64_MAX) first_page_ = virtual_page;
    if (virtual_page < first_page_) return std::nullopt;
    const uint64_t index = virtual_page - first_page_;
    if (index >= frames_.size()) return std::nullopt;
    return frames_[index];
}

OsPagemapProvider::OsPagemapProvider() {
    fd_ = ::open("/proc/self/pagemap", O_RDONLY);
    if (fd_ < 0) throw ConfigError("os pagemap provider: cannot open /proc/self/pagemap");
}

OsPagemapProvider::~OsPagemapProvider() {
    if (fd_ >= 0) ::close(fd_);
}

bool OsPagemapProvider::available() {
    const int fd = ::open("/proc/self/pagemap", O_RDONLY);
    if (fd < 0) return false;
    ::close(fd);
    return true;
}

std::optional<uint64_t> OsPagemapProvider::frame_of(uint64_t virtual_page) {
    uint64_t entry = 0;
    const off_t offset = static_cast<off_t>(virtual_page) * 8;
    if (::pread(fd_, &entry, sizeof(entry), offset) != sizeof(entry)) return std::nullopt;
    if (!(entry & (1ULL << 63))) return std::nullopt;  // page not present
    const uint64_t pfn = entry & ((1ULL << 55) - 1);
    if (pfn == 0) return std::nullopt;  // hidden without CAP_SYS_ADMIN
    return pfn;
}

BlockMap build_block_map(const Roi& roi, PageMapProvider& provider, uint32_t page_size) {
    roi.validate();
    std::vector<BlockPair> pairs;

    uint64_t va = roi.start;
    const uint64_t end = roi.end();
    bool have_block = false;
    BlockPair current{};
    uint64_t prev_pa_end = 0;

    while (va < end) {
        const uint64_t page = va / page_size;
        const uint64_t in_page = va % page_size;
        const uint64_t chunk = std::min<uint64_t>(page_size - in_page, end - va);
        const auto frame = provider.frame_of(page);
        if (!frame) throw PlanningError("build_block_map: provider has no frame for a ROI page");
        const uint64_t pa = *frame * page_size + in_page;

        if (have_block && pa == prev_pa_end) {
            current.length += chunk;
        } else {
            if (have_block) pairs.push_back(current);
            current = BlockPair{va, pa, chunk};
            have_block = true;
        }
        prev_pa_end = pa + chunk;
        va += chunk;
    }
    if (have_block) pairs.push_back(current);
    return BlockMap(std::move(pairs), page_size);
}

}  // namespace rademu::vmem
