#include <doctest.h>

#include <set>

#include "rademu/addrspace.hpp"
#include "rademu/rng.hpp"

using namespace rademu;
using namespace rademu::vmem;

namespace {

constexpr uint32_t kPage = 4096;

SyntheticAllocatorConfig alloc_cfg(double frag, uint64_t seed, uint64_t space = 64 * kPage) {
    SyntheticAllocatorConfig cfg;
    cfg.fragmentation_prob = frag;
    cfg.physical_space = space;
    cfg.rng_seed = seed;
    return cfg;
}

}  // namespace

TEST_CASE("roi validation") {
    CHECK_THROWS_AS((Roi{0, 0}.validate()), ConfigError);
    CHECK_THROWS_AS((Roi{UINT64_MAX, 2}.validate()), ConfigError);
    CHECK_NOTHROW((Roi{0x1000, 4096}.validate()));
}

TEST_CASE("single page roi maps to one block pair") {
    Roi roi{0x10000, kPage};
    SyntheticAllocator provider(alloc_cfg(0.0, 3), 2, kPage);
    BlockMap map = build_block_map(roi, provider, kPage);
    REQUIRE(map.pairs().size() == 1);
    CHECK(map.pairs()[0].virtual_base == roi.start);
    CHECK(map.pairs()[0].length == kPage);
}

TEST_CASE("fully contiguous allocation coalesces into one block") {
    Roi roi{0x10000, 8 * kPage};
    SyntheticAllocator provider(alloc_cfg(0.0, 4), 9, kPage);
    BlockMap map = build_block_map(roi, provider, kPage);
    REQUIRE(map.pairs().size() == 1);
    CHECK(map.pairs()[0].length == 8 * kPage);
}

TEST_CASE("full fragmentation yields eight single-page, pairwise non-adjacent blocks") {
    Roi roi{0x10000, 8 * kPage};
    SyntheticAllocator provider(alloc_cfg(1.0, 5), 9, kPage);
    BlockMap map = build_block_map(roi, provider, kPage);
    REQUIRE(map.pairs().size() == 8);
    std::set<uint64_t> frames;
    for (const auto& p : map.pairs()) {
        CHECK(p.length == kPage);
        frames.insert(p.physical_base / kPage);
    }
    CHECK(frames.size() == 8);  // injective
    // consecutive virtual pages sit on non-adjacent frames
    for (size_t i = 0; i + 1 < map.pairs().size(); ++i)
        CHECK(map.pairs()[i + 1].physical_base != map.pairs()[i].physical_base + kPage);
}

TEST_CASE("unaligned roi start and residual tail") {
    Roi roi{0x10000 + 100, 2 * kPage + 50};
    SyntheticAllocator provider(alloc_cfg(1.0, 6), 4, kPage);
    BlockMap map = build_block_map(roi, provider, kPage);
    uint64_t total = 0;
    for (const auto& p : map.pairs()) total += p.length;
    CHECK(total == roi.size);
    CHECK(map.pairs().front().virtual_base == roi.start);
    // offsets within a page are preserved
    CHECK(map.pairs().front().physical_base % kPage == 100);
}

TEST_CASE("virt_to_phys preserves offsets; out-of-roi throws") {
    Roi roi{0x40000, 16 * kPage};
    SyntheticAllocator provider(alloc_cfg(0.7, 7), 17, kPage);
    BlockMap map = build_block_map(roi, provider, kPage);

    CHECK(map.virt_to_phys(roi.start) == map.pairs().front().physical_base);
    for (const auto& p : map.pairs())
        for (uint64_t k : {uint64_t{0}, p.length / 2, p.length - 1})
            CHECK(map.virt_to_phys(p.virtual_base + k) == p.physical_base + k);

    CHECK_THROWS_AS(map.virt_to_phys(roi.start - 1), std::out_of_range);
    CHECK_THROWS_AS(map.virt_to_phys(roi.end()), std::out_of_range);
}

TEST_CASE("phys_to_virt inverts virt_to_phys and is absent off the map") {
    Roi roi{0x40000, 16 * kPage};
    SyntheticAllocator provider(alloc_cfg(0.9, 8), 17, kPage);
    BlockMap map = build_block_map(roi, provider, kPage);

    Rng rng(11);
    for (int i = 0; i < 10000; ++i) {
        const uint64_t va = roi.start + rng.uniform(roi.size);
        const uint64_t pa = map.virt_to_phys(va);
        const auto back = map.phys_to_virt(pa);
        REQUIRE(back.has_value());
        CHECK(*back == va);
    }
    for (const auto& p : map.pairs()) {
        CHECK(map.phys_to_virt(p.physical_base) == p.virtual_base);
        CHECK(map.phys_to_virt(p.physical_base + p.length - 1) == p.virtual_base + p.length - 1);
    }

    // addresses outside every block resolve to nothing
    std::set<uint64_t> frames;
    for (const auto& p : map.pairs())
        for (uint64_t f = p.physical_base / kPage; f <= (p.physical_base + p.length - 1) / kPage;
             ++f)
            frames.insert(f);
    uint64_t hole = 0;
    while (frames.count(hole)) ++hole;
    CHECK(!map.phys_to_virt(hole * kPage).has_value());
}

TEST_CASE("synthetic allocator is deterministic per seed") {
    Roi roi{0x40000, 32 * kPage};
    for (uint64_t seed : {1ULL, 2ULL, 3ULL}) {
        SyntheticAllocator p1(alloc_cfg(0.5, seed), 33, kPage);
        SyntheticAllocator p2(alloc_cfg(0.5, seed), 33, kPage);
        BlockMap m1 = build_block_map(roi, p1, kPage);
        BlockMap m2 = build_block_map(roi, p2, kPage);
        REQUIRE(m1.pairs().size() == m2.pairs().size());
        for (size_t i = 0; i < m1.pairs().size(); ++i) {
            CHECK(m1.pairs()[i].physical_base == m2.pairs()[i].physical_base);
            CHECK(m1.pairs()[i].length == m2.pairs()[i].length);
        }
    }
}

TEST_CASE("allocator rejects a physical space smaller than the roi") {
    CHECK_THROWS_AS(SyntheticAllocator(alloc_cfg(0.5, 1, 2 * kPage), 8, kPage), ConfigError);
}

TEST_CASE("phys extremes restricted to a window") {
    Roi roi{0x40000, 8 * kPage};
    SyntheticAllocator provider(alloc_cfg(1.0, 12), 9, kPage);
    BlockMap map = build_block_map(roi, provider, kPage);
    const auto [lo, hi] = map.phys_extremes(roi.start + kPage, roi.start + 2 * kPage);
    CHECK(lo == map.virt_to_phys(roi.start + kPage));
    CHECK(hi == map.virt_to_phys(roi.start + 2 * kPage - 1));
}
