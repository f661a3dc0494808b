#pragma once

#include "rademu/dram.hpp"

namespace testcfg {

// 8GB 128-bit LPDDR4-like target device. With the default layout this puts
// column bits at a4..a10, bank at a11..a13, channel at a14..a16, rank at
// a17 and the row at a18 and up.
inline rademu::dram::DramConfig jetson_like() {
    rademu::dram::DramConfig cfg;
    cfg.channels = 8;
    cfg.ranks = 2;
    cfg.banks = 8;
    cfg.rows = 32768;
    cfg.columns = 1024;
    cfg.dq_width = 16;
    cfg.channel_width = 8;
    cfg.burst_length = 16;
    cfg.page_size = 4096;
    return cfg;
}

// Scaled-down device for exhaustive property tests (128 KiB of addresses).
inline rademu::dram::DramConfig scaled() {
    rademu::dram::DramConfig cfg;
    cfg.channels = 2;
    cfg.ranks = 1;
    cfg.banks = 4;
    cfg.rows = 128;
    cfg.columns = 128;
    cfg.dq_width = 8;
    cfg.channel_width = 8;
    cfg.burst_length = 4;
    cfg.page_size = 4096;
    return cfg;
}

// Larger variant used for the >= 2^20-address exhaustive sweeps (2 MiB).
inline rademu::dram::DramConfig scaled_sweep() {
    rademu::dram::DramConfig cfg = scaled();
    cfg.rows = 512;
    cfg.columns = 512;
    return cfg;
}

}  // namespace testcfg
