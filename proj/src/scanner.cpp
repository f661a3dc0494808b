#include "rademu/scanner.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <thread>

#include <nlohmann/json.hpp>

namespace rademu::scan {

namespace {

double eval_image_subset(const std::vector<std::byte>& image, const nn::Dataset& ds,
                         const std::vector<uint32_t>& subset, const nn::ExitPolicy& policy) {
    // fresh parse per evaluation: header corruption surfaces as a crash
    nn::EngineLayout layout;
    try {
        layout = nn::parse_layout(image);
    } catch (const ParseError&) {
        return 0.0;
    }
    nn::EvalOptions opts;
    opts.policy = policy;
    opts.subset = &subset;
    return nn::evaluate(layout, image, ds, opts).performance_pts;
}

}  // namespace

std::vector<uint32_t> SensitivityMap::sensitive_per_byte(double threshold_pts) const {
    std::vector<uint32_t> counts(image_bytes, 0);
    for (size_t bit = 0; bit < delta_pts.size(); ++bit)
        if (delta_pts[bit] >= threshold_pts) ++counts[bit / 8];
    return counts;
}

SensitivityMap sensitivity_scan(const std::vector<std::byte>& image, const nn::Dataset& eval_set,
                                const ScanOptions& opts) {
    const std::vector<uint32_t> subset =
        nn::stratified_subset(eval_set, opts.subset_per_class, opts.subset_seed);

    SensitivityMap map;
    map.image_bytes = image.size();
    map.delta_pts.assign(image.size() * 8, 0.0f);
    map.baseline_pts = eval_image_subset(image, eval_set, subset, opts.policy);

    uint32_t threads = opts.threads;
    if (threads == 0)
        threads = std::min<uint32_t>(8, std::max<uint32_t>(1, std::thread::hardware_concurrency()));

    const size_t total_bits = image.size() * 8;
    auto worker = [&](uint32_t tid, uint32_t nthreads) {
        std::vector<std::byte> local = image;  // private copy, flipped in place
        for (size_t bit = tid; bit < total_bits; bit += nthreads) {
            const size_t byte = bit / 8;
            const auto mask = static_cast<std::byte>(1u << (bit % 8));
            local[byte] ^= mask;
            const double perf = eval_image_subset(local, eval_set, subset, opts.policy);
            local[byte] ^= mask;
            map.delta_pts[bit] = static_cast<float>(map.baseline_pts - perf);
        }
    };

    if (threads <= 1) {
        worker(0, 1);
    } else {
        std::vector<std::thread> pool;
        for (uint32_t t = 0; t < threads; ++t) pool.emplace_back(worker, t, threads);
        for (auto& t : pool) t.join();
    }
    return map;
}

ByteRange select_sensitive_range(const SensitivityMap& map, uint64_t length_bytes,
                                 double threshold_pts) {
    const std::vector<uint32_t> counts = map.sensitive_per_byte(threshold_pts);
    length_bytes = std::min<uint64_t>(length_bytes, counts.size());
    uint64_t window = 0;
    for (uint64_t i = 0; i < length_bytes; ++i) window += counts[i];
    uint64_t best = window, best_lo = 0;
    for (uint64_t lo = 1; lo + length_bytes <= counts.size(); ++lo) {
        window += counts[lo + length_bytes - 1];
        window -= counts[lo - 1];
        if (window > best) {
            best = window;
            best_lo = lo;
        }
    }
    return ByteRange{best_lo, best_lo + length_bytes};
}

std::vector<double> layer_sensitive_density(const SensitivityMap& map,
                                            const nn::EngineLayout& layout,
                                            double threshold_pts) {
    std::vector<double> density(layout.layers.size(), 0.0);
    std::vector<uint64_t> sensitive(layout.layers.size(), 0), total(layout.layers.size(), 0);
    for (const auto& range : layout.layout_index) {
        if (range.exit != -1 || range.layer < 0) continue;  // backbone only
        for (uint64_t off = range.offset; off < range.offset + range.length; ++off) {
            for (uint32_t b = 0; b < 8; ++b) {
                ++total[range.layer];
                if (map.delta_pts[off * 8 + b] >= threshold_pts) ++sensitive[range.layer];
            }
        }
    }
    for (size_t i = 0; i < density.size(); ++i)
        density[i] = total[i] ? static_cast<double>(sensitive[i]) / total[i] : 0.0;
    return density;
}

// --- campaigns -----------------------------------------------------------

double CampaignResult::mean_pts() const {
    if (rounds.empty()) return baseline_pts;
    double s = 0.0;
    for (const auto& r : rounds) s += r.performance_pts;
    return s / rounds.size();
}

double CampaignResult::min_pts() const {
    double m = baseline_pts;
    for (const auto& r : rounds) m = std::min(m, r.performance_pts);
    return m;
}

double CampaignResult::max_pts() const {
    double m = rounds.empty() ? baseline_pts : rounds.front().performance_pts;
    for (const auto& r : rounds) m = std::max(m, r.performance_pts);
    return m;
}

double crash_rate(const CampaignResult& result) {
    if (result.rounds.empty()) throw std::invalid_argument("crash_rate: no rounds");
    uint64_t crashes = 0;
    for (const auto& r : result.rounds) crashes += r.crash;
    return static_cast<double>(crashes) / result.rounds.size();
}

CampaignResult run_campaign(nn::Engine& engine, const nn::Dataset& eval_set,
                            const CampaignConfig& cfg) {
    cfg.dram.validate();
    cfg.error_model.validate();
    const dram::AddressScheme scheme = dram::make_scheme(cfg.dram, cfg.scheme);

    const uint64_t roi_size = engine.image.size();
    const vmem::Roi roi{cfg.roi_base, roi_size};
    const uint32_t page_size = cfg.dram.page_size;
    uint64_t phys_space = cfg.physical_space;
    if (phys_space == 0) {
        phys_space = 4 * roi_size;
        phys_space = (phys_space + page_size - 1) / page_size * page_size + page_size;
    }
    if (phys_space > cfg.dram.capacity_bytes())
        throw ConfigError("campaign: physical space exceeds the DRAM capacity");

    std::optional<inject::AcceptWindow> window;
    if (cfg.window) {
        if (cfg.window->hi > roi_size || cfg.window->lo >= cfg.window->hi)
            throw ConfigError("campaign: sensitive byte range outside the engine image");
        window = inject::AcceptWindow{roi.start + cfg.window->lo, roi.start + cfg.window->hi};
    }

    nn::EvalOptions eval_opts;
    eval_opts.policy = cfg.policy;

    CampaignResult result;
    result.crash_threshold_pts = cfg.crash_threshold_pts;
    result.baseline_pts = nn::evaluate(engine.layout, engine.image, eval_set, eval_opts).performance_pts;

    const uint64_t pages_needed = (roi_size + page_size - 1) / page_size + 1;
    std::span<std::byte> buffer(engine.image.data(), engine.image.size());

    for (uint32_t round = 0; round < cfg.rounds; ++round) {
        const uint64_t round_seed = derive_seed(cfg.seed, round);
        RoundRecord rec;
        rec.round = round;
        rec.seed = round_seed;

        if (cfg.mode == InjectionMode::correlated) {
            vmem::SyntheticAllocatorConfig alloc;
            alloc.fragmentation_prob = cfg.fragmentation_prob;
            alloc.physical_space = phys_space;
            alloc.rng_seed = derive_seed(round_seed, 1);
            vmem::SyntheticAllocator provider(alloc, pages_needed, page_size);
            const vmem::BlockMap map = vmem::build_block_map(roi, provider, page_size);

            const inject::InjectionPlan plan =
                inject::plan_injection(roi, map, cfg.dram, scheme, cfg.error_model, cfg.total_bits,
                                       derive_seed(round_seed, 2), window);
            const inject::InjectionRecord record = inject::apply_flips(buffer, roi, plan);
            const nn::EvalResult ev = nn::evaluate(engine.layout, engine.image, eval_set, eval_opts);
            inject::revert(buffer, roi, record);
            rec.performance_pts = ev.performance_pts;
            rec.mean_exit_index = ev.mean_exit_index;
            rec.mean_layers = ev.mean_layers;
        } else {
            // dumb-random baseline: same count, uniform over image bits
            Rng rng(splitmix64(derive_seed(round_seed, 3)));
            const uint64_t lo = cfg.window ? cfg.window->lo : 0;
            const uint64_t hi = cfg.window ? cfg.window->hi : roi_size;
            std::vector<uint64_t> picked;
            std::set<uint64_t> seen;
            while (picked.size() < cfg.total_bits) {
                const uint64_t bit = (lo + rng.uniform(hi - lo)) * 8 + rng.uniform(8);
                if (seen.insert(bit).second) picked.push_back(bit);
            }
            for (uint64_t bit : picked)
                buffer[bit / 8] ^= static_cast<std::byte>(1u << (bit % 8));
            const nn::EvalResult ev = nn::evaluate(engine.layout, engine.image, eval_set, eval_opts);
            for (uint64_t bit : picked)
                buffer[bit / 8] ^= static_cast<std::byte>(1u << (bit % 8));
            rec.performance_pts = ev.performance_pts;
            rec.mean_exit_index = ev.mean_exit_index;
            rec.mean_layers = ev.mean_layers;
        }

        rec.drop_pts = result.baseline_pts - rec.performance_pts;
        rec.crash = rec.drop_pts >= cfg.crash_threshold_pts;
        result.rounds.push_back(rec);
    }
    return result;
}

// --- emitters ------------------------------------------------------------

void write_rounds_csv(const CampaignResult& result, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path);
    out << "round,seed,performance,drop,crash,mean_exit_index,mean_layers\n";
    char buf[256];
    for (const auto& r : result.rounds) {
        std::snprintf(buf, sizeof(buf), "%u,%llu,%.6f,%.6f,%d,%.4f,%.4f\n", r.round,
                      static_cast<unsigned long long>(r.seed), r.performance_pts, r.drop_pts,
                      r.crash ? 1 : 0, r.mean_exit_index, r.mean_layers);
        out << buf;
    }
}

void write_summary_json(const CampaignResult& result, const CampaignConfig& cfg,
                        const std::string& variant, const std::string& path) {
    nlohmann::json j;
    j["variant"] = variant;
    j["total_bits"] = cfg.total_bits;
    j["rounds"] = result.rounds.size();
    j["area"] = cfg.window ? "sensitive" : "global";
    if (cfg.window) {
        j["window_lo"] = cfg.window->lo;
        j["window_hi"] = cfg.window->hi;
    }
    j["scheme"] = dram::scheme_name(cfg.scheme);
    j["mode"] = cfg.mode == InjectionMode::correlated ? "correlated" : "uniform_random";
    j["seed"] = cfg.seed;
    j["baseline"] = result.baseline_pts;
    j["mean"] = result.mean_pts();
    j["min"] = result.min_pts();
    j["max"] = result.max_pts();
    j["crash_threshold"] = result.crash_threshold_pts;
    j["crash_rate"] = result.rounds.empty() ? 0.0 : crash_rate(result);
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path);
    out << j.dump(2) << "\n";
}

void write_sensitivity_csv(const SensitivityMap& map, const nn::EngineLayout& layout,
                           const std::string& path) {
    // layer attribution per byte (-1 = header/table/padding)
    std::vector<int32_t> layer_of(map.image_bytes, -1);
    std::vector<int32_t> exit_of(map.image_bytes, -1);
    for (const auto& range : layout.layout_index)
        for (uint64_t off = range.offset; off < range.offset + range.length; ++off) {
            layer_of[off] = range.layer;
            exit_of[off] = range.exit;
        }

    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path);
    out << "bit,byte,page,delta,layer,exit\n";
    char buf[160];
    for (size_t bit = 0; bit < map.delta_pts.size(); ++bit) {
        const size_t byte = bit / 8;
        std::snprintf(buf, sizeof(buf), "%zu,%zu,%zu,%.4f,%d,%d\n", bit, byte,
                      byte / map.page_size, static_cast<double>(map.delta_pts[bit]),
                      layer_of[byte], exit_of[byte]);
        out << buf;
    }
}

void write_page_grid_csv(const SensitivityMap& map, uint32_t bin_bytes, double threshold_pts,
                         const std::string& path) {
    // one row per page, one column per bin: count of sensitive bits
    const std::vector<uint32_t> per_byte = map.sensitive_per_byte(threshold_pts);
    const uint32_t bins = map.page_size / bin_bytes;
    const size_t pages = (map.image_bytes + map.page_size - 1) / map.page_size;
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path);
    for (size_t p = 0; p < pages; ++p) {
        for (uint32_t b = 0; b < bins; ++b) {
            uint64_t count = 0;
            const uint64_t lo = p * map.page_size + static_cast<uint64_t>(b) * bin_bytes;
            for (uint64_t off = lo; off < lo + bin_bytes && off < map.image_bytes; ++off)
                count += per_byte[off];
            out << count << (b + 1 < bins ? "," : "");
        }
        out << "\n";
    }
}

}  // namespace rademu::scan
