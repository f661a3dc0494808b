#include "rademu/json_io.hpp"

#include <filesystem>
#include <fstream>

namespace rademu::io {

json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open " + path);
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

dram::DramConfig dram_config_from_json(const json& j) {
    dram::DramConfig cfg;
    try {
        cfg.channels = j.at("channels");
        cfg.ranks = j.at("ranks");
        cfg.banks = j.at("banks");
        cfg.rows = j.at("rows");
        cfg.columns = j.at("columns");
        cfg.dq_width = j.at("dq_width");
        cfg.channel_width = j.at("channel_width");
        cfg.burst_length = j.at("burst_length");
        cfg.page_size = j.value("page_size", 4096u);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("dram standard: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

json dram_config_to_json(const dram::DramConfig& cfg) {
    return json{{"channels", cfg.channels},   {"ranks", cfg.ranks},
                {"banks", cfg.banks},         {"rows", cfg.rows},
                {"columns", cfg.columns},     {"dq_width", cfg.dq_width},
                {"channel_width", cfg.channel_width}, {"burst_length", cfg.burst_length},
                {"page_size", cfg.page_size}};
}

namespace {

dram::Level level_from_string(const std::string& s) {
    if (s == "channel") return dram::Level::channel;
    if (s == "rank") return dram::Level::rank;
    if (s == "bank") return dram::Level::bank;
    if (s == "row") return dram::Level::row;
    if (s == "column") return dram::Level::column;
    throw ConfigError("dram mapping: unknown level " + s);
}

}  // namespace

dram::AddressScheme scheme_from_json(const json& j, const dram::DramConfig& cfg,
                                     dram::SchemeId id) {
    if (j.value("derive", false)) return dram::make_scheme(cfg, id);
    const std::string key = dram::scheme_name(id);
    if (!j.contains(key)) {
        if (j.contains("schemes") && j.at("schemes").contains(key))
            return scheme_from_json(json{{key, j.at("schemes").at(key)}}, cfg, id);
        throw ConfigError(std::string("dram mapping: no layout for scheme ") + key);
    }
    const json& sj = j.at(key);
    dram::AddressScheme s;
    s.id = id;
    try {
        for (const auto& f : sj.at("fields"))
            s.fields.push_back(dram::FieldRange{level_from_string(f.at("level")), f.at("lo"),
                                                f.at("width")});
        for (const auto& x : sj.value("xors", json::array()))
            s.xors.push_back(dram::XorFunction{level_from_string(x.at("target")), x.at("src_lo"),
                                               x.at("width"), x.at("tgt_lo")});
    } catch (const json::exception& e) {
        throw ConfigError(std::string("dram mapping: ") + e.what());
    }
    s.validate(cfg);
    return s;
}

rad::ErrorModelConfig error_model_from_json(const json& j) {
    rad::ErrorModelConfig m = rad::ErrorModelConfig::defaults();
    try {
        if (j.contains("multiplicity_pmf")) {
            m.multiplicity_pmf.fill(0.0);
            const auto& pmf = j.at("multiplicity_pmf");
            // accepted as {"1": 0.85, "2": 0.12, ...}
            for (auto it = pmf.begin(); it != pmf.end(); ++it) {
                const int size = std::stoi(it.key());
                if (size < 1 || size > 8)
                    throw ConfigError("error model: pmf support must be within 1..8");
                m.multiplicity_pmf[size] = it.value();
            }
        }
        m.wordline_prob = j.value("wordline_prob", m.wordline_prob);
        m.bitline_prob = j.value("bitline_prob", m.bitline_prob);
        m.max_row_extent = j.value("max_row_extent", m.max_row_extent);
        m.max_col_extent = j.value("max_col_extent", m.max_col_extent);
        m.rng_seed = j.value("rng_seed", m.rng_seed);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("error model: ") + e.what());
    }
    m.validate();
    return m;
}

json error_model_to_json(const rad::ErrorModelConfig& m) {
    json pmf = json::object();
    for (int s = 1; s <= 8; ++s)
        if (m.multiplicity_pmf[s] > 0.0) pmf[std::to_string(s)] = m.multiplicity_pmf[s];
    return json{{"multiplicity_pmf", pmf},
                {"wordline_prob", m.wordline_prob},
                {"bitline_prob", m.bitline_prob},
                {"max_row_extent", m.max_row_extent},
                {"max_col_extent", m.max_col_extent},
                {"rng_seed", m.rng_seed}};
}

ModelConfig model_config_from_json(const json& j) {
    ModelConfig mc;
    try {
        const std::string task = j.value("task", "classification");
        mc.backbone.task = task == "detection" ? nn::TaskKind::detection
                                               : nn::TaskKind::classification;
        if (j.contains("input")) {
            const auto& in = j.at("input");
            mc.backbone.input = nn::Shape{in.at(0), in.at(1), in.at(2)};
        }
        mc.backbone.classes = j.value("classes", 4u);
        mc.backbone.det_grid = j.value("det_grid", 3u);
        if (j.contains("stages")) {
            mc.backbone.stages.clear();
            for (const auto& s : j.at("stages"))
                mc.backbone.stages.push_back(nn::ConvStage{s.at("filters"), s.value("stride", 1u),
                                                           s.value("pool", true)});
        }
        if (j.contains("dense_units"))
            mc.backbone.dense_units = j.at("dense_units").get<std::vector<uint32_t>>();
        mc.backbone.kernel = j.value("kernel", 3u);
        mc.backbone.head_channels = j.value("head_channels", 8u);
        if (j.contains("exits")) mc.backbone.exit_attach = j.at("exits").get<std::vector<uint32_t>>();
        mc.backbone.seed = j.value("seed", 1u);

        mc.train.epochs = j.value("epochs", mc.train.epochs);
        mc.train.batch = j.value("batch", mc.train.batch);
        mc.train.lr = j.value("lr", mc.train.lr);
        mc.train.momentum = j.value("momentum", mc.train.momentum);
        mc.train.lr_decay = j.value("lr_decay", mc.train.lr_decay);
        mc.train.exit_epochs = j.value("exit_epochs", mc.train.exit_epochs);
        mc.train.exit_lr = j.value("exit_lr", mc.train.exit_lr);
        mc.default_exit_threshold = j.value("exit_threshold", mc.default_exit_threshold);
        mc.theta_presence = j.value("theta_presence", mc.theta_presence);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("model config: ") + e.what());
    }
    return mc;
}

nn::Dataset dataset_from_manifest(const json& j, const std::string& base_dir) {
    try {
        if (j.contains("dir")) {
            const std::string dir = j.at("dir");
            const std::filesystem::path p(dir);
            return nn::load_dataset_dir(p.is_absolute() ? dir : base_dir + "/" + dir);
        }
        nn::DatasetConfig cfg;
        const std::string task = j.value("task", "classification");
        cfg.task = task == "detection" ? nn::TaskKind::detection : nn::TaskKind::classification;
        cfg.count = j.value("count", cfg.count);
        cfg.image_hw = j.value("image_hw", cfg.image_hw);
        cfg.classes = j.value("classes", cfg.classes);
        cfg.det_grid = j.value("det_grid", cfg.det_grid);
        cfg.noise = j.value("noise", cfg.noise);
        cfg.seed = j.value("seed", cfg.seed);
        return nn::generate_dataset(cfg);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("dataset manifest: ") + e.what());
    }
}

namespace {

json cell_to_json(const dram::CellCoord& c) {
    return json{{"row", c.row},   {"column", c.column},       {"channel", c.channel},
                {"rank", c.rank}, {"bank", c.bank},           {"bit_in_block", c.bit_in_block}};
}

dram::CellCoord cell_from_json(const json& j) {
    dram::CellCoord c;
    c.row = j.at("row");
    c.column = j.at("column");
    c.channel = j.at("channel");
    c.rank = j.at("rank");
    c.bank = j.at("bank");
    c.bit_in_block = j.at("bit_in_block");
    return c;
}

}  // namespace

json plan_to_json(const inject::InjectionPlan& plan) {
    json events = json::array();
    for (const auto& e : plan.events) {
        json cells = json::array();
        for (const auto& c : e.cells) {
            cells.push_back(json{{"cell", cell_to_json(c.cell)},
                                 {"pa", c.pa},
                                 {"va", c.va},
                                 {"bit_in_byte", c.bit_in_byte}});
        }
        events.push_back(json{{"reference", cell_to_json(e.cluster.reference)},
                              {"multiplicity", e.cluster.multiplicity},
                              {"cells", cells}});
    }
    return json{{"total_bits", plan.total_bits}, {"seed", plan.seed}, {"events", events}};
}

inject::InjectionPlan plan_from_json(const json& j) {
    inject::InjectionPlan plan;
    try {
        plan.total_bits = j.at("total_bits");
        plan.seed = j.at("seed");
        for (const auto& ej : j.at("events")) {
            inject::PlannedEvent e;
            e.cluster.reference = cell_from_json(ej.at("reference"));
            e.cluster.multiplicity = ej.at("multiplicity");
            for (const auto& cj : ej.at("cells")) {
                inject::PlannedCell pc;
                pc.cell = cell_from_json(cj.at("cell"));
                pc.pa = cj.at("pa");
                pc.va = cj.at("va");
                pc.bit_in_byte = cj.at("bit_in_byte");
                e.cluster.cells.push_back(pc.cell);
                e.cells.push_back(pc);
            }
            plan.events.push_back(std::move(e));
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("injection plan: ") + e.what());
    }
    return plan;
}

}  // namespace rademu::io
