#pragma once

#include <string>

#include <nlohmann/json.hpp>

#include "rademu/addrspace.hpp"
#include "rademu/dram.hpp"
#include "rademu/injector.hpp"
#include "rademu/radiation.hpp"
#include "rademu/train.hpp"

namespace rademu::io {

using nlohmann::json;

json load_json_file(const std::string& path);  // throws ConfigError

// dram_standard.json: device geometry
dram::DramConfig dram_config_from_json(const json& j);
json dram_config_to_json(const dram::DramConfig& cfg);

// dram_mapping.json: either {"derive": true} or explicit per-scheme layouts
dram::AddressScheme scheme_from_json(const json& j, const dram::DramConfig& cfg,
                                     dram::SchemeId id);

// error_model.json
rad::ErrorModelConfig error_model_from_json(const json& j);
json error_model_to_json(const rad::ErrorModelConfig& m);

// model config: backbone topology + training hyperparameters
struct ModelConfig {
    nn::BackboneConfig backbone;
    nn::TrainConfig train;
    float default_exit_threshold = 0.9f;
    float theta_presence = 0.5f;
};
ModelConfig model_config_from_json(const json& j);

// dataset manifest: generator spec or a raw directory reference
nn::Dataset dataset_from_manifest(const json& j, const std::string& base_dir);

// audit trail for plans
json plan_to_json(const inject::InjectionPlan& plan);
inject::InjectionPlan plan_from_json(const json& j);

}  // namespace rademu::io
