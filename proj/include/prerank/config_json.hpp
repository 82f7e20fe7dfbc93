#pragma once

#include <nlohmann/json.hpp>

#include "prerank/losses.hpp"
#include "prerank/marketplace.hpp"
#include "prerank/samples.hpp"
#include "prerank/teacher.hpp"
#include "prerank/two_tower.hpp"

// JSON forms of the configuration structs. Missing keys keep their defaults;
// unknown keys raise ConfigError.
namespace prerank {

void to_json(nlohmann::json& j, const SimConfig& c);
void from_json(const nlohmann::json& j, SimConfig& c);
void to_json(nlohmann::json& j, const CascadePolicy& c);
void from_json(const nlohmann::json& j, CascadePolicy& c);
void to_json(nlohmann::json& j, const SampleConfig& c);
void from_json(const nlohmann::json& j, SampleConfig& c);
void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);
void to_json(nlohmann::json& j, const TeacherConfig& c);
void from_json(const nlohmann::json& j, TeacherConfig& c);
void to_json(nlohmann::json& j, const LossConfig& c);
void from_json(const nlohmann::json& j, LossConfig& c);

}  // namespace prerank
