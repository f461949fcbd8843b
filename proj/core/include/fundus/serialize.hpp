#pragma once

// JSON mappings for the network specs, used by checkpoints and configs.

#include <nlohmann/json.hpp>

#include "fundus/networks.hpp"
#include "fundus/segnet.hpp"

namespace fundus {

void to_json(nlohmann::ordered_json& j, const CbamSpec& s);
void from_json(const nlohmann::ordered_json& j, CbamSpec& s);
void to_json(nlohmann::ordered_json& j, const GeneratorSpec& s);
void from_json(const nlohmann::ordered_json& j, GeneratorSpec& s);
void to_json(nlohmann::ordered_json& j, const DiscriminatorSpec& s);
void from_json(const nlohmann::ordered_json& j, DiscriminatorSpec& s);
void to_json(nlohmann::ordered_json& j, const UNetSpec& s);
void from_json(const nlohmann::ordered_json& j, UNetSpec& s);

}  // namespace fundus
