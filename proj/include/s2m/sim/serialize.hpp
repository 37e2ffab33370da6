#pragma once

#include <json.hpp>

#include "s2m/sim/simulate.hpp"
#include "s2m/sim/sketch.hpp"

namespace s2m {

inline nlohmann::json sim_params_to_json(const SimParams& p) {
  return {{"image_shape", p.image_shape},
          {"min_instances", p.min_instances},
          {"max_instances", p.max_instances},
          {"radius_min", p.radius_min},
          {"radius_max", p.radius_max},
          {"ecc_min", p.ecc_min},
          {"ecc_max", p.ecc_max},
          {"fg_min", p.fg_min},
          {"fg_max", p.fg_max},
          {"bg_min", p.bg_min},
          {"bg_max", p.bg_max},
          {"membrane_thickness", p.membrane_thickness},
          {"max_attempts", p.max_attempts},
          {"seed", p.seed}};
}

inline SimParams sim_params_from_json(const nlohmann::json& j) {
  SimParams p;
  p.image_shape = j.at("image_shape").get<Shape>();
  p.min_instances = j.at("min_instances").get<int>();
  p.max_instances = j.at("max_instances").get<int>();
  p.radius_min = j.at("radius_min").get<double>();
  p.radius_max = j.at("radius_max").get<double>();
  p.ecc_min = j.at("ecc_min").get<double>();
  p.ecc_max = j.at("ecc_max").get<double>();
  p.fg_min = j.at("fg_min").get<double>();
  p.fg_max = j.at("fg_max").get<double>();
  p.bg_min = j.at("bg_min").get<double>();
  p.bg_max = j.at("bg_max").get<double>();
  p.membrane_thickness = j.at("membrane_thickness").get<double>();
  p.max_attempts = j.at("max_attempts").get<int>();
  p.seed = j.at("seed").get<std::uint64_t>();
  return p;
}

}  // namespace s2m
