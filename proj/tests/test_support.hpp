#pragma once

#include <string>

#include "ccic/plant.hpp"

namespace ccic::testing {

inline plant::PlantSpec reference_plant(const std::string& name) {
  return plant::load_plant_spec("configs/" + name + ".json");
}

inline plant::PlantSpec without_noise(plant::PlantSpec spec) {
  for (auto& l : spec.loops) l.noise_sigma = 0.0;
  spec.finalize();
  return spec;
}

}  // namespace ccic::testing
