#pragma once

#include <string>

#include "iontrap/constants.hpp"

namespace iontrap {

struct IonSpecies {
  double mass = 0;   // kg
  double charge = 0; // C
  std::string label;

  bool operator==(const IonSpecies &other) const {
    return mass == other.mass && charge == other.charge;
  }
};

inline IonSpecies ca40() {
  return {39.962590850 * constants::atomic_mass_unit,
          constants::elementary_charge, "Ca40"};
}

inline IonSpecies sr88() {
  return {87.905612254 * constants::atomic_mass_unit,
          constants::elementary_charge, "Sr88"};
}

} // namespace iontrap
