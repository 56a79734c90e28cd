#pragma once

namespace iontrap {

inline constexpr double kPi = 3.14159265358979323846;

namespace constants {

// CODATA 2018 exact / recommended values, SI units.
inline constexpr double elementary_charge = 1.602176634e-19;    // C
inline constexpr double hbar = 1.054571817e-34;                 // J s
inline constexpr double vacuum_permittivity = 8.8541878128e-12; // F/m
inline constexpr double boltzmann = 1.380649e-23;               // J/K
inline constexpr double atomic_mass_unit = 1.66053906660e-27;   // kg

inline constexpr double coulomb_constant =
    1.0 / (4.0 * kPi * vacuum_permittivity); // N m^2 / C^2

} // namespace constants
} // namespace iontrap
