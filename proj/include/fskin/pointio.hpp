#pragma once

#include <span>
#include <string>
#include <vector>

#include "fskin/correspondence.hpp"
#include "fskin/geometry.hpp"

namespace fskin {

/// Point set files, dispatched on extension:
///   .xyz  text, one "x y z" triple per line; '#' comments and blank lines
///         are skipped; malformed lines raise errors naming file and line.
///   .bin  packed little-endian f32 triples, length divisible by 12 bytes.
std::vector<Vec3> load_points(const std::string& path);
void save_points(std::span<const Vec3> points, const std::string& path);

/// Text correspondence dump, one line per query:
///   qx qy qz n_roots [x y z residual bone iters]*
/// Doubles are printed with 17 significant digits so the dump round-trips
/// bit-for-bit.
void save_correspondence_dump(std::span<const CorrespondenceSet> sets,
                              const std::string& path);

/// One value per line, query order, 17 significant digits.
void save_scalar_column(std::span<const double> values, const std::string& path);

}  // namespace fskin
