#pragma once

#include <string>

#include "pgnet/mat.hpp"

namespace pgnet {

// ASCII PLY with x/y/z vertex properties. Parsing accepts float or double
// property declarations; values are read as doubles either way.
Mat load_ply(const std::string& path);
void save_ply(const std::string& path, const Mat& cloud);

// One "x,y,z" line per point, 17 significant digits, so that
// load_csv(save_csv(c)) reproduces c bit for bit.
Mat load_csv(const std::string& path);
void save_csv(const std::string& path, const Mat& cloud);

// Dispatch on extension (.ply / .csv).
Mat load_cloud(const std::string& path);
void save_cloud(const std::string& path, const Mat& cloud);

}  // namespace pgnet
