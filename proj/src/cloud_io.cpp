#include "pgnet/cloud_io.hpp"

#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <vector>

#include "pgnet/errors.hpp"

namespace pgnet {

namespace {

std::string lower_ext(const std::string& path) {
  auto dot = path.find_last_of('.');
  if (dot == std::string::npos) return "";
  std::string ext = path.substr(dot + 1);
  for (char& c : ext) c = char(std::tolower(static_cast<unsigned char>(c)));
  return ext;
}

double parse_double(const std::string& token, const std::string& path) {
  char* end = nullptr;
  const double v = std::strtod(token.c_str(), &end);
  if (end == token.c_str() || *end != '\0')
    throw InputError(path + ": cannot parse coordinate \"" + token + "\"");
  return v;
}

}  // namespace

Mat load_ply(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw InputError("cannot open " + path);
  std::string line;
  if (!std::getline(is, line) || line.substr(0, 3) != "ply")
    throw InputError(path + ": not a PLY file");

  int vertex_count = -1;
  std::vector<std::string> property_names;
  bool in_vertex_element = false;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "end_header") break;
    if (word == "comment") continue;
    if (word == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt != "ascii") throw InputError(path + ": only ascii PLY is supported");
    } else if (word == "element") {
      std::string name;
      int count = 0;
      ls >> name >> count;
      in_vertex_element = (name == "vertex");
      if (in_vertex_element) vertex_count = count;
    } else if (word == "property" && in_vertex_element) {
      std::string type, name;
      ls >> type >> name;
      property_names.push_back(name);
    }
  }
  if (vertex_count < 0) throw InputError(path + ": missing vertex element");

  int ix = -1, iy = -1, iz = -1;
  for (std::size_t i = 0; i < property_names.size(); ++i) {
    if (property_names[i] == "x") ix = static_cast<int>(i);
    if (property_names[i] == "y") iy = static_cast<int>(i);
    if (property_names[i] == "z") iz = static_cast<int>(i);
  }
  if (ix < 0 || iy < 0 || iz < 0) throw InputError(path + ": vertex element lacks x/y/z");

  Mat cloud(vertex_count, 3);
  for (int v = 0; v < vertex_count; ++v) {
    if (!std::getline(is, line)) throw InputError(path + ": truncated vertex data");
    std::istringstream ls(line);
    std::vector<std::string> tokens;
    std::string tok;
    while (ls >> tok) tokens.push_back(tok);
    if (tokens.size() < property_names.size())
      throw InputError(path + ": vertex line has too few values");
    cloud(v, 0) = parse_double(tokens[ix], path);
    cloud(v, 1) = parse_double(tokens[iy], path);
    cloud(v, 2) = parse_double(tokens[iz], path);
  }
  return cloud;
}

void save_ply(const std::string& path, const Mat& cloud) {
  if (cloud.cols() != 3) throw InputError("save_ply: cloud must be Nx3");
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw InputError("cannot open " + path + " for writing");
  std::fprintf(f,
               "ply\nformat ascii 1.0\nelement vertex %d\n"
               "property double x\nproperty double y\nproperty double z\nend_header\n",
               cloud.rows());
  for (int i = 0; i < cloud.rows(); ++i)
    std::fprintf(f, "%.17g %.17g %.17g\n", cloud(i, 0), cloud(i, 1), cloud(i, 2));
  std::fclose(f);
}

Mat load_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw InputError("cannot open " + path);
  std::vector<double> values;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string cell;
    int count = 0;
    while (std::getline(ls, cell, ',')) {
      values.push_back(parse_double(cell, path));
      ++count;
    }
    if (count != 3) throw InputError(path + ": expected 3 values per line, got " +
                                     std::to_string(count));
  }
  if (values.empty()) throw InputError(path + ": no points");
  Mat cloud(static_cast<int>(values.size() / 3), 3);
  std::copy(values.begin(), values.end(), cloud.data());
  return cloud;
}

void save_csv(const std::string& path, const Mat& cloud) {
  if (cloud.cols() != 3) throw InputError("save_csv: cloud must be Nx3");
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw InputError("cannot open " + path + " for writing");
  for (int i = 0; i < cloud.rows(); ++i)
    std::fprintf(f, "%.17g,%.17g,%.17g\n", cloud(i, 0), cloud(i, 1), cloud(i, 2));
  std::fclose(f);
}

Mat load_cloud(const std::string& path) {
  const std::string ext = lower_ext(path);
  if (ext == "ply") return load_ply(path);
  if (ext == "csv") return load_csv(path);
  throw InputError(path + ": unsupported point cloud extension \"" + ext + "\"");
}

void save_cloud(const std::string& path, const Mat& cloud) {
  const std::string ext = lower_ext(path);
  if (ext == "ply") return save_ply(path, cloud);
  if (ext == "csv") return save_csv(path, cloud);
  throw InputError(path + ": unsupported point cloud extension \"" + ext + "\"");
}

}  // namespace pgnet
