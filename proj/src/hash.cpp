#include "pgnet/hash.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "pgnet/errors.hpp"

namespace pgnet {

std::string file_content_hash(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw InputError("cannot hash missing file " + path);
  std::ostringstream buf;
  buf << is.rdbuf();
  char out[17];
  std::snprintf(out, sizeof out, "%016llx",
                static_cast<unsigned long long>(fnv1a64(buf.str())));
  return out;
}

}  // namespace pgnet
