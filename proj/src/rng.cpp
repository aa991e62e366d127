#include "npo/rng.hpp"

#include <sstream>

#include "npo/error.hpp"

namespace npo {

std::string RngStream::state() const {
  std::ostringstream os;
  os << engine_;
  return os.str();
}

void RngStream::set_state(const std::string& s) {
  std::istringstream is(s);
  is >> engine_;
  if (is.fail()) throw FormatError("rng: malformed engine state");
}

}  // namespace npo
