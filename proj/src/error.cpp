#include "tlc/error.hpp"

#include <cstdlib>
#include <iostream>

namespace tlc {

void warn(const std::string& message) {
    if (std::getenv("TLC_QUIET")) return;
    std::cerr << "warning: " << message << '\n';
}

}  // namespace tlc
