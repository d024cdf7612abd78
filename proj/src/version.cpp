#include "swinseg/version.hpp"

namespace swinseg {

const char* version() { return "0.1.0"; }

}  // namespace swinseg
