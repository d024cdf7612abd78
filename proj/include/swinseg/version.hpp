#pragma once

namespace swinseg {

const char* version();

}  // namespace swinseg
