#pragma once

// Include order shim: libtorch's c10 logging defines CHECK/CHECK_EQ/...,
// which collide with the assertion macros. Pull every torch-bearing header
// in first, drop the logging macros, then let the test framework define its
// own.

#include "helpers.hpp"

#ifdef CHECK
#undef CHECK
#endif
#ifdef CHECK_EQ
#undef CHECK_EQ
#endif
#ifdef CHECK_NE
#undef CHECK_NE
#endif
#ifdef CHECK_LT
#undef CHECK_LT
#endif
#ifdef CHECK_LE
#undef CHECK_LE
#endif
#ifdef CHECK_GT
#undef CHECK_GT
#endif
#ifdef CHECK_GE
#undef CHECK_GE
#endif

#include <doctest.h>

// Stream operators so assertion failures print readable values (the c10
// vector printer picks these up by argument-dependent lookup).
namespace startrain {
inline std::ostream& operator<<(std::ostream& os, Param p) { return os << param_name(p); }
inline std::ostream& operator<<(std::ostream& os, Violation v) { return os << violation_name(v); }
inline std::ostream& operator<<(std::ostream& os, const Point2i& p) {
  return os << "(" << p.r << "," << p.c << ")";
}
}  // namespace startrain
