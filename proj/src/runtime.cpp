#include "cfield/runtime.hpp"

#include <cstdlib>  // pulls in the libc feature macros

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace cfield {

bool tune_allocator() {
#if defined(__GLIBC__)
  bool ok = true;
  ok &= mallopt(M_TRIM_THRESHOLD, 1 << 30) != 0;
  ok &= mallopt(M_MMAP_THRESHOLD, 1 << 30) != 0;
  ok &= mallopt(M_TOP_PAD, 1 << 28) != 0;
  return ok;
#else
  return false;
#endif
}

}  // namespace cfield
