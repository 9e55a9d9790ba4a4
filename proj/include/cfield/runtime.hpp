#pragma once

namespace cfield {

// Keeps freed multi-megabyte blocks on the heap instead of returning them to
// the kernel.  The dense kernel matrices used by the deformation code are
// allocated and freed once per integrator stage; with glibc defaults every
// reuse round-trips through brk and page faults, which can double wall time.
// Returns true when the allocator accepted the tuning.
bool tune_allocator();

}  // namespace cfield
