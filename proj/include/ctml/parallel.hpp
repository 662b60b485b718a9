#pragma once

namespace ctml {

// Number of threads the OpenMP kernels may use. Defaults to the OpenMP
// runtime's maximum; the CTML_THREADS environment variable caps it.
// Read once on first use.
int max_threads();

} // namespace ctml
