#pragma once

namespace arc {

// Which implementation of the compute kernels to run. kReference is the
// straightforward serial loop nest kept as a test oracle; kParallel is the
// im2col/GEMM path with OpenMP over channels.
enum class Exec { kReference, kParallel };

// Worker count used by kParallel kernels. Honors ARC_THREADS when set.
int worker_count();

// Applies ARC_THREADS (if present) to the OpenMP runtime. Idempotent.
void configure_threads_from_env();

// Pins kParallel kernels to n workers (latency timing runs with 1).
void set_worker_count(int n);

}  // namespace arc
