#pragma once

namespace cra {

// Worker-thread budget used by the OpenMP kernels and the evaluation loop.
// Resolution order: CRA_KIT_THREADS env var, then set_thread_count(), then 1.
int thread_count();
void set_thread_count(int n);

}  // namespace cra
