#pragma once

namespace darkforge {

/// Upper bound on internal worker threads: DARKFORGE_THREADS when set to a
/// positive integer, otherwise the hardware concurrency.
int thread_limit();

/// Pushes thread_limit() into the linear-algebra backend. Idempotent.
void apply_thread_limit();

}  // namespace darkforge
