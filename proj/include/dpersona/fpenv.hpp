#pragma once

#if defined(__SSE__)
#include <xmmintrin.h>
#endif

namespace dpersona {

/// Flushes float denormals to zero for the lifetime of the object. Training
/// and evaluation run under this mode so results do not depend on the caller's
/// floating-point environment, and saturated sigmoids stay fast.
class ScopedFlushDenormals {
 public:
#if defined(__SSE__)
  ScopedFlushDenormals() : saved_(_mm_getcsr()) { _mm_setcsr(saved_ | 0x8040u); }
  ~ScopedFlushDenormals() { _mm_setcsr(saved_); }
#else
  ScopedFlushDenormals() = default;
#endif
  ScopedFlushDenormals(const ScopedFlushDenormals&) = delete;
  ScopedFlushDenormals& operator=(const ScopedFlushDenormals&) = delete;

 private:
#if defined(__SSE__)
  unsigned saved_;
#endif
};

}  // namespace dpersona
