#pragma once

namespace cprn {

#ifdef CPRN_SINGLE_PRECISION
using real = float;
#else
using real = double;
#endif

}  // namespace cprn
