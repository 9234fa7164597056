#pragma once

#include "bitcache/kernels.hpp"

namespace bitcache::kernels::detail {

extern const KernelTable kScalarTable;
extern const KernelTable kWord64Table;
#if BITCACHE_HAVE_AVX2
extern const KernelTable kAvx2Table;
#endif

}  // namespace bitcache::kernels::detail
