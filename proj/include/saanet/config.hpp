#pragma once

// The library is compiled once per scalar type. Each build lives in its own
// inline namespace so a float and a double build can be linked into the same
// executable without symbol clashes.

#if defined(SAANET_REAL_F64)
#define SAANET_ABI_NS f64
#else
#define SAANET_ABI_NS f32
#endif

#define SAANET_BEGIN_NAMESPACE \
    namespace saanet {         \
    inline namespace SAANET_ABI_NS {
#define SAANET_END_NAMESPACE \
    }                        \
    }

SAANET_BEGIN_NAMESPACE

#if defined(SAANET_REAL_F64)
using Real = double;
#else
using Real = float;
#endif

SAANET_END_NAMESPACE
