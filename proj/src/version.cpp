#include "asc/common.hpp"

namespace asc {

const char* version_string() { return ASC_VERSION; }

}  // namespace asc
