#pragma once

#include "json.hpp"

namespace s2sk {

// Every convention choice the library makes where the method leaves room,
// grouped by module. Run manifests and report sidecars embed this object.
nlohmann::json conventions();

}  // namespace s2sk
