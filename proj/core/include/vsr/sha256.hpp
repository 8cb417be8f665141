// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>

namespace vsr {

// FIPS 180-4 SHA-256, returned as 64 lowercase hex chars. Used to fingerprint
// config payloads in run manifests; not a general-purpose crypto library.
std::string sha256_hex(const void* data, std::size_t len);
std::string sha256_hex(const std::string& text);

}  // namespace vsr
