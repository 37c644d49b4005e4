#pragma once

#include <cstddef>
#include <string>

namespace fscascade {

// SHA-1 of a byte buffer as 40 lowercase hex chars. Used to content-address
// dataset manifests in run records; not a security boundary.
std::string sha1_hex(const void* data, size_t len);
std::string sha1_hex(const std::string& s);

}  // namespace fscascade
