#pragma once

#include <string>

namespace ftnn {

/// Download the four MNIST IDX files (gzipped) into dir and verify they
/// parse.  base_url overrides the built-in mirror list; needs network.
void fetch_mnist(const std::string& dir, const std::string& base_url = "");

}  // namespace ftnn
