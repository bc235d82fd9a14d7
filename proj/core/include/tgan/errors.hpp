/*
 * SPDX-License-Identifier: Apache-2.0
 */
#pragma once

#include <stdexcept>

namespace tgan {

/// Bad option, unknown enum string, unknown config key, missing pluggable component.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A random placement with the required foreground overlap could not be found.
class SamplingError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Training image has no usable foreground.
class MaskRejected : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace tgan
