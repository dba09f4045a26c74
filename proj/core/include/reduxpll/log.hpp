// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string_view>

namespace reduxpll {

using WarningHandler = std::function<void(std::string_view)>;

/// Replaces the process-wide warning sink (stderr by default). Returns the
/// previous handler.
WarningHandler set_warning_handler(WarningHandler handler);

void warn(std::string_view message);

}  // namespace reduxpll
