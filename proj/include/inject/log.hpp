#pragma once

#include <functional>
#include <string>

namespace inject {

using WarningSink = std::function<void(const std::string&)>;

/// Routes warnings to `sink` (stderr when empty). Returns the previous sink.
WarningSink set_warning_sink(WarningSink sink);

void warn(const std::string& message);

}  // namespace inject
