#pragma once

#include <functional>
#include <string>

namespace umaxent::log {

using Sink = std::function<void(const std::string&)>;

// Warnings go to stderr unless a sink is installed. Passing an empty
// function silences them.
void set_warning_sink(Sink sink);
void reset_warning_sink();
void warn(const std::string& message);

// Shortest %g rendering of a real for diagnostics.
std::string format_number(double value);

}  // namespace umaxent::log
