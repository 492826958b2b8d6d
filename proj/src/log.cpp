#include "umaxent/log.hpp"

#include <cstdio>
#include <iostream>
#include <mutex>

namespace umaxent::log {
namespace {

std::mutex sink_mutex;
bool custom_sink = false;
Sink current_sink;

}  // namespace

void set_warning_sink(Sink sink) {
  std::lock_guard<std::mutex> lock(sink_mutex);
  custom_sink = true;
  current_sink = std::move(sink);
}

void reset_warning_sink() {
  std::lock_guard<std::mutex> lock(sink_mutex);
  custom_sink = false;
  current_sink = nullptr;
}

void warn(const std::string& message) {
  std::lock_guard<std::mutex> lock(sink_mutex);
  if (!custom_sink) {
    std::cerr << "warning: " << message << '\n';
  } else if (current_sink) {
    current_sink(message);
  }
}

std::string format_number(double value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", value);
  return buf;
}

}  // namespace umaxent::log
