#include "poiar/log.hpp"

#include <iostream>

namespace poiar {
namespace {

WarningSink& warning_sink() {
  static WarningSink sink = [](const std::string& m) { std::cerr << "warning: " << m << '\n'; };
  return sink;
}

}  // namespace

WarningSink set_warning_sink(WarningSink sink) {
  auto old = std::move(warning_sink());
  warning_sink() = std::move(sink);
  return old;
}

void warn(const std::string& message) {
  if (warning_sink()) warning_sink()(message);
}

}  // namespace poiar
