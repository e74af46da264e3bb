#pragma once

#include <functional>
#include <string>
#include <string_view>

namespace alignlens {

using WarningHandler = std::function<void(std::string_view)>;

// Non-fatal conditions (duplicate GloVe words, excluded repeats, ...) are
// reported here. The default handler prints to stderr.
void warn(std::string_view message);

// Returns the previous handler. Passing an empty function restores stderr.
WarningHandler set_warning_handler(WarningHandler handler);

// Installs a handler for the lifetime of the object.
class ScopedWarningHandler {
 public:
  explicit ScopedWarningHandler(WarningHandler handler)
      : previous_(set_warning_handler(std::move(handler))) {}
  ~ScopedWarningHandler() { set_warning_handler(std::move(previous_)); }
  ScopedWarningHandler(const ScopedWarningHandler&) = delete;
  ScopedWarningHandler& operator=(const ScopedWarningHandler&) = delete;

 private:
  WarningHandler previous_;
};

}  // namespace alignlens
