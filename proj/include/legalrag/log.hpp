#pragma once

#include <string>
#include <vector>

namespace legalrag {

/// Logs a warning and records it in the active WarningCapture, if any.
void warn(const std::string& message);

/// Collects every warning raised while it is alive (process-wide, thread-safe).
/// Captures nest; the innermost one receives the messages.
class WarningCapture {
public:
    WarningCapture();
    ~WarningCapture();
    WarningCapture(const WarningCapture&) = delete;
    WarningCapture& operator=(const WarningCapture&) = delete;

    std::vector<std::string> messages() const;

private:
    friend void warn(const std::string&);
    WarningCapture* previous_;
    std::vector<std::string> messages_;
};

}  // namespace legalrag
