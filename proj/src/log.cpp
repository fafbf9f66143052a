#include "legalrag/log.hpp"

#include <spdlog/spdlog.h>

#include <mutex>

namespace legalrag {

namespace {
std::mutex g_mutex;
WarningCapture* g_active = nullptr;
}  // namespace

void warn(const std::string& message) {
    spdlog::warn("{}", message);
    std::lock_guard lock(g_mutex);
    if (g_active != nullptr) g_active->messages_.push_back(message);
}

WarningCapture::WarningCapture() {
    std::lock_guard lock(g_mutex);
    previous_ = g_active;
    g_active = this;
}

WarningCapture::~WarningCapture() {
    std::lock_guard lock(g_mutex);
    g_active = previous_;
}

std::vector<std::string> WarningCapture::messages() const {
    std::lock_guard lock(g_mutex);
    return messages_;
}

}  // namespace legalrag
