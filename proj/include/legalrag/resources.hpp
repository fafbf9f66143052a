#pragma once

#include <optional>
#include <string_view>
#include <vector>

// Text files compiled into the library so the binaries run from any directory.
namespace legalrag::resources {

std::string_view dale_chall_word_list();

/// Bundled template by path relative to templates/, e.g. "prompts/baseline.txt".
std::optional<std::string_view> template_text(std::string_view name);
std::vector<std::string_view> template_names();

}  // namespace legalrag::resources
