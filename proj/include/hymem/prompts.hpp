#pragma once

#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace hymem::prompts {

/// Bumped whenever any template byte changes; scripted playbooks match on
/// rendered prompt text, so these must stay byte-stable within a version.
inline constexpr int kVersion = 1;

/// A system prompt plus a user template with {slot} placeholders.
struct Template {
  std::string_view name;
  std::string_view system;
  std::string_view user;
};

const Template& summary();
const Template& segmentation();
const Template& light_generator();
const Template& llm_retriever();
const Template& deep_generator();
const Template& reflection();
const Template& judge();

/// Replaces every {name} in `tmpl` with its value. Other braces (the JSON
/// examples inside the prompts) are left alone. Supplying a slot the
/// template does not contain is a ContractViolation.
std::string fill(std::string_view tmpl,
                 const std::vector<std::pair<std::string_view, std::string>>& values);

}  // namespace hymem::prompts
