#pragma once

#include <filesystem>
#include <string_view>

#include "uqh/heads.hpp"
#include "uqh/training.hpp"

namespace uqh {

struct RunConfig {
  HeadConfig head;
  TrainConfig train;
};

// Flat `key = value` text, one entry per line, `#` starts a comment. Every
// key is optional; unknown keys and malformed values raise FormatError
// naming the line.
RunConfig parse_config(std::string_view text, std::string_view origin = "<config>");
RunConfig load_config(const std::filesystem::path& path);

}  // namespace uqh
