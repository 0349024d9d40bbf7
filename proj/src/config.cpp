#include "uqh/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>

namespace uqh {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
bool parse_number(std::string_view text, T& out) {
  const char* first = text.data();
  const char* last = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

using Setter = std::function<bool(RunConfig&, std::string_view)>;

template <class T>
Setter field(T RunConfig::*part, auto member) {
  return [part, member](RunConfig& cfg, std::string_view v) {
    auto& target = (cfg.*part).*member;
    return parse_number(v, target);
  };
}

const std::map<std::string, Setter, std::less<>>& setters() {
  static const std::map<std::string, Setter, std::less<>> table = {
      {"learning_rate", field(&RunConfig::train, &TrainConfig::learning_rate)},
      {"scheduler_factor", field(&RunConfig::train, &TrainConfig::scheduler_factor)},
      {"scheduler_patience", field(&RunConfig::train, &TrainConfig::scheduler_patience)},
      {"weight_decay", field(&RunConfig::train, &TrainConfig::weight_decay)},
      {"max_epochs", field(&RunConfig::train, &TrainConfig::max_epochs)},
      {"batch_size", field(&RunConfig::train, &TrainConfig::batch_size)},
      {"early_stop_patience", field(&RunConfig::train, &TrainConfig::early_stop_patience)},
      {"seed", field(&RunConfig::train, &TrainConfig::seed)},
      {"min_improvement", field(&RunConfig::train, &TrainConfig::min_improvement)},
      {"hidden", field(&RunConfig::head, &HeadConfig::hidden)},
      {"rff_dim", field(&RunConfig::head, &HeadConfig::rff_dim)},
      {"spectral_bound", field(&RunConfig::head, &HeadConfig::spectral_bound)},
      {"ridge", field(&RunConfig::head, &HeadConfig::ridge)},
      {"mean_field_lambda", field(&RunConfig::head, &HeadConfig::mean_field_lambda)},
      {"k_samples", field(&RunConfig::head, &HeadConfig::k_samples)},
      {"prior_std", field(&RunConfig::head, &HeadConfig::prior_std)},
      {"power_iters", field(&RunConfig::head, &HeadConfig::power_iters)},
  };
  return table;
}

}  // namespace

RunConfig parse_config(std::string_view text, std::string_view origin) {
  RunConfig cfg;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;

    auto fail = [&](const std::string& why) {
      std::ostringstream os;
      os << origin << ":" << line_no << ": " << why;
      throw FormatError(os.str());
    };
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) fail("expected `key = value`");
    const std::string_view key = trim(line.substr(0, eq));
    const std::string_view value = trim(line.substr(eq + 1));
    const auto it = setters().find(key);
    if (it == setters().end()) fail("unknown key '" + std::string(key) + "'");
    if (value.empty() || !it->second(cfg, value)) {
      fail("invalid value '" + std::string(value) + "' for key '" + std::string(key) + "'");
    }
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file", path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  return parse_config(buffer.str(), path.string());
}

}  // namespace uqh
