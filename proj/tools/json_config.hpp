#pragma once

#include <istream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

namespace nsai::tools {

/// Reads option values from JSON. Top-level keys belong to `command` (the
/// subcommand on the command line); nested objects name subcommands
/// explicitly. A run manifest ({"command": ..., "config": {...}}) is accepted
/// as-is, so any manifest can be fed back with --config.
class json_config : public CLI::Config {
 public:
  explicit json_config(std::string command = {}) : command_(std::move(command)) {}

  std::string to_config(const CLI::App*, bool, bool, std::string) const override {
    return "{}";
  }

  std::vector<CLI::ConfigItem> from_config(std::istream& in) const override {
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw CLI::ConfigError(std::string("config file is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw CLI::ConfigError("config file must hold a JSON object");
    std::vector<CLI::ConfigItem> items;
    if (j.contains("command") && j.contains("config"))
      collect(j.at("config"), {j.at("command").get<std::string>()}, items);
    else
      for (const auto& [key, value] : j.items()) {
        // sections name their subcommand; bare values go to the one being run
        nlohmann::json one = nlohmann::json::object();
        one[key] = value;
        collect(one, value.is_object() || command_.empty() ? std::vector<std::string>{}
                                                           : std::vector{command_},
                items);
      }
    return items;
  }

 private:
  std::string command_;

  static std::string scalar(const nlohmann::json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "true" : "false";
    return v.dump();
  }

  static void collect(const nlohmann::json& obj, const std::vector<std::string>& parents,
                      std::vector<CLI::ConfigItem>& items) {
    for (const auto& [key, value] : obj.items()) {
      if (value.is_object()) {
        auto p = parents;
        p.push_back(key);
        collect(value, p, items);
        continue;
      }
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = key;
      if (value.is_array())
        for (const auto& v : value) item.inputs.push_back(scalar(v));
      else
        item.inputs.push_back(scalar(value));
      items.push_back(std::move(item));
    }
  }
};

}  // namespace nsai::tools
