#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "nsai/error.hpp"

namespace nsai::tools {

inline std::string sha256_hex(const std::string& bytes) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md.data(), &len, EVP_sha256(), nullptr) != 1)
    throw error("sha256 failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 0xF];
  }
  return out;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw error("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw error("cannot write '" + path.string() + "'");
  out << bytes;
}

/// Record of one run: resolved option values, seed, input and output digests.
class manifest {
 public:
  manifest(const CLI::App& command, std::string version) {
    j_["tool"] = "nsai";
    j_["version"] = std::move(version);
    j_["command"] = command.get_name();
    auto& cfg = j_["config"] = nlohmann::json::object();
    for (const auto* opt : command.get_options()) {
      const auto& name = opt->get_single_name();
      if (name.empty() || name == "help" || opt->get_lnames().empty()) continue;
      cfg[name] = opt->count() > 0 ? opt->results().back() : opt->get_default_str();
    }
    j_["inputs"] = nlohmann::json::object();
    j_["outputs"] = nlohmann::json::object();
  }

  void seed(std::uint64_t s) { j_["seed"] = s; }
  void input(const std::string& path) { j_["inputs"][path] = sha256_hex(read_file(path)); }
  void note(const std::string& key, nlohmann::json value) { j_["notes"][key] = std::move(value); }

  /// Writes `bytes` to dir/name and records its digest.
  void output(const std::filesystem::path& dir, const std::string& name, const std::string& bytes) {
    write_file(dir / name, bytes);
    j_["outputs"][name] = sha256_hex(bytes);
  }

  void save(const std::filesystem::path& dir) const {
    write_file(dir / "manifest.json", j_.dump(2) + "\n");
  }

 private:
  nlohmann::json j_;
};

}  // namespace nsai::tools
