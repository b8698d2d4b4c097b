// Copyright 2026 The KernelScope Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "kernelscope/binary_io.hpp"

#include <json.hpp>
#include <openssl/evp.h>

#include <memory>
#include <string>
#include <string_view>
#include <vector>

namespace kernelscope::harness {

inline constexpr const char* kToolkitVersion = "0.1.0";
inline constexpr const char* kManifestName = "manifest.json";

inline std::string sha256_hex(std::string_view data) {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), EVP_MD_CTX_free);
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
      EVP_DigestUpdate(ctx.get(), data.data(), data.size()) != 1 ||
      EVP_DigestFinal_ex(ctx.get(), digest, &len) != 1)
    throw Error("io", "SHA-256 computation failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(hex[digest[i] >> 4]);
    out.push_back(hex[digest[i] & 0xF]);
  }
  return out;
}

/// Output directory whose manifest tracks every file with its checksum.
/// Files are recorded as incomplete before they are written and flip to
/// complete only when the owning stage commits, so an interrupted stage
/// always leaves incomplete entries behind.
class RunDirectory {
 public:
  explicit RunDirectory(io::fs::path root) : root_(std::move(root)) {
    io::fs::create_directories(root_);
    const auto path = root_ / kManifestName;
    if (io::fs::exists(path)) {
      try {
        manifest_ = nlohmann::json::parse(io::read_file(path));
      } catch (const nlohmann::json::exception& e) {
        throw Error("format", path.string() + ": " + e.what());
      }
    }
    if (!manifest_.is_object()) manifest_ = nlohmann::json::object();
    manifest_["format"] = "kernelscope-report";
    manifest_["version"] = 1;
    manifest_["toolkit_version"] = kToolkitVersion;
    if (!manifest_.contains("files")) manifest_["files"] = nlohmann::json::object();
    if (!manifest_.contains("stages")) manifest_["stages"] = nlohmann::json::object();
  }

  const io::fs::path& root() const { return root_; }
  io::fs::path path(const std::string& rel) const { return root_ / rel; }
  nlohmann::json& manifest() { return manifest_; }
  const nlohmann::json& manifest() const { return manifest_; }

  /// Forgets every stage and removes every recorded file.
  void reset() {
    for (auto& [rel, entry] : manifest_["files"].items()) {
      std::error_code ec;
      io::fs::remove(root_ / rel, ec);
    }
    const auto keep = manifest_;
    manifest_ = {{"format", keep["format"]}, {"version", keep["version"]}, {"toolkit_version", keep["toolkit_version"]},
                 {"files", nlohmann::json::object()}, {"stages", nlohmann::json::object()}};
    save();
  }

  /// Starts (or restarts) a stage: files it recorded earlier are removed.
  void begin(const std::string& stage) {
    auto& files = manifest_["files"];
    for (auto it = files.begin(); it != files.end();) {
      if (it.value().value("stage", "") == stage) {
        std::error_code ec;
        io::fs::remove(root_ / it.key(), ec);
        it = files.erase(it);
      } else {
        ++it;
      }
    }
    manifest_["stages"][stage] = "incomplete";
    save();
  }

  void write(const std::string& stage, const std::string& rel, std::string_view bytes) {
    auto& entry = manifest_["files"][rel];
    entry = {{"stage", stage}, {"status", "incomplete"}};
    save();
    io::write_file_atomic(root_ / rel, bytes);
    entry["sha256"] = sha256_hex(bytes);
    entry["bytes"] = bytes.size();
    save();
  }

  void commit(const std::string& stage) {
    for (auto& [rel, entry] : manifest_["files"].items())
      if (entry.value("stage", "") == stage) entry["status"] = "complete";
    manifest_["stages"][stage] = "complete";
    save();
  }

  void save() const { io::write_file_atomic(root_ / kManifestName, manifest_.dump(1) + "\n"); }

 private:
  io::fs::path root_;
  nlohmann::json manifest_;
};

struct IntegrityReport {
  std::size_t files = 0;
  std::size_t complete = 0;
  std::size_t incomplete = 0;
  std::vector<std::string> modified;  // checksum differs from the record
  std::vector<std::string> missing;   // recorded but absent
  std::vector<std::string> untracked; // present but never recorded

  bool ok() const { return incomplete == 0 && modified.empty() && missing.empty() && untracked.empty(); }
};

/// Re-hashes every file under the run directory against the manifest.
/// Untracked files are added as incomplete so they cannot pass as results.
inline IntegrityReport verify_run(RunDirectory& dir) {
  IntegrityReport report;
  auto& files = dir.manifest()["files"];
  for (auto& [rel, entry] : files.items()) {
    const auto p = dir.path(rel);
    if (!io::fs::exists(p)) {
      report.missing.push_back(rel);
      entry["status"] = "incomplete";
      continue;
    }
    const std::string bytes = io::read_file(p);
    if (entry.value("sha256", "") != sha256_hex(bytes)) {
      report.modified.push_back(rel);
      entry["status"] = "incomplete";
    }
  }
  std::vector<std::string> present;
  for (const auto& e : io::fs::recursive_directory_iterator(dir.root())) {
    if (!e.is_regular_file()) continue;
    const std::string rel = io::fs::relative(e.path(), dir.root()).generic_string();
    if (rel == kManifestName || rel.find(".tmp.") != std::string::npos) continue;
    present.push_back(rel);
  }
  for (const auto& rel : present) {
    if (files.contains(rel)) continue;
    const std::string bytes = io::read_file(dir.path(rel));
    files[rel] = {{"stage", "untracked"}, {"status", "incomplete"}, {"sha256", sha256_hex(bytes)}, {"bytes", bytes.size()}};
    report.untracked.push_back(rel);
  }
  for (const auto& [rel, entry] : files.items()) {
    ++report.files;
    if (entry.value("status", "") == "complete")
      ++report.complete;
    else
      ++report.incomplete;
  }
  dir.save();
  return report;
}

}  // namespace kernelscope::harness
