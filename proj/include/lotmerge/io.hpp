#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include <json.hpp>

#include "lotmerge/capture.hpp"
#include "lotmerge/netspec.hpp"

namespace lotmerge {

/// Deterministic JSON serialization: sorted keys, floats via "%.17g",
/// 2-space indentation. Identical values always produce identical bytes.
std::string canonical_dump(const nlohmann::json& j);

std::string sha256_hex(std::string_view bytes);

nlohmann::json spec_to_json(const NetworkSpec& spec);
NetworkSpec spec_from_json(const nlohmann::json& j);

/// SHA-256 of the canonicalized spec JSON.
std::string spec_hash_of(const NetworkSpec& spec);

/// Directory formats: `manifest.json` plus one raw little-endian row-major
/// float64 blob per parameter / statistic. Lossless for every finite f64.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir);
Checkpoint load_checkpoint(const std::filesystem::path& dir);

void save_task_vector(const TaskVector& tv, const std::filesystem::path& dir);
TaskVector load_task_vector(const std::filesystem::path& dir);

void save_exemplars(const ExemplarSet& ex, const std::filesystem::path& dir);
ExemplarSet load_exemplars(const std::filesystem::path& dir);

void save_layer_stats(const LayerStats& stats, const std::filesystem::path& dir);
LayerStats load_layer_stats(const std::filesystem::path& dir);

void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace lotmerge
