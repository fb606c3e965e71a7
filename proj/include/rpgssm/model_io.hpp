#pragma once

#include <filesystem>
#include <iosfwd>

#include <json.hpp>

#include "rpgssm/trainer.hpp"

// Model container:
//   "RPGM" | u32 version = 1 | u64 manifest byte length | manifest JSON
//   | RPGT sections back to back, in manifest order.
// The manifest records the recognition spec, iteration, Adam step count and,
// per section, its name plus byte offset and length relative to the first
// section.

namespace rpgssm::model_io {

nlohmann::json spec_to_json(const recognition::RecognitionSpec& spec);
recognition::RecognitionSpec spec_from_json(const nlohmann::json& j);

void write(std::ostream& out, const trainer::TrainState& state);
/// Throws IoError on a malformed container.
trainer::TrainState read(std::istream& in);

void write_file(const std::filesystem::path& path, const trainer::TrainState& state);
trainer::TrainState read_file(const std::filesystem::path& path);

}  // namespace rpgssm::model_io
