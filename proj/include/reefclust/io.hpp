#pragma once

#include "reefclust/core.hpp"

#include <json.hpp>

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace reefclust::io {

enum class WavEncoding { Pcm16, Pcm24, Pcm32, Float32 };

WavEncoding encoding_from_name(const std::string& name);
const char* encoding_name(WavEncoding e);

struct WavData {
  double fs = 0.0;
  WavEncoding encoding = WavEncoding::Float32;
  std::vector<std::vector<double>> channels;  // samples scaled to [-1, 1] for integer encodings
};

WavData read_wav(std::istream& is);
WavData read_wav(const std::filesystem::path& path);
/// Integer encodings clip to the representable range; x = -1 maps to the most negative code.
void write_wav(std::ostream& os, const WavData& wav);
void write_wav(const std::filesystem::path& path, const WavData& wav);

struct ChannelMap {
  int pressure = 0;
  int vx = 1;
  int vy = 2;
};

/// Splits a multichannel WAV into a vector-sensor record, multiplying by `full_scale` (uPa per unit).
MultiChannelRecord ingest_wav(const std::filesystem::path& path, const ChannelMap& map = {}, double full_scale = 1.0,
                              std::string sensor_id = {});

/// Inverse of ingest_wav: pressure, vx, vy as channels 0..2, divided by `full_scale`.
WavData record_to_wav(const MultiChannelRecord& rec, WavEncoding encoding, double full_scale = 1.0);

std::string sha256_hex(const std::string& bytes);
std::string sha256_file(const std::filesystem::path& path);

std::string read_text(const std::filesystem::path& path);
/// Writes through a temporary sibling and renames it into place.
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

/// Config precedence: built-in defaults < JSON config file < explicit flags.
nlohmann::json merge_config(const nlohmann::json& defaults, const nlohmann::json& file, const nlohmann::json& flags);
nlohmann::json load_config(const std::filesystem::path& path);

struct FileRecord {
  std::string path;
  std::string sha256;
};

struct RunManifest {
  std::string tool_version;
  std::string command;
  nlohmann::json config;
  std::vector<FileRecord> inputs;
  std::vector<FileRecord> outputs;
  std::vector<std::pair<std::string, double>> timings;  // stage, wall seconds

  void add_input(const std::filesystem::path& p);
  void add_output(const std::filesystem::path& p);
  nlohmann::json to_json() const;
  void write(const std::filesystem::path& path) const;
};

/// Inputs whose current hash differs from the one recorded in a manifest.
std::vector<std::string> changed_inputs(const nlohmann::json& manifest);

}  // namespace reefclust::io
