#include "reefclust/io.hpp"

#include "binio.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace reefclust::io {

namespace fs = std::filesystem;

WavEncoding encoding_from_name(const std::string& name) {
  if (name == "pcm16") return WavEncoding::Pcm16;
  if (name == "pcm24") return WavEncoding::Pcm24;
  if (name == "pcm32") return WavEncoding::Pcm32;
  if (name == "float32") return WavEncoding::Float32;
  throw ConfigError("unknown WAV encoding '" + name + "' (pcm16, pcm24, pcm32, float32)");
}

const char* encoding_name(WavEncoding e) {
  switch (e) {
    case WavEncoding::Pcm16: return "pcm16";
    case WavEncoding::Pcm24: return "pcm24";
    case WavEncoding::Pcm32: return "pcm32";
    case WavEncoding::Float32: return "float32";
  }
  return "?";
}

namespace {

int bytes_per_sample(WavEncoding e) {
  switch (e) {
    case WavEncoding::Pcm16: return 2;
    case WavEncoding::Pcm24: return 3;
    default: return 4;
  }
}

double int_scale(WavEncoding e) { return std::ldexp(1.0, 8 * bytes_per_sample(e) - 1); }

std::string read_tag(std::istream& is) {
  char tag[4];
  if (!is.read(tag, 4)) throw DataError("wav: truncated chunk header");
  return std::string(tag, 4);
}

}  // namespace

WavData read_wav(std::istream& is) {
  if (read_tag(is) != "RIFF") throw DataError("wav: missing RIFF header");
  detail::read_le<std::uint32_t>(is);
  if (read_tag(is) != "WAVE") throw DataError("wav: not a WAVE file");

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  while (true) {
    const std::string tag = read_tag(is);
    const auto size = detail::read_le<std::uint32_t>(is);
    if (tag == "fmt ") {
      if (size < 16) throw DataError("wav: short fmt chunk");
      format = detail::read_le<std::uint16_t>(is);
      channels = detail::read_le<std::uint16_t>(is);
      rate = detail::read_le<std::uint32_t>(is);
      detail::read_le<std::uint32_t>(is);
      detail::read_le<std::uint16_t>(is);
      bits = detail::read_le<std::uint16_t>(is);
      if (size >= 26 && format == 0xFFFE) {
        detail::read_le<std::uint16_t>(is);
        detail::read_le<std::uint16_t>(is);
        detail::read_le<std::uint32_t>(is);
        format = detail::read_le<std::uint16_t>(is);  // first two bytes of the sub-format GUID
        is.ignore(size - 26);
      } else {
        is.ignore(size - 16);
      }
      have_fmt = true;
    } else if (tag == "data") {
      if (!have_fmt) throw DataError("wav: data chunk before fmt chunk");
      WavData out;
      out.fs = rate;
      if (format == 1 && bits == 16) out.encoding = WavEncoding::Pcm16;
      else if (format == 1 && bits == 24) out.encoding = WavEncoding::Pcm24;
      else if (format == 1 && bits == 32) out.encoding = WavEncoding::Pcm32;
      else if (format == 3 && bits == 32) out.encoding = WavEncoding::Float32;
      else throw DataError("wav: unsupported encoding (format " + std::to_string(format) + ", " + std::to_string(bits) + " bits)");
      if (channels == 0 || rate == 0) throw DataError("wav: zero channels or sample rate");
      const int bps = bytes_per_sample(out.encoding);
      const std::size_t frames = size / (static_cast<std::size_t>(bps) * channels);
      std::vector<char> raw(frames * bps * channels);
      if (!is.read(raw.data(), static_cast<std::streamsize>(raw.size()))) throw DataError("wav: truncated data chunk");
      out.channels.assign(channels, std::vector<double>(frames));
      const double scale = int_scale(out.encoding);
      const auto* p = reinterpret_cast<const unsigned char*>(raw.data());
      for (std::size_t f = 0; f < frames; ++f)
        for (std::size_t c = 0; c < channels; ++c, p += bps) {
          double v = 0.0;
          switch (out.encoding) {
            case WavEncoding::Pcm16: {
              std::int16_t s;
              std::memcpy(&s, p, 2);
              v = s / scale;
              break;
            }
            case WavEncoding::Pcm24: {
              std::int32_t s = p[0] | (p[1] << 8) | (p[2] << 16);
              if (s & 0x800000) s -= 0x1000000;
              v = s / scale;
              break;
            }
            case WavEncoding::Pcm32: {
              std::int32_t s;
              std::memcpy(&s, p, 4);
              v = s / scale;
              break;
            }
            case WavEncoding::Float32: {
              float s;
              std::memcpy(&s, p, 4);
              v = s;
              break;
            }
          }
          out.channels[c][f] = v;
        }
      return out;
    } else {
      is.ignore(size + (size & 1));
    }
    if (!is) throw DataError("wav: no data chunk");
  }
}

WavData read_wav(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  return read_wav(is);
}

void write_wav(std::ostream& os, const WavData& wav) {
  if (wav.channels.empty()) throw DataError("wav: no channels to write");
  const std::size_t frames = wav.channels.front().size();
  for (const auto& c : wav.channels)
    if (c.size() != frames) throw DataError("wav: channels differ in length");
  if (!(wav.fs > 0.0) || wav.fs != std::round(wav.fs)) throw ConfigError("wav: sample rate must be a positive integer");
  const int bps = bytes_per_sample(wav.encoding);
  const auto nch = static_cast<std::uint16_t>(wav.channels.size());
  const auto data_bytes = static_cast<std::uint32_t>(frames * bps * nch);
  const auto rate = static_cast<std::uint32_t>(wav.fs);
  os.write("RIFF", 4);
  detail::write_le<std::uint32_t>(os, 36 + data_bytes);
  os.write("WAVEfmt ", 8);
  detail::write_le<std::uint32_t>(os, 16);
  detail::write_le<std::uint16_t>(os, wav.encoding == WavEncoding::Float32 ? 3 : 1);
  detail::write_le<std::uint16_t>(os, nch);
  detail::write_le<std::uint32_t>(os, rate);
  detail::write_le<std::uint32_t>(os, rate * bps * nch);
  detail::write_le<std::uint16_t>(os, static_cast<std::uint16_t>(bps * nch));
  detail::write_le<std::uint16_t>(os, static_cast<std::uint16_t>(8 * bps));
  os.write("data", 4);
  detail::write_le<std::uint32_t>(os, data_bytes);
  const double scale = int_scale(wav.encoding);
  const double lo = -scale, hi = scale - 1.0;
  for (std::size_t f = 0; f < frames; ++f)
    for (const auto& ch : wav.channels) {
      const double x = ch[f];
      if (!std::isfinite(x)) throw DataError("wav: non-finite sample");
      if (wav.encoding == WavEncoding::Float32) {
        detail::write_le<float>(os, static_cast<float>(x));
        continue;
      }
      const auto s = static_cast<std::int64_t>(std::clamp(std::round(x * scale), lo, hi));
      if (wav.encoding == WavEncoding::Pcm16) {
        detail::write_le<std::int16_t>(os, static_cast<std::int16_t>(s));
      } else if (wav.encoding == WavEncoding::Pcm32) {
        detail::write_le<std::int32_t>(os, static_cast<std::int32_t>(s));
      } else {
        const auto u = static_cast<std::uint32_t>(s);
        const char b[3] = {static_cast<char>(u & 0xFF), static_cast<char>((u >> 8) & 0xFF), static_cast<char>((u >> 16) & 0xFF)};
        os.write(b, 3);
      }
    }
}

void write_wav(const fs::path& path, const WavData& wav) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path.string());
  write_wav(os, wav);
}

MultiChannelRecord ingest_wav(const fs::path& path, const ChannelMap& map, double full_scale, std::string sensor_id) {
  if (!(full_scale > 0.0)) throw ConfigError("full scale must be positive");
  const WavData wav = read_wav(path);
  const int need = std::max({map.pressure, map.vx, map.vy});
  if (std::min({map.pressure, map.vx, map.vy}) < 0) throw ConfigError("channel map indices must be non-negative");
  if (need >= static_cast<int>(wav.channels.size()))
    throw DataError(path.string() + ": channel map needs " + std::to_string(need + 1) + " channels, file has " +
                    std::to_string(wav.channels.size()));
  MultiChannelRecord rec;
  rec.sensor_id = sensor_id.empty() ? path.stem().string() : std::move(sensor_id);
  auto take = [&](int c) {
    TimeSeries ts{wav.channels[static_cast<std::size_t>(c)], wav.fs, 0.0};
    for (double& v : ts.samples) v *= full_scale;
    return ts;
  };
  rec.pressure = take(map.pressure);
  rec.vx = take(map.vx);
  rec.vy = take(map.vy);
  rec.validate();
  return rec;
}

WavData record_to_wav(const MultiChannelRecord& rec, WavEncoding encoding, double full_scale) {
  rec.validate();
  WavData w;
  w.fs = rec.pressure.fs;
  w.encoding = encoding;
  for (const TimeSeries* ts : {&rec.pressure, &rec.vx, &rec.vy}) {
    std::vector<double> c = ts->samples;
    for (double& v : c) v /= full_scale;
    w.channels.push_back(std::move(c));
  }
  return w;
}

std::string sha256_hex(const std::string& bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1)
    throw DataError("sha256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 15];
  }
  return out;
}

std::string read_text(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::string sha256_file(const fs::path& path) { return sha256_hex(read_text(path)); }

void write_text_atomic(const fs::path& path, const std::string& text) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary);
    if (!os) throw DataError("cannot write " + tmp.string());
    os << text;
    if (!os) throw DataError("write failed for " + tmp.string());
  }
  fs::rename(tmp, path);
}

nlohmann::json merge_config(const nlohmann::json& defaults, const nlohmann::json& file, const nlohmann::json& flags) {
  nlohmann::json out = defaults.is_null() ? nlohmann::json::object() : defaults;
  if (!file.is_null()) {
    if (!file.is_object()) throw ConfigError("config file must hold a JSON object");
    out.merge_patch(file);
  }
  if (!flags.is_null()) out.merge_patch(flags);
  return out;
}

nlohmann::json load_config(const fs::path& path) {
  try {
    return nlohmann::json::parse(read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  } catch (const DataError& e) {
    throw ConfigError(e.what());
  }
}

void RunManifest::add_input(const fs::path& p) { inputs.push_back({p.string(), sha256_file(p)}); }
void RunManifest::add_output(const fs::path& p) { outputs.push_back({p.string(), sha256_file(p)}); }

nlohmann::json RunManifest::to_json() const {
  nlohmann::json j;
  j["tool_version"] = tool_version;
  j["command"] = command;
  j["config"] = config;
  auto files = [](const std::vector<FileRecord>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& f : v) a.push_back({{"path", f.path}, {"sha256", f.sha256}});
    return a;
  };
  j["inputs"] = files(inputs);
  j["outputs"] = files(outputs);
  nlohmann::json t = nlohmann::json::object();
  for (const auto& [stage, secs] : timings) t[stage] = secs;
  j["timings_s"] = t;
  return j;
}

void RunManifest::write(const fs::path& path) const { write_text_atomic(path, to_json().dump(2) + "\n"); }

std::vector<std::string> changed_inputs(const nlohmann::json& manifest) {
  std::vector<std::string> out;
  for (const auto& f : manifest.at("inputs")) {
    const std::string p = f.at("path");
    if (!fs::exists(p) || sha256_file(p) != f.at("sha256").get<std::string>()) out.push_back(p);
  }
  return out;
}

}  // namespace reefclust::io
