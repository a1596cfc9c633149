#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "layoutdm/denoiser.hpp"
#include "layoutdm/diffusion.hpp"
#include "layoutdm/error.hpp"
#include "layoutdm/quantizer.hpp"

namespace layoutdm {

/// Checkpoint file:
///   8 bytes   magic "LDMCKPT1"
///   u32 LE    format version
///   u64 LE    header length in bytes
///   header    UTF-8 JSON (configs, vocabulary, schedule, manifest, metadata)
///   blob      every parameter as little-endian float32, in manifest order
inline constexpr char kCheckpointMagic[8] = {'L', 'D', 'M', 'C', 'K', 'P', 'T', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  DenoiserConfig config;
  Vocabulary vocab;
  Schedule schedule;
  nlohmann::json train_config = nlohmann::json::object();
  nlohmann::json metadata = nlohmann::json::object();  // e.g. ema_loss, corpus name, steps
  std::vector<ParamInfo> manifest;
  std::vector<float> params;

  static Checkpoint from_model(const Denoiser<float>& net, const Schedule& schedule) {
    Checkpoint c;
    c.config = net.config();
    c.vocab = net.vocabulary();
    c.schedule = schedule;
    c.manifest = net.manifest();
    c.params.assign(net.params().begin(), net.params().end());
    return c;
  }

  /// Rebuilds the network; raises CORRUPT_FILE if the manifest disagrees with the config.
  Denoiser<float> model() const {
    Denoiser<float> net(config, vocab, 0);
    LAYOUTDM_REQUIRE(net.manifest().size() == manifest.size(), ErrorCode::kCorruptFile,
                     "manifest does not match the denoiser config");
    for (std::size_t i = 0; i < manifest.size(); ++i) {
      const auto& a = net.manifest()[i];
      const auto& b = manifest[i];
      LAYOUTDM_REQUIRE(a.name == b.name && a.rows == b.rows && a.cols == b.cols && a.offset == b.offset,
                       ErrorCode::kCorruptFile, "manifest entry '" + b.name + "' does not match the config");
    }
    net.set_params(params);
    return net;
  }
};

namespace detail {

template <typename T>
void put_le(std::string& out, T value) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((value >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(const std::string& in, std::size_t at) {
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) value |= static_cast<T>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return value;
}

}  // namespace detail

inline std::string encode_checkpoint(const Checkpoint& c) {
  nlohmann::json manifest = nlohmann::json::array();
  for (const auto& p : c.manifest) {
    manifest.push_back({{"name", p.name}, {"rows", p.rows}, {"cols", p.cols}, {"offset", p.offset}});
  }
  const nlohmann::json header{{"denoiser", c.config.to_json()}, {"vocabulary", c.vocab.to_json()},
                              {"schedule", c.schedule.to_json()}, {"train", c.train_config},
                              {"metadata", c.metadata},           {"manifest", manifest},
                              {"num_params", c.params.size()}};
  const std::string text = header.dump();
  std::string out(kCheckpointMagic, sizeof(kCheckpointMagic));
  detail::put_le<std::uint32_t>(out, kCheckpointVersion);
  detail::put_le<std::uint64_t>(out, text.size());
  out += text;
  out.reserve(out.size() + 4 * c.params.size());
  for (float v : c.params) detail::put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

inline Checkpoint decode_checkpoint(const std::string& bytes) {
  constexpr std::size_t kPrefix = sizeof(kCheckpointMagic) + 4 + 8;
  LAYOUTDM_REQUIRE(bytes.size() >= kPrefix, ErrorCode::kCorruptFile, "checkpoint shorter than its prefix");
  LAYOUTDM_REQUIRE(std::memcmp(bytes.data(), kCheckpointMagic, sizeof(kCheckpointMagic)) == 0,
                   ErrorCode::kCorruptFile, "bad checkpoint magic");
  const auto version = detail::get_le<std::uint32_t>(bytes, sizeof(kCheckpointMagic));
  LAYOUTDM_REQUIRE(version == kCheckpointVersion, ErrorCode::kVersionMismatch,
                   "checkpoint version " + std::to_string(version) + ", expected " +
                       std::to_string(kCheckpointVersion));
  const auto header_size = detail::get_le<std::uint64_t>(bytes, sizeof(kCheckpointMagic) + 4);
  LAYOUTDM_REQUIRE(header_size <= bytes.size() - kPrefix, ErrorCode::kCorruptFile, "truncated checkpoint header");

  Checkpoint c;
  std::size_t count = 0;
  try {
    const auto header = nlohmann::json::parse(bytes.substr(kPrefix, header_size));
    c.config = DenoiserConfig::from_json(header.at("denoiser"));
    c.vocab = Vocabulary::from_json(header.at("vocabulary"));
    c.schedule = Schedule::from_json(header.at("schedule"));
    c.train_config = header.at("train");
    c.metadata = header.at("metadata");
    for (const auto& p : header.at("manifest")) {
      c.manifest.push_back({p.at("name").get<std::string>(), p.at("rows").get<int>(), p.at("cols").get<int>(),
                            p.at("offset").get<std::size_t>()});
    }
    count = header.at("num_params").get<std::size_t>();
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::kCorruptFile, std::string("checkpoint header: ") + ex.what());
  } catch (const Error& ex) {
    throw Error(ErrorCode::kCorruptFile, std::string("checkpoint header: ") + ex.what());
  }
  const std::size_t blob = kPrefix + header_size;
  LAYOUTDM_REQUIRE(bytes.size() - blob == 4 * count, ErrorCode::kCorruptFile,
                   "parameter blob has " + std::to_string(bytes.size() - blob) + " bytes, expected " +
                       std::to_string(4 * count));
  c.params.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    c.params[i] = std::bit_cast<float>(detail::get_le<std::uint32_t>(bytes, blob + 4 * i));
  }
  return c;
}

inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  LAYOUTDM_REQUIRE(out.good(), ErrorCode::kIoError, "cannot write " + path.string());
  const std::string bytes = encode_checkpoint(c);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  LAYOUTDM_REQUIRE(out.good(), ErrorCode::kIoError, "write failed for " + path.string());
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  LAYOUTDM_REQUIRE(in.good(), ErrorCode::kIoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return decode_checkpoint(ss.str());
}

inline void save_vocabulary(const Vocabulary& vocab, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  LAYOUTDM_REQUIRE(out.good(), ErrorCode::kIoError, "cannot write " + path.string());
  out << vocab.to_json().dump(2) << '\n';
}

inline Vocabulary load_vocabulary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  LAYOUTDM_REQUIRE(in.good(), ErrorCode::kIoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return Vocabulary::from_json(nlohmann::json::parse(ss.str()));
  } catch (const nlohmann::json::exception& ex) {
    throw Error(ErrorCode::kParseError, path.string() + ": " + ex.what());
  }
}

}  // namespace layoutdm
