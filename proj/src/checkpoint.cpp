// Copyright 2026 The dofen Authors.
// SPDX-License-Identifier: Apache-2.0

#include "dofen/checkpoint.hpp"

#include <bit>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "dofen/error.hpp"
#include "dofen/rng.hpp"

namespace dofen {
namespace {

constexpr char kMagic[4] = {'D', 'O', 'F', 'N'};

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint32_t get_u32(std::string_view in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

std::uint64_t get_u64(std::string_view in, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

struct Sections {
  nlohmann::json header;
  std::string_view payload;
};

Sections split_sections(std::string_view bytes, const std::string& source) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw FormatError(source + ": not a dofen checkpoint (bad magic)");
  }
  const auto version = get_u32(bytes, 4);
  if (version != kCheckpointVersion) {
    throw FormatError(source + ": unsupported checkpoint version " + std::to_string(version));
  }
  const auto len = get_u64(bytes, 8);
  if (len > bytes.size() - 16) throw FormatError(source + ": truncated header");
  Sections s;
  try {
    s.header = nlohmann::json::parse(bytes.substr(16, len));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(source + ": malformed header: " + e.what());
  }
  s.payload = bytes.substr(16 + len);
  return s;
}

}  // namespace

template <class T>
std::string serialize_checkpoint(const DofenModel<T>& model, const data::Preprocessor& prep) {
  std::string payload;
  nlohmann::json dir = nlohmann::json::array();
  for (const auto& [name, t] : model.parameters()) {
    const std::size_t offset = payload.size();
    for (T v : t.data()) put_u32(payload, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    dir.push_back({{"name", name}, {"dtype", "f32"}, {"shape", t.shape()}, {"offset", offset},
                   {"nbytes", payload.size() - offset}});
  }
  const auto add_index = [&](const std::string& name, const std::vector<std::uint32_t>& values) {
    const std::size_t offset = payload.size();
    for (auto v : values) put_u32(payload, v);
    dir.push_back({{"name", name}, {"dtype", "u32"}, {"shape", {values.size()}}, {"offset", offset},
                   {"nbytes", payload.size() - offset}});
  };
  add_index("permutation", model.permutation().pi);
  add_index("forest_members", model.forest_plan().members);
  add_index("forest_offsets", model.forest_plan().offsets);
  add_index("pruned", model.pruned());

  nlohmann::json header = {{"config", model.config().to_json()},
                           {"schema", model.schema().to_json()},
                           {"preprocessor", prep.to_json()},
                           {"tensors", dir}};
  const std::string text = header.dump();

  std::string out(kMagic, 4);
  put_u32(out, kCheckpointVersion);
  put_u64(out, text.size());
  out += text;
  out += payload;
  return out;
}

nlohmann::json read_checkpoint_header(std::string_view bytes, const std::string& source) {
  return split_sections(bytes, source).header;
}

template <class T>
Checkpoint<T> deserialize_checkpoint(std::string_view bytes, const std::string& source) {
  auto [header, payload] = split_sections(bytes, source);
  try {
    const auto config = DofenConfig::from_json(header.at("config"));
    const auto schema = ModelSchema::from_json(header.at("schema"));
    auto prep = data::Preprocessor::from_json(header.at("preprocessor"));

    std::vector<std::pair<std::string, ad::Tensor<T>>> params;
    std::map<std::string, std::vector<std::uint32_t>> index;
    for (const auto& e : header.at("tensors")) {
      const auto name = e.at("name").get<std::string>();
      const auto dtype = e.at("dtype").get<std::string>();
      const auto shape = e.at("shape").get<ad::Shape>();
      const auto offset = e.at("offset").get<std::size_t>();
      const auto nbytes = e.at("nbytes").get<std::size_t>();
      const std::size_t count = ad::numel(shape);
      if (nbytes != count * 4 || offset > payload.size() || nbytes > payload.size() - offset) {
        throw FormatError(source + ": tensor \"" + name + "\" lies outside the payload");
      }
      if (dtype == "f32") {
        std::vector<T> values(count);
        for (std::size_t i = 0; i < count; ++i) {
          values[i] = static_cast<T>(std::bit_cast<float>(get_u32(payload, offset + 4 * i)));
        }
        params.emplace_back(name, ad::Tensor<T>::from(shape, std::move(values), true));
      } else if (dtype == "u32") {
        std::vector<std::uint32_t> values(count);
        for (std::size_t i = 0; i < count; ++i) values[i] = get_u32(payload, offset + 4 * i);
        index[name] = std::move(values);
      } else {
        throw FormatError(source + ": tensor \"" + name + "\" has unknown dtype " + dtype);
      }
    }
    for (const char* name : {"permutation", "forest_members", "forest_offsets", "pruned"}) {
      if (!index.count(name)) throw FormatError(source + ": missing index array \"" + name + "\"");
    }
    ForestPlan plan;
    plan.members = std::move(index["forest_members"]);
    plan.offsets = std::move(index["forest_offsets"]);
    auto model = DofenModel<T>::assemble(config, schema, std::move(params),
                                         PermutationPlan::from_pi(std::move(index["permutation"])),
                                         std::move(plan), std::move(index["pruned"]));
    return {std::move(model), std::move(prep)};
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(source + ": malformed header: " + e.what());
  } catch (const ConfigError& e) {
    throw FormatError(source + ": " + e.what());
  }
}

std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_bytes(const std::string& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("write failed for " + path);
}

template <class T>
void save_checkpoint(const std::string& path, const DofenModel<T>& model, const data::Preprocessor& prep) {
  write_file_bytes(path, serialize_checkpoint(model, prep));
}

template <class T>
Checkpoint<T> load_checkpoint(const std::string& path) {
  return deserialize_checkpoint<T>(read_file_bytes(path), path);
}

std::string checksum_hex(std::string_view bytes) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(bytes)));
  return buf;
}

#define DOFEN_INSTANTIATE_CHECKPOINT(T)                                                              \
  template std::string serialize_checkpoint<T>(const DofenModel<T>&, const data::Preprocessor&);     \
  template Checkpoint<T> deserialize_checkpoint<T>(std::string_view, const std::string&);            \
  template void save_checkpoint<T>(const std::string&, const DofenModel<T>&, const data::Preprocessor&); \
  template Checkpoint<T> load_checkpoint<T>(const std::string&);

DOFEN_INSTANTIATE_CHECKPOINT(float)
DOFEN_INSTANTIATE_CHECKPOINT(double)

}  // namespace dofen
