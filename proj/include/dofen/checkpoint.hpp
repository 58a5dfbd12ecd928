// Copyright 2026 The dofen Authors.
// SPDX-License-Identifier: Apache-2.0

// Checkpoint file layout (all integers little-endian):
//
//   "DOFN"                 4 bytes magic
//   version                u32
//   header_length          u64
//   header                 UTF-8 JSON, header_length bytes
//   payload                f32 tensors, then u32 index arrays
//
// The header holds the model config, model schema, preprocessor state and a
// directory of every payload entry {name, dtype, shape, offset, nbytes};
// offsets are relative to the start of the payload.

#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "dofen/data.hpp"
#include "dofen/model.hpp"

namespace dofen {

inline constexpr std::uint32_t kCheckpointVersion = 1;

template <class T>
struct Checkpoint {
  DofenModel<T> model;
  data::Preprocessor preprocessor;
};

template <class T>
std::string serialize_checkpoint(const DofenModel<T>& model, const data::Preprocessor& prep);

template <class T>
Checkpoint<T> deserialize_checkpoint(std::string_view bytes, const std::string& source = "<memory>");

template <class T>
void save_checkpoint(const std::string& path, const DofenModel<T>& model, const data::Preprocessor& prep);

template <class T>
Checkpoint<T> load_checkpoint(const std::string& path);

// Parsed header without materializing tensors.
nlohmann::json read_checkpoint_header(std::string_view bytes, const std::string& source = "<memory>");

std::string read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, std::string_view bytes);

// FNV-1a 64 of the checkpoint bytes, as 16 hex digits.
std::string checksum_hex(std::string_view bytes);

}  // namespace dofen
