// Copyright 2026 The ConVQG Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.
// =============================================================================

// Binary checkpoints.
//
//   "CVQG" | u32 version | u32 count
//   count x ( u32 name_len | name | u32 rank | rank x u32 dim | f32 payload )
//   u32 crc32 of every preceding byte
//
// All integers and floats little-endian. Model config and vocabulary travel
// in a JSON sidecar, `<path>.meta.json`.

#pragma once

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <string>
#include <string_view>

#include "convqg/config.hpp"
#include "convqg/errors.hpp"
#include "convqg/grad.hpp"
#include "convqg/model.hpp"
#include "convqg/tokenizer.hpp"
#include "json.hpp"

namespace convqg {

inline constexpr char kCheckpointMagic[4] = {'C', 'V', 'Q', 'G'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

using TensorMap = std::map<std::string, grad::Tensor<float>>;

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
    }
    pos_ += 4;
    return v;
  }

  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (remaining() < n) throw FormatError("checkpoint truncated");
  }

  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::uint32_t crc32_of(std::string_view bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const std::size_t n = std::min<std::size_t>(bytes.size() - pos, 1u << 30);
    crc = crc32(crc, reinterpret_cast<const Bytef*>(bytes.data() + pos), static_cast<uInt>(n));
    pos += n;
  }
  return static_cast<std::uint32_t>(crc);
}

inline std::string encode_checkpoint(const TensorMap& tensors) {
  std::string out(kCheckpointMagic, 4);
  detail::put_u32(out, kCheckpointVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    detail::put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    detail::put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) detail::put_u32(out, static_cast<std::uint32_t>(d));
    for (float v : t.data()) detail::put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  detail::put_u32(out, crc32_of(out));
  return out;
}

inline TensorMap decode_checkpoint(std::string_view bytes) {
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw FormatError("not a checkpoint (bad magic)");
  }
  const auto body = bytes.substr(0, bytes.size() - 4);
  detail::Reader tail(bytes.substr(bytes.size() - 4));
  if (tail.u32() != crc32_of(body)) throw FormatError("checkpoint CRC mismatch");

  detail::Reader r(body.substr(4));
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint32_t count = r.u32();
  TensorMap out;
  for (std::uint32_t k = 0; k < count; ++k) {
    std::string name(r.take(r.u32()));
    const std::uint32_t rank = r.u32();
    if (rank == 0 || rank > 8) throw FormatError("tensor '" + name + "' has invalid rank");
    grad::Shape shape;
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      shape.push_back(r.u32());
      n *= shape.back();
    }
    if (n > r.remaining() / 4) throw FormatError("checkpoint truncated");
    std::vector<float> data(n);
    for (auto& v : data) v = std::bit_cast<float>(r.u32());
    if (!out.emplace(name, grad::Tensor<float>(std::move(shape), std::move(data))).second) {
      throw FormatError("duplicate tensor '" + name + "'");
    }
  }
  if (r.remaining() != 0) throw FormatError("trailing bytes after tensors");
  return out;
}

inline void write_file(const std::string& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path + "'");
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void save_tensors(const std::string& path, const TensorMap& tensors) {
  write_file(path, encode_checkpoint(tensors));
}

inline TensorMap load_tensors(const std::string& path) { return decode_checkpoint(read_file(path)); }

template <std::floating_point T>
TensorMap model_tensors(const QuestionModel<T>& model) {
  TensorMap out;
  for (const auto& [name, p] : model.params()) out.emplace(name, p.value.template cast<float>());
  return out;
}

// The checkpoint's own CRC field; equal models hash equal.
template <std::floating_point T>
std::uint32_t parameter_hash(const QuestionModel<T>& model) {
  const std::string bytes = encode_checkpoint(model_tensors(model));
  return crc32_of(std::string_view(bytes).substr(0, bytes.size() - 4));
}

inline std::string meta_path(const std::string& checkpoint) { return checkpoint + ".meta.json"; }

template <std::floating_point T>
void save_model(const std::string& path, const QuestionModel<T>& model, const Vocab& vocab,
                const nlohmann::json& extra = nlohmann::json::object()) {
  save_tensors(path, model_tensors(model));
  nlohmann::json meta = {{"format_version", kCheckpointVersion},
                         {"model", to_json(model.config())},
                         {"vocab", vocab.tokens()}};
  for (const auto& [k, v] : extra.items()) meta[k] = v;
  write_file(meta_path(path), meta.dump(2) + "\n");
}

struct LoadedModel {
  QuestionModel<float> model;
  Vocab vocab;
  nlohmann::json meta;
};

inline LoadedModel load_model(const std::string& path) {
  auto tensors = load_tensors(path);
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(read_file(meta_path(path)));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint metadata: " + std::string(e.what()));
  }
  if (!meta.contains("model") || !meta.contains("vocab")) {
    throw FormatError("checkpoint metadata lacks 'model' or 'vocab'");
  }
  const ModelConfig config = model_config_from_json(meta.at("model"));
  Vocab vocab = Vocab::from_tokens(meta.at("vocab").get<std::vector<std::string>>());
  ParamStore<float> params;
  for (auto& [name, t] : tensors) params.emplace(name, grad::Parameter<float>(std::move(t)));
  QuestionModel<float> model(config, vocab.size(), std::move(params));
  return {std::move(model), std::move(vocab), std::move(meta)};
}

}  // namespace convqg
