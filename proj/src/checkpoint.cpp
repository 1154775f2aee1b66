// SPDX-License-Identifier: Apache-2.0
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "json.hpp"

#include "cme/errors.hpp"
#include "cme/model.hpp"

namespace cme {
namespace {

constexpr const char* kFormat = "cme-checkpoint";
constexpr int kVersion = 1;

void put_le(std::ostream& os, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  unsigned char bytes[8];
  for (int k = 0; k < 8; ++k) bytes[k] = static_cast<unsigned char>(bits >> (8 * k));
  os.write(reinterpret_cast<const char*>(bytes), 8);
}

double get_le(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int k = 0; k < 8; ++k) bits |= static_cast<std::uint64_t>(p[k]) << (8 * k);
  return std::bit_cast<double>(bits);
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const ModelConfig& c = ckpt.params.config();
  nlohmann::ordered_json h;
  h["format"] = kFormat;
  h["version"] = kVersion;
  h["byte_order"] = "little";
  h["dtype"] = "float64";
  h["config"] = {{"vocab_size", c.vocab_size}, {"max_len", c.max_len},     {"d_model", c.d_model},
                 {"heads", c.heads},           {"d_ff", c.d_ff},           {"layers", c.layers},
                 {"num_classes", c.num_classes}, {"init_range", c.init_range}};
  h["vocab"] = ckpt.vocab.tokens();
  auto table = nlohmann::ordered_json::array();
  std::size_t offset = 0;
  for (const auto& p : ckpt.params.all()) {
    table.push_back({{"name", p.name}, {"rows", p.value.rows()}, {"cols", p.value.cols()}, {"offset", offset}});
    offset += p.value.size();
  }
  h["tensors"] = table;
  h["num_values"] = offset;

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out << h.dump() << '\n';
  for (const auto& p : ckpt.params.all()) {
    for (double v : p.value.data()) put_le(out, v);
  }
  if (!out) throw DataError("short write on checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::string header;
  std::getline(in, header);
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(header);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint " + path.string() + ": bad header (" + e.what() + ")");
  }
  if (h.value("format", "") != kFormat || h.value("version", 0) != kVersion) {
    throw DataError("checkpoint " + path.string() + ": unsupported format or version");
  }
  try {
    ModelConfig c;
    const auto& jc = h.at("config");
    c.vocab_size = jc.at("vocab_size");
    c.max_len = jc.at("max_len");
    c.d_model = jc.at("d_model");
    c.heads = jc.at("heads");
    c.d_ff = jc.at("d_ff");
    c.layers = jc.at("layers");
    c.num_classes = jc.at("num_classes");
    c.init_range = jc.at("init_range");
    Checkpoint ck{ModelParams(c), Vocab::from_tokens(h.at("vocab").get<std::vector<std::string>>())};
    if (ck.vocab.size() != c.vocab_size) throw DataError("checkpoint: vocab size disagrees with config");

    const std::size_t n = h.at("num_values");
    std::vector<unsigned char> blob(n * 8);
    in.read(reinterpret_cast<char*>(blob.data()), static_cast<std::streamsize>(blob.size()));
    if (static_cast<std::size_t>(in.gcount()) != blob.size()) {
      throw DataError("checkpoint " + path.string() + ": truncated weight blob");
    }
    const auto& table = h.at("tensors");
    if (table.size() != ck.params.all().size()) throw DataError("checkpoint: tensor table does not match architecture");
    for (std::size_t k = 0; k < table.size(); ++k) {
      Parameter& p = ck.params.at(k);
      const auto& e = table[k];
      if (e.at("name") != p.name || e.at("rows") != p.value.rows() || e.at("cols") != p.value.cols()) {
        throw DataError("checkpoint: tensor " + std::to_string(k) + " does not match architecture");
      }
      const std::size_t off = e.at("offset");
      if (off + p.value.size() > n) throw DataError("checkpoint: tensor extends past blob");
      for (std::size_t j = 0; j < p.value.size(); ++j) p.value.data()[j] = get_le(blob.data() + 8 * (off + j));
    }
    return ck;
  } catch (const nlohmann::json::exception& e) {
    throw DataError("checkpoint " + path.string() + ": malformed header (" + e.what() + ")");
  }
}

}  // namespace cme
