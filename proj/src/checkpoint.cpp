#include "rationale/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>

#include "rationale/errors.hpp"

namespace rationale {

using nlohmann::json;

namespace {

constexpr char kMagic[8] = {'R', 'A', 'T', 'C', 'K', 'P', 'T', '1'};

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <class T>
void write_raw(std::ostream& out, const T* data, std::size_t count) {
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(sizeof(T) * count));
}

template <class T>
void read_raw(std::istream& in, T* data, std::size_t count, const std::filesystem::path& path) {
  in.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(sizeof(T) * count));
  if (!in) throw DataError(path.string() + ": truncated checkpoint");
}

// Allocates an empty model with the shapes recorded in the tensor table.
model::Model shaped_model(const json& header) {
  model::Model m;
  m.mask_temperature = header.at("mask_temperature").get<double>();
  m.generator.mode = model::parse_mode(header.at("mode").get<std::string>());
  std::map<std::string, std::pair<Eigen::Index, Eigen::Index>> shapes;
  for (const auto& t : header.at("tensors"))
    shapes[t.at("name").get<std::string>()] = {t.at("rows").get<Eigen::Index>(), t.at("cols").get<Eigen::Index>()};
  model::for_each_tensor(m, [&](model::ParamGroup, const std::string& name, auto& tensor) {
    auto it = shapes.find(name);
    if (it == shapes.end()) throw DataError("checkpoint lacks tensor " + name);
    using T = std::decay_t<decltype(tensor)>;
    if constexpr (T::ColsAtCompileTime == 1) {
      if (it->second.second != 1) throw DataError("checkpoint tensor " + name + " should be a vector");
      tensor.resize(it->second.first);
    } else {
      tensor.resize(it->second.first, it->second.second);
    }
  });
  return m;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  json header;
  header["format"] = 1;
  header["valid_loss"] = ckpt.valid_loss;
  header["epoch"] = ckpt.epoch;
  header["stage"] = ckpt.stage;
  header["stage_tag"] = ckpt.stage_tag;
  header["method"] = ckpt.method;
  header["config_hash"] = ckpt.config_hash;
  header["label_trained"] = ckpt.label_trained;
  header["vocabulary"] = ckpt.vocabulary;
  header["mode"] = std::string(model::to_string(ckpt.model.mode()));
  header["mask_temperature"] = ckpt.model.mask_temperature;
  json tensors = json::array();
  model::for_each_tensor(ckpt.model, [&](model::ParamGroup, const std::string& name, const auto& t) {
    tensors.push_back({{"name", name}, {"rows", t.rows()}, {"cols", t.cols()}});
  });
  header["tensors"] = tensors;
  const std::string text = header.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof kMagic);
  const std::uint64_t size = text.size();
  write_raw(out, &size, 1);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  model::for_each_tensor(ckpt.model, [&](model::ParamGroup, const std::string&, const auto& t) {
    write_raw(out, t.data(), static_cast<std::size_t>(t.size()));
  });
  if (!out) throw DataError("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  char magic[8];
  read_raw(in, magic, 8, path);
  if (std::memcmp(magic, kMagic, 8) != 0) throw DataError(path.string() + ": not a checkpoint file");
  std::uint64_t size = 0;
  read_raw(in, &size, 1, path);
  if (size > (1ULL << 32)) throw DataError(path.string() + ": implausible header size");
  std::string text(size, '\0');
  read_raw(in, text.data(), size, path);

  Checkpoint ckpt;
  try {
    const json header = json::parse(text);
    ckpt.valid_loss = header.at("valid_loss").get<double>();
    ckpt.epoch = header.at("epoch").get<int>();
    ckpt.stage = header.at("stage").get<int>();
    ckpt.stage_tag = header.at("stage_tag").get<std::string>();
    ckpt.method = header.at("method").get<std::string>();
    ckpt.config_hash = header.at("config_hash").get<std::string>();
    ckpt.label_trained = header.at("label_trained").get<bool>();
    ckpt.vocabulary = header.at("vocabulary").get<std::vector<std::string>>();
    ckpt.model = shaped_model(header);
  } catch (const json::exception& e) {
    throw DataError(path.string() + ": bad checkpoint header: " + e.what());
  } catch (const InvalidInput& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  model::for_each_tensor(ckpt.model, [&](model::ParamGroup, const std::string&, auto& t) {
    read_raw(in, t.data(), static_cast<std::size_t>(t.size()), path);
  });
  if (in.peek() != std::char_traits<char>::eof()) throw DataError(path.string() + ": trailing bytes in checkpoint");
  return ckpt;
}

}  // namespace rationale
