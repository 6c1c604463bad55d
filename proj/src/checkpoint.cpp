#include "peftlab/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

namespace peftlab {

namespace {

void put_u64(std::ostream& out, std::uint64_t x) {
  char buf[8];
  for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((x >> (8 * i)) & 0xff);
  out.write(buf, 8);
}

void put_f64(std::ostream& out, double x) { put_u64(out, std::bit_cast<std::uint64_t>(x)); }

std::uint64_t get_u64(std::istream& in, const std::string& what) {
  char buf[8];
  in.read(buf, 8);
  if (in.gcount() != 8) throw IoError("checkpoint: truncated while reading " + what);
  std::uint64_t x = 0;
  for (int i = 0; i < 8; ++i) x |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[i])) << (8 * i);
  return x;
}

double get_f64(std::istream& in, const std::string& what) {
  return std::bit_cast<double>(get_u64(in, what));
}

nlohmann::json config_to_json(const EncoderConfig& cfg) {
  return nlohmann::json{{"n_layers", cfg.n_layers},   {"d_model", cfg.d_model},
                        {"n_heads", cfg.n_heads},     {"d_ffn", cfg.d_ffn},
                        {"d_input", cfg.d_input},     {"max_len", cfg.max_len}};
}

EncoderConfig config_from_json(const nlohmann::json& j) {
  EncoderConfig cfg;
  cfg.n_layers = j.at("n_layers").get<int>();
  cfg.d_model = j.at("d_model").get<int>();
  cfg.n_heads = j.at("n_heads").get<int>();
  cfg.d_ffn = j.at("d_ffn").get<int>();
  cfg.d_input = j.at("d_input").get<int>();
  cfg.max_len = j.at("max_len").get<int>();
  return cfg;
}

}  // namespace

const Tensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors) {
    if (n == name) return &t;
  }
  return nullptr;
}

void save_checkpoint(const std::string& path, const CheckpointMeta& meta,
                     const std::vector<std::pair<std::string, const Tensor*>>& tensors) {
  meta.config.validate();
  std::vector<std::pair<std::string, const Tensor*>> sorted = tensors;
  std::sort(sorted.begin(), sorted.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  for (std::size_t i = 1; i < sorted.size(); ++i) {
    if (sorted[i - 1].first == sorted[i].first) {
      throw IoError("checkpoint: duplicate tensor name \"" + sorted[i].first + "\"");
    }
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("checkpoint: cannot open \"" + path + "\" for writing");
  out.write(kCheckpointMagic, 8);
  nlohmann::json header{{"config", config_to_json(meta.config)},
                        {"format", kCheckpointFormat},
                        {"method", meta.method},
                        {"seed", meta.seed}};
  const std::string header_text = header.dump();
  put_u64(out, header_text.size());
  out.write(header_text.data(), static_cast<std::streamsize>(header_text.size()));
  for (const auto& [name, t] : sorted) {
    put_u64(out, name.size());
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u64(out, static_cast<std::uint64_t>(t->rank()));
    for (Index d = 0; d < t->rank(); ++d) put_u64(out, static_cast<std::uint64_t>(t->dim(d)));
    for (Index i = 0; i < t->size(); ++i) put_f64(out, (*t)[i]);
  }
  out.flush();
  if (!out) throw IoError("checkpoint: failed writing \"" + path + "\"");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("checkpoint: cannot open \"" + path + "\" for reading");
  char magic[8];
  in.read(magic, 8);
  if (in.gcount() != 8 || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw IoError("checkpoint: \"" + path + "\" does not start with the PEFTLAB1 magic");
  }
  const std::uint64_t header_len = get_u64(in, "header length");
  if (header_len > (1u << 20)) throw IoError("checkpoint: header length is implausibly large");
  std::string header_text(header_len, '\0');
  in.read(header_text.data(), static_cast<std::streamsize>(header_len));
  if (static_cast<std::uint64_t>(in.gcount()) != header_len) {
    throw IoError("checkpoint: truncated while reading header");
  }
  nlohmann::json header = nlohmann::json::parse(header_text, nullptr, false);
  if (header.is_discarded()) throw IoError("checkpoint: header is not valid JSON");
  Checkpoint ckpt;
  try {
    if (header.at("format").get<std::string>() != kCheckpointFormat) {
      throw IoError("checkpoint: unsupported format \"" +
                    header.at("format").get<std::string>() + "\"");
    }
    ckpt.meta.config = config_from_json(header.at("config"));
    ckpt.meta.method = header.at("method").get<std::string>();
    ckpt.meta.seed = header.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("checkpoint: malformed header: ") + e.what());
  }
  ckpt.meta.config.validate();

  while (true) {
    char probe;
    in.read(&probe, 1);
    if (in.gcount() == 0) break;
    in.putback(probe);
    const std::uint64_t name_len = get_u64(in, "tensor name length");
    if (name_len == 0 || name_len > (1u << 16)) {
      throw IoError("checkpoint: tensor name length out of range");
    }
    std::string name(name_len, '\0');
    in.read(name.data(), static_cast<std::streamsize>(name_len));
    if (static_cast<std::uint64_t>(in.gcount()) != name_len) {
      throw IoError("checkpoint: truncated while reading a tensor name");
    }
    if (!ckpt.tensors.empty() && !(ckpt.tensors.back().first < name)) {
      throw IoError("checkpoint: tensor names are not strictly sorted at \"" + name + "\"");
    }
    const std::uint64_t rank = get_u64(in, "rank of \"" + name + "\"");
    if (rank < 1 || rank > 2) throw IoError("checkpoint: \"" + name + "\" has unsupported rank");
    Shape shape;
    std::uint64_t numel = 1;
    for (std::uint64_t d = 0; d < rank; ++d) {
      const std::uint64_t dim = get_u64(in, "shape of \"" + name + "\"");
      if (dim == 0 || dim > (1u << 24)) {
        throw IoError("checkpoint: \"" + name + "\" has a dimension out of range");
      }
      shape.push_back(static_cast<Index>(dim));
      numel *= dim;
    }
    if (numel > (1ull << 32)) throw IoError("checkpoint: \"" + name + "\" is implausibly large");
    Tensor t(shape);
    for (Index i = 0; i < t.size(); ++i) t[i] = get_f64(in, "values of \"" + name + "\"");
    ckpt.tensors.emplace_back(std::move(name), std::move(t));
  }
  return ckpt;
}

void save_encoder_checkpoint(const std::string& path, const EncoderParams& enc,
                             const std::string& method, std::uint64_t seed) {
  std::vector<std::pair<std::string, const Tensor*>> tensors;
  const_cast<EncoderParams&>(enc).for_each(
      [&](const std::string& name, Tensor& t) { tensors.emplace_back(name, &t); });
  save_checkpoint(path, {enc.config, method, seed}, tensors);
}

std::pair<EncoderParams, CheckpointMeta> load_encoder_checkpoint(const std::string& path) {
  Checkpoint ckpt = load_checkpoint(path);
  EncoderParams enc = EncoderParams::zeros(ckpt.meta.config);
  std::size_t expected = 0;
  enc.for_each([&](const std::string& name, Tensor& t) {
    ++expected;
    const Tensor* src = ckpt.find(name);
    if (src == nullptr) throw IoError("checkpoint: missing encoder tensor \"" + name + "\"");
    if (!src->same_shape(t)) {
      throw IoError("checkpoint: \"" + name + "\" has shape " + shape_str(src->shape()) +
                    ", expected " + shape_str(t.shape()));
    }
    t.vec() = src->vec();
  });
  if (expected != ckpt.tensors.size()) {
    throw IoError("checkpoint: file holds tensors that are not encoder parameters");
  }
  return {std::move(enc), ckpt.meta};
}

}  // namespace peftlab
