// SPDX-License-Identifier: Apache-2.0
#include <attnrobust/checkpoint.hpp>

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace attnrobust {

namespace {
constexpr const char *kMagic = "ATTNROBUST-CKPT 1";
static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");
} // namespace

void save_checkpoint(const std::filesystem::path &path, const ModelParams &params,
                     const std::string &config_hash) {
  const auto &d = params.dims();
  nlohmann::json header;
  header["dims"] = {{"vocab_size", d.vocab_size},
                    {"embed_dim", d.embed_dim},
                    {"hidden_dim", d.hidden_dim},
                    {"attn_dim", d.attn_dim},
                    {"num_classes", d.num_classes}};
  header["score_kind"] = std::string(to_string(params.score_kind()));
  header["config_hash"] = config_hash;
  auto tensors = nlohmann::json::array();
  for (const auto &[name, s] : params.layout().named())
    tensors.push_back({name, {s.rows, s.cols}});
  header["tensors"] = tensors;
  header["count"] = params.layout().total;

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw std::runtime_error("cannot write checkpoint " + path.string());
  out << kMagic << '\n' << header.dump() << '\n';
  const auto v = params.values();
  out.write(reinterpret_cast<const char *>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
  if (!out)
    throw std::runtime_error("failed writing checkpoint " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw std::runtime_error("cannot open checkpoint " + path.string());
  std::string magic, header_line;
  std::getline(in, magic);
  if (magic != kMagic)
    throw std::runtime_error(path.string() + " is not a checkpoint");
  std::getline(in, header_line);
  const auto header = nlohmann::json::parse(header_line);

  ModelDims dims;
  const auto &jd = header.at("dims");
  dims.vocab_size = jd.at("vocab_size").get<std::size_t>();
  dims.embed_dim = jd.at("embed_dim").get<std::size_t>();
  dims.hidden_dim = jd.at("hidden_dim").get<std::size_t>();
  dims.attn_dim = jd.at("attn_dim").get<std::size_t>();
  dims.num_classes = jd.at("num_classes").get<std::size_t>();
  const auto kind = parse_score_kind(header.at("score_kind").get<std::string>());
  if (!kind)
    throw std::runtime_error("checkpoint has unknown score_kind");

  Checkpoint ck{ModelParams(dims, *kind), header.at("config_hash").get<std::string>()};
  const auto count = header.at("count").get<std::size_t>();
  if (count != ck.params.layout().total)
    throw std::runtime_error("checkpoint value count does not match its dims");
  auto v = ck.params.values();
  in.read(reinterpret_cast<char *>(v.data()),
          static_cast<std::streamsize>(v.size() * sizeof(double)));
  if (in.gcount() != static_cast<std::streamsize>(v.size() * sizeof(double)))
    throw std::runtime_error("checkpoint " + path.string() + " is truncated");
  return ck;
}

} // namespace attnrobust
