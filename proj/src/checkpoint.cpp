#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>

#include "irn/training.hpp"

// Checkpoint container: 8-byte magic "IRNCKPT1", a little-endian uint64
// header length, a UTF-8 JSON header (version, counters, config echo, array
// directory with offsets), then the raw float32 arrays back to back.

namespace irn {

namespace {

constexpr char kMagic[8] = {'I', 'R', 'N', 'C', 'K', 'P', 'T', '1'};

struct ArrayEntry {
  Shape shape;
  size_t offset = 0;  // in floats, from payload start
};

struct RawCheckpoint {
  nlohmann::json header;
  std::vector<float> payload;
  std::map<std::string, ArrayEntry> index;

  const ArrayEntry& find(const std::string& name) const {
    auto it = index.find(name);
    IRN_REQUIRE(it != index.end(), "checkpoint is missing array '", name, "'");
    return it->second;
  }

  void copy_into(const std::string& name, const Shape& expect_shape, float* dst,
                 size_t n) const {
    const auto& e = find(name);
    IRN_REQUIRE(e.shape == expect_shape, "parameter mismatch at '", name, "': checkpoint ",
                shape_str(e.shape), " vs model ", shape_str(expect_shape));
    std::memcpy(dst, payload.data() + e.offset, n * sizeof(float));
  }
};

RawCheckpoint read_checkpoint_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  char magic[8];
  in.read(magic, 8);
  if (in.gcount() != 8 || std::memcmp(magic, kMagic, 8) != 0)
    throw IoError("not a checkpoint: " + path);
  uint64_t header_len = 0;
  in.read(reinterpret_cast<char*>(&header_len), 8);
  if (in.gcount() != 8) throw IoError("truncated checkpoint: " + path);
  std::string header_bytes(header_len, '\0');
  in.read(header_bytes.data(), static_cast<std::streamsize>(header_len));
  if (static_cast<uint64_t>(in.gcount()) != header_len)
    throw IoError("truncated checkpoint: " + path);

  RawCheckpoint ck;
  try {
    ck.header = nlohmann::json::parse(header_bytes);
  } catch (const nlohmann::json::exception&) {
    throw IoError("corrupt checkpoint header: " + path);
  }
  const int version = ck.header.value("version", -1);
  IRN_REQUIRE(version == 1, "unsupported checkpoint version ", version, " in ", path);

  size_t total_floats = 0;
  for (const auto& a : ck.header.at("arrays")) {
    ArrayEntry e;
    e.shape = a.at("shape").get<Shape>();
    e.offset = a.at("offset").get<size_t>();
    total_floats = std::max(total_floats, e.offset + static_cast<size_t>(shape_numel(e.shape)));
    ck.index[a.at("name").get<std::string>()] = std::move(e);
  }
  ck.payload.resize(total_floats);
  in.read(reinterpret_cast<char*>(ck.payload.data()),
          static_cast<std::streamsize>(total_floats * sizeof(float)));
  if (static_cast<size_t>(in.gcount()) != total_floats * sizeof(float))
    throw IoError("truncated checkpoint: " + path);
  return ck;
}

class CheckpointWriter {
 public:
  void add(const std::string& name, const Shape& shape, const float* data, size_t n) {
    nlohmann::json e;
    e["name"] = name;
    e["shape"] = shape;
    e["offset"] = payload_.size();
    arrays_.push_back(std::move(e));
    payload_.insert(payload_.end(), data, data + n);
  }

  void add_tensor(const std::string& name, const Tensor& t) {
    add(name, t.shape(), t.data().data(), static_cast<size_t>(t.numel()));
  }

  void add_buffer(const std::string& name, const std::vector<float>& v) {
    add(name, Shape{static_cast<int64_t>(v.size())}, v.data(), v.size());
  }

  void write(nlohmann::json header, const std::string& path) {
    header["version"] = 1;
    header["arrays"] = arrays_;
    const std::string hbytes = header.dump();
    const std::string tmp = path + ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw IoError("cannot write checkpoint: " + path);
      out.write(kMagic, 8);
      const uint64_t hlen = hbytes.size();
      out.write(reinterpret_cast<const char*>(&hlen), 8);
      out.write(hbytes.data(), static_cast<std::streamsize>(hbytes.size()));
      out.write(reinterpret_cast<const char*>(payload_.data()),
                static_cast<std::streamsize>(payload_.size() * sizeof(float)));
      if (!out) throw IoError("checkpoint write failed: " + path);
    }
    std::filesystem::rename(tmp, path);
  }

 private:
  nlohmann::json arrays_ = nlohmann::json::array();
  std::vector<float> payload_;
};

}  // namespace

void Trainer::save(const std::string& path) {
  CheckpointWriter w;
  auto params = model_.params();
  for (auto& p : params) w.add_tensor("model/" + p.name, *p.tensor);
  for (size_t i = 0; i < params.size(); ++i) {
    w.add_buffer("adam_m/" + params[i].name, opt_.m[i]);
    w.add_buffer("adam_v/" + params[i].name, opt_.v[i]);
  }
  if (disc_) {
    auto dp = disc_->params();
    for (auto& p : dp) w.add_tensor("disc/" + p.name, *p.tensor);
    for (size_t i = 0; i < dp.size(); ++i) {
      w.add_buffer("disc_adam_m/" + dp[i].name, disc_opt_.m[i]);
      w.add_buffer("disc_adam_v/" + dp[i].name, disc_opt_.v[i]);
    }
  }
  nlohmann::json header;
  header["config"] = config_to_json(cfg_);
  header["iter_pretrain"] = iter_pre_;
  header["iter_finetune"] = iter_ft_;
  header["warmup_done"] = warmup_done_;
  header["adam"] = {{"t", opt_.t}};
  header["has_disc"] = disc_.has_value();
  if (disc_) header["disc_adam"] = {{"t", disc_opt_.t}};
  w.write(std::move(header), path);
}

void Trainer::restore(const std::string& path) {
  RawCheckpoint ck = read_checkpoint_file(path);
  auto params = model_.params();
  for (auto& p : params)
    ck.copy_into("model/" + p.name, p.tensor->shape(), p.tensor->mut_data().data(),
                 static_cast<size_t>(p.tensor->numel()));
  for (size_t i = 0; i < params.size(); ++i) {
    const Shape s{static_cast<int64_t>(opt_.m[i].size())};
    ck.copy_into("adam_m/" + params[i].name, s, opt_.m[i].data(), opt_.m[i].size());
    ck.copy_into("adam_v/" + params[i].name, s, opt_.v[i].data(), opt_.v[i].size());
  }
  opt_.t = ck.header.at("adam").at("t").get<int64_t>();
  iter_pre_ = ck.header.at("iter_pretrain").get<int64_t>();
  iter_ft_ = ck.header.at("iter_finetune").get<int64_t>();
  warmup_done_ = ck.header.at("warmup_done").get<int64_t>();
  if (ck.header.value("has_disc", false)) {
    auto& disc = discriminator();
    auto dp = disc.params();
    for (auto& p : dp)
      ck.copy_into("disc/" + p.name, p.tensor->shape(), p.tensor->mut_data().data(),
                   static_cast<size_t>(p.tensor->numel()));
    for (size_t i = 0; i < dp.size(); ++i) {
      const Shape s{static_cast<int64_t>(disc_opt_.m[i].size())};
      ck.copy_into("disc_adam_m/" + dp[i].name, s, disc_opt_.m[i].data(), disc_opt_.m[i].size());
      ck.copy_into("disc_adam_v/" + dp[i].name, s, disc_opt_.v[i].data(), disc_opt_.v[i].size());
    }
    disc_opt_.t = ck.header.at("disc_adam").at("t").get<int64_t>();
  }
}

LoadedModel load_checkpoint_model(const std::string& path) {
  RawCheckpoint ck = read_checkpoint_file(path);
  TrainConfig cfg = config_from_json(ck.header.at("config"));
  Rng r(cfg.seed, 100);
  LoadedModel lm{cfg, IrnModel(cfg.scale, cfg.inv_blocks_per_module, cfg.growth, r,
                               static_cast<float>(cfg.clamp_scale))};
  for (auto& p : lm.model.params())
    ck.copy_into("model/" + p.name, p.tensor->shape(), p.tensor->mut_data().data(),
                 static_cast<size_t>(p.tensor->numel()));
  return lm;
}

}  // namespace irn
