#include "mdp/checkpoint.hpp"

#include <atomic>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "json.hpp"
#include "mdp/errors.hpp"

namespace mdp {

namespace {

std::atomic<std::size_t> g_loads{0};

constexpr const char* kFormat = "ckpt-v1";

void write_blob(const std::filesystem::path& path, const nn::ParamStore<float>& ps, bool ema) {
  static_assert(std::endian::native == std::endian::little, "little-endian host required");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& t : ps) {
    const auto& v = ema ? t.ema : t.value;
    out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(float)));
  }
  if (!out) throw Error("failed writing " + path.string());
}

std::vector<char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IncompatibleCheckpoint("missing " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json tensors = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& t : ckpt.params) {
    tensors.push_back({{"name", t.name}, {"shape", {t.rows, t.cols}}, {"offset", offset},
                       {"trainable", t.trainable}});
    offset += t.size() * sizeof(float);
  }
  const nlohmann::json manifest = {
      {"format", kFormat},
      {"dtype", "float32"},
      {"byte_order", "little"},
      {"blob", "params.bin"},
      {"ema_blob", "params.ema.bin"},
      {"bytes", offset},
      {"heads_shared", ckpt.heads_shared()},
      {"config", ckpt.config.to_json()},
      {"normalizer", ckpt.normalizer.to_json()},
      {"schedule", ckpt.schedule.to_json()},
      {"tensors", tensors}};
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << "\n";
  write_blob(dir / "params.bin", ckpt.params, false);
  write_blob(dir / "params.ema.bin", ckpt.params, true);
}

Checkpoint load_checkpoint(const std::filesystem::path& dir) {
  const auto raw = read_file(dir / "manifest.json");
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(raw.begin(), raw.end());
  } catch (const nlohmann::json::exception& e) {
    throw IncompatibleCheckpoint(std::string("manifest is not valid JSON: ") + e.what());
  }
  if (m.value("format", "") != kFormat) throw IncompatibleCheckpoint("unsupported checkpoint format");
  if (m.value("dtype", "") != "float32") throw IncompatibleCheckpoint("unsupported dtype");

  Checkpoint ck;
  try {
    ck.config = DenoiserConfig::from_json(m.at("config"));
    ck.normalizer = Normalizer::from_json(m.at("normalizer"));
    ck.schedule = ScheduleParams::from_json(m.at("schedule"));
  } catch (const nlohmann::json::exception& e) {
    throw IncompatibleCheckpoint(std::string("bad manifest: ") + e.what());
  } catch (const ShapeMismatch& e) {
    throw IncompatibleCheckpoint(std::string("bad model config: ") + e.what());
  }

  const auto blob = read_file(dir / m.value("blob", "params.bin"));
  const auto ema = read_file(dir / m.value("ema_blob", "params.ema.bin"));
  const std::size_t bytes = m.at("bytes").get<std::size_t>();
  if (blob.size() != bytes || ema.size() != bytes) throw IncompatibleCheckpoint("blob size disagrees with manifest");

  for (const auto& t : m.at("tensors")) {
    const int rows = t.at("shape").at(0).get<int>();
    const int cols = t.at("shape").at(1).get<int>();
    const std::size_t off = t.at("offset").get<std::size_t>();
    const int i = ck.params.add(t.at("name").get<std::string>(), rows, cols);
    auto& p = ck.params[i];
    const std::size_t n = p.size() * sizeof(float);
    if (off + n > bytes) throw IncompatibleCheckpoint("tensor " + p.name + " overruns the blob");
    std::memcpy(p.value.data(), blob.data() + off, n);
    std::memcpy(p.ema.data(), ema.data() + off, n);
    p.trainable = t.value("trainable", true);
  }
  if (ck.params.find("dec.in.weight") < 0) throw IncompatibleCheckpoint("checkpoint lacks decoder weights");
  ++g_loads;
  return ck;
}

std::size_t checkpoint_load_count() { return g_loads.load(); }

bool same_parameters(const nn::ParamStore<float>& a, const nn::ParamStore<float>& b) {
  if (a.size() != b.size()) return false;
  for (const auto& t : a) {
    const int j = b.find(t.name);
    if (j < 0) return false;
    const auto& o = b[j];
    if (o.rows != t.rows || o.cols != t.cols) return false;
    if (std::memcmp(t.value.data(), o.value.data(), t.size() * sizeof(float)) != 0) return false;
  }
  return true;
}

}  // namespace mdp
