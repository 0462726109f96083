#include "vprg/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "vprg/errors.hpp"

namespace vprg {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

void TrainConfig::validate() const {
  if (epochs == 0) throw std::invalid_argument("TrainConfig: epochs must be positive");
  if (!(base_lr > 0.0)) throw std::invalid_argument("TrainConfig: base_lr must be positive");
  if (!(decay_factor > 0.0) || decay_factor > 1.0)
    throw std::invalid_argument("TrainConfig: decay_factor must be in (0, 1]");
  if (decay_every == 0 || decay_every > epochs)
    throw std::invalid_argument("TrainConfig: decay_every must be in [1, epochs]");
  if (batch_size == 0) throw std::invalid_argument("TrainConfig: batch_size must be positive");
  if (clip_norm < 0.0) throw std::invalid_argument("TrainConfig: clip_norm must be >= 0");
}

double lr_at_epoch(std::size_t epoch, const TrainConfig& cfg) {
  return cfg.base_lr * std::pow(cfg.decay_factor,
                                static_cast<double>(epoch / cfg.decay_every));
}

AdamOptimizer::AdamOptimizer(const ParamRegistry& params) {
  m_.reserve(params.items.size());
  v_.reserve(params.items.size());
  for (const auto& [name, var] : params.items) {
    m_.push_back(Tensor::zeros(var.value().shape()));
    v_.push_back(Tensor::zeros(var.value().shape()));
  }
}

double global_grad_norm(const ParamRegistry& params) {
  double sq = 0.0;
  for (const auto& [name, var] : params.items) {
    if (!var.has_grad()) continue;
    const Tensor& g = var.grad();
    for (std::size_t k = 0; k < g.numel(); ++k) sq += g.data()[k] * g.data()[k];
  }
  return std::sqrt(sq);
}

void AdamOptimizer::step(ParamRegistry& params, double lr, double clip_norm) {
  if (m_.size() != params.items.size())
    throw std::logic_error("AdamOptimizer: slot count does not match the registry");
  double clip_scale = 1.0;
  if (clip_norm > 0.0) {
    double norm = global_grad_norm(params);
    if (norm > clip_norm) clip_scale = clip_norm / norm;
  }
  ++steps_;
  const double bc1 = 1.0 - std::pow(kBeta1, static_cast<double>(steps_));
  const double bc2 = 1.0 - std::pow(kBeta2, static_cast<double>(steps_));
  for (std::size_t i = 0; i < params.items.size(); ++i) {
    ad::Var& p = params.items[i].second;
    const double* g = p.has_grad() ? p.grad().data() : nullptr;
    double* val = p.mutable_value().data();
    double* m = m_[i].data();
    double* v = v_[i].data();
    for (std::size_t k = 0; k < p.value().numel(); ++k) {
      const double gk = g ? g[k] * clip_scale : 0.0;
      m[k] = kBeta1 * m[k] + (1.0 - kBeta1) * gk;
      v[k] = kBeta2 * v[k] + (1.0 - kBeta2) * gk * gk;
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      val[k] -= lr * mhat / (std::sqrt(vhat) + kEps);
    }
    p.zero_grad();
  }
}

void AdamOptimizer::restore(std::vector<Tensor> m, std::vector<Tensor> v,
                            std::size_t steps) {
  if (m.size() != v.size())
    throw std::invalid_argument("AdamOptimizer: moment lists must pair up");
  m_ = std::move(m);
  v_ = std::move(v);
  steps_ = steps;
}

namespace {

constexpr char kCkptMagic[8] = {'V', 'P', 'R', 'G', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kCkptVersion = 1;

void put_u32(std::string& out, std::uint32_t x) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((x >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t x) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((x >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const std::string& in, std::size_t off) {
  std::uint32_t x = 0;
  for (int i = 3; i >= 0; --i) x = (x << 8) | static_cast<unsigned char>(in[off + i]);
  return x;
}

std::uint64_t get_u64(const std::string& in, std::size_t off) {
  std::uint64_t x = 0;
  for (int i = 7; i >= 0; --i) x = (x << 8) | static_cast<unsigned char>(in[off + i]);
  return x;
}

void hash_mix(std::uint64_t& h, const std::string& s) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;  // FNV-1a
  }
  h ^= '|';
  h *= 0x100000001b3ull;
}

NamedTensor stage_tensor(const std::string& name, const Tensor& t) {
  NamedTensor out;
  out.name = name;
  out.shape = t.shape();
  out.data.resize(t.numel());
  for (std::size_t k = 0; k < t.numel(); ++k)
    out.data[k] = static_cast<float>(t.data()[k]);
  return out;
}

Tensor unstage_tensor(const NamedTensor& nt) {
  Tensor t = Tensor::zeros(nt.shape);
  if (t.numel() != nt.data.size())
    throw std::invalid_argument("checkpoint tensor " + nt.name + " has a bad payload size");
  for (std::size_t k = 0; k < nt.data.size(); ++k)
    t.data()[k] = static_cast<double>(nt.data[k]);
  return t;
}

}  // namespace

std::uint64_t hash_train_setup(const ModelConfig& model_cfg, const TrainConfig& cfg) {
  std::ostringstream s;
  s << model_cfg.vocab_size << ' ' << model_cfg.video_width << ' ' << model_cfg.dim << ' '
    << model_cfg.K << ' ' << model_cfg.top_q << ' ' << model_cfg.heads << ' '
    << model_cfg.depth << ' ' << model_cfg.max_sentences << ' ' << model_cfg.margin << ' '
    << model_cfg.retrieval_nce_weight << ' ' << model_cfg.global_nce_weight << ' '
    << model_cfg.initial_similarity_scale << ' ' << model_cfg.label_theta_min << ' '
    << model_cfg.label_theta_max << ' ' << model_cfg.unmasked_weight << ' '
    << cfg.epochs << ' ' << cfg.base_lr << ' ' << cfg.decay_factor << ' '
    << cfg.decay_every << ' ' << cfg.batch_size << ' ' << cfg.clip_norm << ' '
    << cfg.seed << ' ' << cfg.use_time_loss;
  std::uint64_t h = 0xcbf29ce484222325ull;
  hash_mix(h, s.str());
  return h;
}

Checkpoint capture_checkpoint(const DmrJrgModel& model, const AdamOptimizer& opt,
                              std::uint32_t epoch, std::uint64_t config_hash,
                              const std::string& metrics_json) {
  const ParamRegistry& params = model.params();
  if (opt.first_moments().size() != params.items.size())
    throw std::invalid_argument("capture_checkpoint: optimizer does not match the model");
  Checkpoint ckpt;
  ckpt.epoch = epoch;
  ckpt.step_count = opt.step_count();
  ckpt.config_hash = config_hash;
  ckpt.metrics_json = metrics_json;
  for (const auto& [name, var] : params.items)
    ckpt.tensors.push_back(stage_tensor(name, var.value()));
  for (std::size_t i = 0; i < params.items.size(); ++i)
    ckpt.tensors.push_back(stage_tensor("adam.m." + params.items[i].first,
                                        opt.first_moments()[i]));
  for (std::size_t i = 0; i < params.items.size(); ++i)
    ckpt.tensors.push_back(stage_tensor("adam.v." + params.items[i].first,
                                        opt.second_moments()[i]));
  return ckpt;
}

void restore_checkpoint(DmrJrgModel& model, AdamOptimizer& opt, const Checkpoint& ckpt) {
  std::map<std::string, const NamedTensor*> by_name;
  for (const NamedTensor& nt : ckpt.tensors) by_name[nt.name] = &nt;
  ParamRegistry& params = model.params();
  std::vector<Tensor> m, v;
  for (auto& [name, var] : params.items) {
    auto it = by_name.find(name);
    if (it == by_name.end())
      throw std::invalid_argument("checkpoint is missing parameter " + name);
    Tensor t = unstage_tensor(*it->second);
    if (!t.same_shape(var.value()))
      throw std::invalid_argument("checkpoint parameter " + name + " has the wrong shape");
    var.mutable_value() = t;

    auto im = by_name.find("adam.m." + name);
    auto iv = by_name.find("adam.v." + name);
    if (im == by_name.end() || iv == by_name.end())
      throw std::invalid_argument("checkpoint is missing optimizer state for " + name);
    m.push_back(unstage_tensor(*im->second));
    v.push_back(unstage_tensor(*iv->second));
  }
  opt.restore(std::move(m), std::move(v), ckpt.step_count);
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  ordered_json manifest;
  manifest["epoch"] = ckpt.epoch;
  manifest["step_count"] = ckpt.step_count;
  manifest["config_hash"] = ckpt.config_hash;
  manifest["metrics"] = ckpt.metrics_json;
  manifest["tensors"] = ordered_json::array();
  std::uint64_t offset = 0;
  for (const NamedTensor& nt : ckpt.tensors) {
    ordered_json t;
    t["name"] = nt.name;
    t["shape"] = nt.shape;
    t["offset"] = offset;
    t["count"] = nt.data.size();
    manifest["tensors"].push_back(t);
    offset += 4 * nt.data.size();
  }
  const std::string mtext = manifest.dump();

  std::string out;
  out.append(kCkptMagic, sizeof(kCkptMagic));
  put_u32(out, kCkptVersion);
  put_u64(out, mtext.size());
  out += mtext;
  for (const NamedTensor& nt : ckpt.tensors)
    for (float f : nt.data) put_u32(out, std::bit_cast<std::uint32_t>(f));

  const fs::path target(path);
  const fs::path temp = target.string() + ".tmp";
  {
    std::ofstream file(temp, std::ios::binary | std::ios::trunc);
    if (!file) throw std::runtime_error("save_checkpoint: cannot open " + temp.string());
    file.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!file) throw std::runtime_error("save_checkpoint: short write to " + temp.string());
  }
  fs::rename(temp, target);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path, 0);
  std::ostringstream buf;
  buf << in.rdbuf();
  const std::string bytes = std::move(buf).str();

  if (bytes.size() < 20) throw FormatError("file shorter than the 20-byte header", bytes.size());
  if (std::memcmp(bytes.data(), kCkptMagic, sizeof(kCkptMagic)) != 0)
    throw FormatError("bad magic", 0);
  if (get_u32(bytes, 8) != kCkptVersion) throw FormatError("unsupported version", 8);
  const std::uint64_t mlen = get_u64(bytes, 12);
  if (20 + mlen > bytes.size()) throw FormatError("manifest runs past end of file", 12);

  ordered_json manifest;
  try {
    manifest = ordered_json::parse(bytes.substr(20, mlen));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(e.what(), 0);
  }

  Checkpoint ckpt;
  ckpt.epoch = manifest.at("epoch").get<std::uint32_t>();
  ckpt.step_count = manifest.at("step_count").get<std::uint64_t>();
  ckpt.config_hash = manifest.at("config_hash").get<std::uint64_t>();
  ckpt.metrics_json = manifest.at("metrics").get<std::string>();

  const std::size_t payload_start = 20 + mlen;
  const std::size_t payload_bytes = bytes.size() - payload_start;
  std::uint64_t expected = 0;
  for (const auto& t : manifest.at("tensors"))
    expected += 4 * t.at("count").get<std::uint64_t>();
  if (payload_bytes != expected)
    throw FormatError("expected " + std::to_string(expected) + " payload bytes, found " +
                          std::to_string(payload_bytes),
                      payload_start);

  for (const auto& t : manifest.at("tensors")) {
    NamedTensor nt;
    nt.name = t.at("name").get<std::string>();
    nt.shape = t.at("shape").get<std::vector<std::size_t>>();
    const std::uint64_t offset = t.at("offset").get<std::uint64_t>();
    const std::uint64_t count = t.at("count").get<std::uint64_t>();
    if (offset + 4 * count > payload_bytes)
      throw FormatError("tensor " + nt.name + " runs past the payload",
                        payload_start + offset);
    nt.data.resize(count);
    for (std::uint64_t k = 0; k < count; ++k)
      nt.data[k] = std::bit_cast<float>(get_u32(bytes, payload_start + offset + 4 * k));
    ckpt.tensors.push_back(std::move(nt));
  }
  return ckpt;
}

std::string step_record_json(const StepRecord& rec) {
  ordered_json obj;
  obj["epoch"] = rec.epoch;
  obj["step"] = rec.step;
  obj["retrieval"] = rec.retrieval;
  obj["local"] = rec.local;
  obj["global"] = rec.global;
  obj["time"] = rec.time;
  obj["coupling"] = rec.coupling;
  obj["total"] = rec.total;
  obj["lr"] = rec.lr;
  return obj.dump();
}

namespace {

void require_finite(double value, const char* name, std::size_t epoch, std::size_t step) {
  if (!std::isfinite(value))
    throw NumericError(std::string(name) + " loss is not finite at epoch " +
                       std::to_string(epoch) + " step " + std::to_string(step));
}

}  // namespace

TrainResult train(DmrJrgModel& model, const Corpus& corpus, const TrainConfig& cfg,
                  const TrainHooks& hooks) {
  cfg.validate();

  std::vector<VideoInput> video_inputs;
  std::vector<std::pair<std::size_t, const ParagraphRecord*>> pairs;
  for (const CorpusRecord& v : corpus.videos) {
    video_inputs.push_back({v.video_id, v.duration, v.segments});
    for (const ParagraphRecord& p : v.paragraphs)
      pairs.emplace_back(video_inputs.size() - 1, &p);
  }
  if (pairs.empty()) throw std::invalid_argument("train: corpus has no matched pairs");

  AdamOptimizer opt(model.params());
  std::mt19937_64 order_rng(cfg.seed);
  TrainResult result;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at_epoch(epoch, cfg);
    std::shuffle(pairs.begin(), pairs.end(), order_rng);

    std::size_t step = 0;
    for (std::size_t start = 0; start < pairs.size(); start += cfg.batch_size, ++step) {
      const std::size_t stop = std::min(start + cfg.batch_size, pairs.size());
      std::vector<VideoInput> videos;
      std::vector<ParagraphInput> paragraphs;
      for (std::size_t i = start; i < stop; ++i) {
        videos.push_back(video_inputs[pairs[i].first]);
        paragraphs.push_back({pairs[i].second->paragraph_id, pairs[i].second->sentences});
      }
      const std::uint64_t mask_seed =
          cfg.seed * 0x9e3779b97f4a7c15ull + epoch * 1000003ull + step * 7919ull;

      LossBreakdown losses = model.forward_train(videos, paragraphs, mask_seed);
      StepRecord rec;
      rec.epoch = epoch;
      rec.step = step;
      rec.retrieval = losses.retrieval.scalar();
      rec.local = losses.local.scalar();
      rec.global = losses.global.scalar();
      rec.time = losses.time.scalar();
      rec.coupling = losses.coupling.scalar();
      rec.total = losses.total.scalar();
      rec.lr = lr;
      require_finite(rec.retrieval, "retrieval", epoch, step);
      require_finite(rec.local, "local", epoch, step);
      require_finite(rec.global, "global", epoch, step);
      require_finite(rec.time, "time", epoch, step);
      require_finite(rec.coupling, "coupling", epoch, step);
      require_finite(rec.total, "total", epoch, step);

      ad::Var objective =
          cfg.use_time_loss
              ? losses.total
              : ad::add(ad::add(losses.retrieval, losses.local),
                        ad::add(losses.global, losses.coupling));
      ad::backward(objective);
      opt.step(model.params(), lr, cfg.clip_norm);

      if (hooks.step_log) (*hooks.step_log) << step_record_json(rec) << "\n";
      result.log.push_back(rec);
    }
    if (hooks.on_epoch_end) hooks.on_epoch_end(epoch, result.log.back());
  }

  const std::uint64_t hash = hash_train_setup(model.config(), cfg);
  const std::string metrics =
      result.log.empty() ? std::string("{}") : step_record_json(result.log.back());
  result.final_checkpoint =
      capture_checkpoint(model, opt, static_cast<std::uint32_t>(cfg.epochs), hash, metrics);
  return result;
}

}  // namespace vprg
