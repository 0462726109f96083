#include "vprg/data_io.hpp"

#include <algorithm>
#include <bit>
#include <cctype>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace vprg {

namespace fs = std::filesystem;
using nlohmann::json;

std::atomic<std::uint64_t> GtIntervals::accesses_{0};

namespace {

constexpr char kFeatureMagic[8] = {'V', 'P', 'R', 'G', 'F', 'E', 'A', 'T'};
constexpr std::uint32_t kFeatureVersion = 1;
constexpr std::size_t kHeaderBytes = 28;  // magic + version + rows + cols

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

std::uint32_t get_u32(const std::string& in, std::size_t off) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(in[off + i]);
  return v;
}

std::uint64_t get_u64(const std::string& in, std::size_t off) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(in[off + i]);
  return v;
}

std::string read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path, 0);
  std::ostringstream buf;
  buf << in.rdbuf();
  return std::move(buf).str();
}

std::string trim(const std::string& s) {
  std::size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

}  // namespace

Tensor FeatureMatrix::to_tensor() const {
  Tensor t = Tensor::zeros({static_cast<std::size_t>(rows), static_cast<std::size_t>(cols)});
  for (std::size_t i = 0; i < data.size(); ++i) t.data()[i] = static_cast<double>(data[i]);
  return t;
}

FeatureMatrix FeatureMatrix::from_tensor(const Tensor& t) {
  if (t.rank() != 2) throw std::invalid_argument("FeatureMatrix: rank-2 tensor required");
  FeatureMatrix m;
  m.rows = t.rows();
  m.cols = t.cols();
  m.data.resize(t.rows() * t.cols());
  for (std::size_t i = 0; i < m.data.size(); ++i)
    m.data[i] = static_cast<float>(t.data()[i]);
  return m;
}

void write_features(const std::string& path, const FeatureMatrix& m) {
  if (m.data.size() != m.rows * m.cols)
    throw std::invalid_argument("write_features: payload size mismatch");
  std::string out;
  out.reserve(kHeaderBytes + 4 * m.data.size());
  out.append(kFeatureMagic, sizeof(kFeatureMagic));
  put_u32(out, kFeatureVersion);
  put_u64(out, m.rows);
  put_u64(out, m.cols);
  for (float f : m.data) put_u32(out, std::bit_cast<std::uint32_t>(f));
  std::ofstream file(path, std::ios::binary | std::ios::trunc);
  if (!file) throw std::runtime_error("write_features: cannot open " + path);
  file.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!file) throw std::runtime_error("write_features: short write to " + path);
}

FeatureMatrix read_features(const std::string& path) {
  std::string bytes = read_file_bytes(path);
  if (bytes.size() < kHeaderBytes)
    throw FormatError("file shorter than the 28-byte header", bytes.size());
  if (std::memcmp(bytes.data(), kFeatureMagic, sizeof(kFeatureMagic)) != 0)
    throw FormatError("bad magic", 0);
  std::uint32_t version = get_u32(bytes, 8);
  if (version != kFeatureVersion)
    throw FormatError("unsupported version " + std::to_string(version), 8);
  FeatureMatrix m;
  m.rows = get_u64(bytes, 12);
  m.cols = get_u64(bytes, 20);
  if (m.rows > (1ull << 32) || m.cols > (1ull << 32) ||
      (m.cols != 0 && m.rows > (1ull << 40) / m.cols))
    throw FormatError("implausible matrix size", 12);
  std::size_t expected = kHeaderBytes + 4 * static_cast<std::size_t>(m.rows * m.cols);
  if (bytes.size() != expected)
    throw FormatError("expected " + std::to_string(expected) + " bytes, found " +
                          std::to_string(bytes.size()),
                      kHeaderBytes);
  m.data.resize(static_cast<std::size_t>(m.rows * m.cols));
  for (std::size_t i = 0; i < m.data.size(); ++i)
    m.data[i] = std::bit_cast<float>(get_u32(bytes, kHeaderBytes + 4 * i));
  return m;
}

namespace {

ParagraphRecord parse_annotation_line(const std::string& line, std::size_t line_no,
                                      bool redact_gt) {
  json obj;
  try {
    obj = json::parse(line);
  } catch (const json::parse_error& e) {
    throw ParseError(e.what(), line_no);
  }
  if (!obj.is_object()) throw ParseError("expected a JSON object", line_no);
  for (const char* field : {"video_id", "paragraph_id", "sentences"})
    if (!obj.contains(field))
      throw ParseError(std::string("missing field ") + field, line_no);
  if (!obj["video_id"].is_string() || !obj["paragraph_id"].is_string())
    throw ParseError("ids must be strings", line_no);

  ParagraphRecord rec;
  rec.video_id = obj["video_id"].get<std::string>();
  rec.paragraph_id = obj["paragraph_id"].get<std::string>();
  if (!obj["sentences"].is_array() || obj["sentences"].empty())
    throw ParseError("sentences must be a non-empty array", line_no);
  for (const auto& sent : obj["sentences"]) {
    if (!sent.is_array() || sent.empty())
      throw ParseError("each sentence must be a non-empty token array", line_no);
    std::vector<std::size_t> ids;
    for (const auto& tok : sent) {
      if (!tok.is_number_unsigned())
        throw ParseError("token ids must be unsigned integers", line_no);
      std::size_t id = tok.get<std::size_t>();
      if (id < 2) throw ParseError("token ids 0 and 1 are reserved", line_no);
      ids.push_back(id);
    }
    rec.sentences.push_back(std::move(ids));
  }
  if (obj.contains("gt_intervals")) {
    const auto& gt = obj["gt_intervals"];
    if (!gt.is_array()) throw ParseError("gt_intervals must be an array", line_no);
    if (gt.size() != rec.sentences.size())
      throw ParseError("gt_intervals length must match the sentence count", line_no);
    std::vector<TimeInterval> intervals;
    for (const auto& pair : gt) {
      if (!pair.is_array() || pair.size() != 2 || !pair[0].is_number() ||
          !pair[1].is_number())
        throw ParseError("each interval must be [t_start, t_end]", line_no);
      TimeInterval t{pair[0].get<double>(), pair[1].get<double>()};
      if (!(t.t_start <= t.t_end))
        throw ParseError("interval start must not exceed end", line_no);
      intervals.push_back(t);
    }
    if (!redact_gt) rec.gt = GtIntervals(std::move(intervals));
  }
  return rec;
}

}  // namespace

std::vector<ParagraphRecord> read_annotations(const std::string& path, bool redact_gt) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path, 0);
  std::vector<ParagraphRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    out.push_back(parse_annotation_line(line, line_no, redact_gt));
  }
  return out;
}

void write_annotations(const std::string& path,
                       const std::vector<ParagraphRecord>& records) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("write_annotations: cannot open " + path);
  for (const auto& rec : records) {
    json obj;
    obj["video_id"] = rec.video_id;
    obj["paragraph_id"] = rec.paragraph_id;
    obj["sentences"] = rec.sentences;
    if (rec.gt.present()) {
      json gt = json::array();
      for (const TimeInterval& t : rec.gt.values())
        gt.push_back({t.t_start, t.t_end});
      obj["gt_intervals"] = gt;
    }
    out << obj.dump() << "\n";
  }
  if (!out) throw std::runtime_error("write_annotations: short write to " + path);
}

void save_corpus(const std::string& dir, const Corpus& corpus) {
  fs::create_directories(fs::path(dir) / "features");
  json manifest;
  manifest["version"] = 1;
  manifest["K"] = corpus.K;
  manifest["feature_width"] = corpus.feature_width;
  manifest["vocab_size"] = corpus.vocab_size;
  if (corpus.embeddings.numel() > 0) {
    manifest["embeddings"] = "embeddings.feat";
    write_features((fs::path(dir) / "embeddings.feat").string(),
                   FeatureMatrix::from_tensor(corpus.embeddings));
  }
  manifest["videos"] = json::array();
  std::vector<ParagraphRecord> annotations;
  for (const CorpusRecord& video : corpus.videos) {
    json v;
    v["id"] = video.video_id;
    v["duration"] = video.duration;
    v["features"] = "features/" + video.video_id + ".feat";
    manifest["videos"].push_back(v);
    write_features((fs::path(dir) / "features" / (video.video_id + ".feat")).string(),
                   FeatureMatrix::from_tensor(video.segments));
    for (const ParagraphRecord& p : video.paragraphs) annotations.push_back(p);
  }
  std::ofstream mf((fs::path(dir) / "manifest.json").string(), std::ios::trunc);
  if (!mf) throw std::runtime_error("save_corpus: cannot write manifest");
  mf << manifest.dump(2) << "\n";
  write_annotations((fs::path(dir) / "annotations.jsonl").string(), annotations);
}

Corpus load_corpus(const std::string& dir, bool redact_gt) {
  std::string manifest_text = read_file_bytes((fs::path(dir) / "manifest.json").string());
  json manifest;
  try {
    manifest = json::parse(manifest_text);
  } catch (const json::parse_error& e) {
    throw ParseError(e.what(), 0);
  }
  for (const char* field : {"version", "K", "feature_width", "vocab_size", "videos"})
    if (!manifest.contains(field))
      throw ParseError(std::string("manifest missing ") + field, 0);
  if (manifest["version"].get<int>() != 1) throw ParseError("unsupported manifest version", 0);

  Corpus corpus;
  corpus.K = manifest["K"].get<std::size_t>();
  corpus.feature_width = manifest["feature_width"].get<std::size_t>();
  corpus.vocab_size = manifest["vocab_size"].get<std::size_t>();
  if (manifest.contains("embeddings")) {
    FeatureMatrix m =
        read_features((fs::path(dir) / manifest["embeddings"].get<std::string>()).string());
    if (m.rows != corpus.vocab_size || m.cols != corpus.feature_width)
      throw FormatError("embedding table does not match the manifest geometry", 12);
    corpus.embeddings = m.to_tensor();
  }

  std::map<std::string, std::size_t> index;
  for (const auto& v : manifest["videos"]) {
    CorpusRecord rec;
    rec.video_id = v["id"].get<std::string>();
    rec.duration = v["duration"].get<double>();
    FeatureMatrix m = read_features((fs::path(dir) / v["features"].get<std::string>()).string());
    if (m.rows != corpus.K || m.cols != corpus.feature_width)
      throw FormatError("feature matrix for " + rec.video_id +
                            " does not match the manifest geometry",
                        12);
    rec.segments = m.to_tensor();
    if (index.count(rec.video_id)) throw ParseError("duplicate video id " + rec.video_id, 0);
    index[rec.video_id] = corpus.videos.size();
    corpus.videos.push_back(std::move(rec));
  }

  auto annotations =
      read_annotations((fs::path(dir) / "annotations.jsonl").string(), redact_gt);
  for (auto& rec : annotations) {
    auto it = index.find(rec.video_id);
    if (it == index.end())
      throw ParseError("annotation references unknown video " + rec.video_id, 0);
    for (const auto& sent : rec.sentences)
      for (std::size_t id : sent)
        if (id >= corpus.vocab_size)
          throw ParseError("token id beyond the manifest vocabulary", 0);
    corpus.videos[it->second].paragraphs.push_back(std::move(rec));
  }
  return corpus;
}

void SyntheticSpec::validate() const {
  if (videos == 0) throw std::invalid_argument("SyntheticSpec: need at least one video");
  if (sentences == 0) throw std::invalid_argument("SyntheticSpec: need at least one sentence");
  if (segments < 2 * sentences)
    throw std::invalid_argument("SyntheticSpec: spans cannot fit the segment count");
  if (negative_dims == 0)
    throw std::invalid_argument("SyntheticSpec: need at least one negative signature dim");
  if (feature_width < segments + sentences * negative_dims)
    throw std::invalid_argument("SyntheticSpec: feature width too small for signatures");
  if (words_per_sentence == 0)
    throw std::invalid_argument("SyntheticSpec: need at least one word per sentence");
  if (!(snr > 0.0)) throw std::invalid_argument("SyntheticSpec: snr must be positive");
  if (!(embed_scale > 0.0))
    throw std::invalid_argument("SyntheticSpec: embed_scale must be positive");
  if (embed_contrast < 0.0)
    throw std::invalid_argument("SyntheticSpec: embed_contrast cannot be negative");
}

SyntheticPlan plan_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  SyntheticPlan plan;
  for (std::size_t b = 0; b < spec.videos; ++b) {
    // 2M distinct sorted cut points make M ordered, disjoint spans.
    std::vector<std::size_t> positions(spec.segments);
    for (std::size_t i = 0; i < positions.size(); ++i) positions[i] = i;
    for (std::size_t i = 0; i < 2 * spec.sentences; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, positions.size() - 1);
      std::swap(positions[i], positions[pick(rng)]);
    }
    std::vector<std::size_t> cuts(positions.begin(),
                                  positions.begin() + 2 * spec.sentences);
    std::sort(cuts.begin(), cuts.end());

    // One shuffled dim pool per video, carved sentence by sentence, keeps
    // every signature coordinate private to its sentence.
    std::vector<std::size_t> dims(spec.feature_width);
    for (std::size_t i = 0; i < dims.size(); ++i) dims[i] = i;
    for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, dims.size() - 1);
      std::swap(dims[i], dims[pick(rng)]);
    }
    std::size_t cursor = 0;

    std::vector<PlantedSentence> sentences;
    for (std::size_t m = 0; m < spec.sentences; ++m) {
      PlantedSentence s;
      s.span = MomentIndex{cuts[2 * m], cuts[2 * m + 1]};
      std::size_t len = s.span.end_segment - s.span.start_segment + 1;

      std::vector<std::size_t> positives(dims.begin() + cursor,
                                         dims.begin() + cursor + len);
      cursor += len;
      s.signature = Tensor::zeros({1, spec.feature_width});
      for (std::size_t c : positives) s.signature.at(0, c) = 1.0;
      for (std::size_t i = 0; i < spec.negative_dims; ++i)
        s.signature.at(0, dims[cursor + i]) = -1.0;
      cursor += spec.negative_dims;

      // Words name the positive signature dims: id 2 + dim. Shuffle the
      // order, then cycle so every dim is spoken when the sentence is long
      // enough to fit them all.
      for (std::size_t i = 0; i + 1 < positives.size(); ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, positives.size() - 1);
        std::swap(positives[i], positives[pick(rng)]);
      }
      for (std::size_t w = 0; w < spec.words_per_sentence; ++w)
        s.token_ids.push_back(2 + positives[w % positives.size()]);
      sentences.push_back(std::move(s));
    }
    plan.by_video.push_back(std::move(sentences));
  }

  // Word vectors double as the pretrained embedding table: each word points
  // along its feature dim and slightly away from all the others, so text and
  // video live in one coordinate system from the start.
  plan.vocab_size = 2 + spec.feature_width;
  plan.embeddings = Tensor::zeros({plan.vocab_size, spec.feature_width});
  std::normal_distribution<double> jitter(0.0, 0.01);
  for (std::size_t c = 0; c < spec.feature_width; ++c)
    plan.embeddings.at(1, c) = jitter(rng);
  const double off =
      spec.embed_scale * spec.embed_contrast / static_cast<double>(spec.feature_width);
  for (std::size_t c = 0; c < spec.feature_width; ++c)
    for (std::size_t c2 = 0; c2 < spec.feature_width; ++c2)
      plan.embeddings.at(2 + c, c2) =
          (c == c2 ? spec.embed_scale : 0.0) - off + jitter(rng);
  return plan;
}

Corpus generate_synthetic_corpus(const SyntheticSpec& spec) {
  SyntheticPlan plan = plan_synthetic(spec);
  std::mt19937_64 noise_rng(spec.seed ^ 0x9e3779b97f4a7c15ull);
  std::normal_distribution<double> noise(0.0, 1.0 / spec.snr);

  Corpus corpus;
  corpus.K = spec.segments;
  corpus.feature_width = spec.feature_width;
  corpus.vocab_size = plan.vocab_size;
  corpus.embeddings = FeatureMatrix::from_tensor(plan.embeddings).to_tensor();
  for (std::size_t b = 0; b < spec.videos; ++b) {
    CorpusRecord video;
    video.video_id = "v" + std::to_string(b);
    video.duration = static_cast<double>(spec.segments);
    video.segments = Tensor::zeros({spec.segments, spec.feature_width});
    for (std::size_t r = 0; r < spec.segments; ++r)
      for (std::size_t c = 0; c < spec.feature_width; ++c)
        video.segments.at(r, c) = noise(noise_rng);

    ParagraphRecord para;
    para.video_id = video.video_id;
    para.paragraph_id = "p" + std::to_string(b);
    std::vector<TimeInterval> gt;
    for (const PlantedSentence& s : plan.by_video[b]) {
      // Each positive signature coordinate lives on exactly one span row, so
      // only the full span max-pools every coordinate; the negative ones sit
      // on all span rows and punish any cell that leaks outside.
      std::size_t row = s.span.start_segment;
      for (std::size_t c = 0; c < spec.feature_width; ++c) {
        if (s.signature.at(0, c) > 0.0)
          video.segments.at(row++, c) += 1.0;
        else if (s.signature.at(0, c) < 0.0)
          for (std::size_t r = s.span.start_segment; r <= s.span.end_segment; ++r)
            video.segments.at(r, c) += -1.0;
      }
      para.sentences.push_back(s.token_ids);
      gt.push_back(moment_to_interval(s.span, spec.segments, video.duration));
    }
    para.gt = GtIntervals(std::move(gt));
    video.paragraphs.push_back(std::move(para));

    // Quantize to the on-disk precision so saving and reloading changes
    // nothing downstream.
    video.segments = FeatureMatrix::from_tensor(video.segments).to_tensor();
    corpus.videos.push_back(std::move(video));
  }
  return corpus;
}

std::map<std::string, std::string> read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path, 0);
  std::map<std::string, std::string> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    std::string stripped = trim(line);
    if (stripped.empty()) continue;
    std::size_t eq = stripped.find('=');
    if (eq == std::string::npos)
      throw ParseError("expected key = value", line_no);
    std::string key = trim(stripped.substr(0, eq));
    std::string value = trim(stripped.substr(eq + 1));
    if (key.empty()) throw ParseError("empty key", line_no);
    out[key] = value;
  }
  return out;
}

void apply_env_overrides(std::map<std::string, std::string>& config,
                         const std::string& prefix) {
  for (auto& [key, value] : config) {
    std::string name = prefix;
    for (char c : key) name.push_back(static_cast<char>(std::toupper(
        static_cast<unsigned char>(c))));
    if (const char* env = std::getenv(name.c_str())) value = env;
  }
}

}  // namespace vprg
