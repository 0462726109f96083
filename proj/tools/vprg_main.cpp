#include <CLI11.hpp>

#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "vprg/data_io.hpp"
#include "vprg/errors.hpp"
#include "vprg/eval.hpp"
#include "vprg/model.hpp"
#include "vprg/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

double get_num(const std::map<std::string, std::string>& cfg, const std::string& key,
               double fallback) {
  auto it = cfg.find(key);
  return it == cfg.end() ? fallback : std::stod(it->second);
}

std::size_t get_count(const std::map<std::string, std::string>& cfg,
                      const std::string& key, std::size_t fallback) {
  auto it = cfg.find(key);
  return it == cfg.end() ? fallback : static_cast<std::size_t>(std::stoull(it->second));
}

bool get_flag(const std::map<std::string, std::string>& cfg, const std::string& key,
              bool fallback) {
  auto it = cfg.find(key);
  if (it == cfg.end()) return fallback;
  return it->second == "1" || it->second == "true" || it->second == "yes";
}

struct RunSetup {
  vprg::ModelConfig model;
  vprg::TrainConfig train;
  std::uint64_t model_seed = 0;
};

RunSetup setup_from_config(const vprg::Corpus& corpus,
                           const std::map<std::string, std::string>& cfg) {
  RunSetup s;
  s.model.vocab_size = corpus.vocab_size;
  s.model.video_width = corpus.feature_width;
  s.model.K = corpus.K;
  s.model.dim = get_count(cfg, "dim", 32);
  s.model.top_q = get_count(cfg, "top_q", 3);
  s.model.heads = get_count(cfg, "heads", 2);
  s.model.depth = get_count(cfg, "depth", 1);

  s.train.epochs = get_count(cfg, "epochs", 100);
  s.train.base_lr = get_num(cfg, "base_lr", 1e-4);
  s.train.decay_factor = get_num(cfg, "decay_factor", 0.8);
  s.train.decay_every = get_count(cfg, "decay_every", 20);
  if (s.train.decay_every > s.train.epochs) s.train.decay_every = s.train.epochs;
  s.train.batch_size = get_count(cfg, "batch_size", 8);
  s.train.clip_norm = get_num(cfg, "clip_norm", 10.0);
  s.train.seed = get_count(cfg, "seed", 1);
  s.train.use_time_loss = get_flag(cfg, "use_time_loss", true);
  s.model_seed = get_count(cfg, "model_seed", s.train.seed + 1);
  return s;
}

ordered_json setup_to_json(const RunSetup& s) {
  ordered_json doc;
  doc["model"] = {{"vocab_size", s.model.vocab_size},
                  {"video_width", s.model.video_width},
                  {"dim", s.model.dim},
                  {"K", s.model.K},
                  {"top_q", s.model.top_q},
                  {"heads", s.model.heads},
                  {"depth", s.model.depth}};
  doc["train"] = {{"epochs", s.train.epochs},
                  {"base_lr", s.train.base_lr},
                  {"decay_factor", s.train.decay_factor},
                  {"decay_every", s.train.decay_every},
                  {"batch_size", s.train.batch_size},
                  {"clip_norm", s.train.clip_norm},
                  {"seed", s.train.seed},
                  {"use_time_loss", s.train.use_time_loss}};
  doc["model_seed"] = s.model_seed;
  return doc;
}

RunSetup setup_from_json(const ordered_json& doc) {
  RunSetup s;
  const auto& m = doc.at("model");
  s.model.vocab_size = m.at("vocab_size").get<std::size_t>();
  s.model.video_width = m.at("video_width").get<std::size_t>();
  s.model.dim = m.at("dim").get<std::size_t>();
  s.model.K = m.at("K").get<std::size_t>();
  s.model.top_q = m.at("top_q").get<std::size_t>();
  s.model.heads = m.at("heads").get<std::size_t>();
  s.model.depth = m.at("depth").get<std::size_t>();
  const auto& t = doc.at("train");
  s.train.epochs = t.at("epochs").get<std::size_t>();
  s.train.base_lr = t.at("base_lr").get<double>();
  s.train.decay_factor = t.at("decay_factor").get<double>();
  s.train.decay_every = t.at("decay_every").get<std::size_t>();
  s.train.batch_size = t.at("batch_size").get<std::size_t>();
  s.train.clip_norm = t.at("clip_norm").get<double>();
  s.train.seed = t.at("seed").get<std::uint64_t>();
  s.train.use_time_loss = t.at("use_time_loss").get<bool>();
  s.model_seed = doc.at("model_seed").get<std::uint64_t>();
  return s;
}

int run_generate(const vprg::SyntheticSpec& spec, const std::string& out) {
  vprg::Corpus corpus = vprg::generate_synthetic_corpus(spec);
  vprg::save_corpus(out, corpus);
  std::cout << "wrote " << corpus.videos.size() << " videos (K=" << corpus.K
            << ", width=" << corpus.feature_width << ", vocab=" << corpus.vocab_size
            << ") to " << out << "\n";
  return 0;
}

int run_train(const std::string& corpus_dir, const std::string& config_path,
              const std::string& out_dir) {
  std::map<std::string, std::string> cfg;
  if (!config_path.empty()) cfg = vprg::read_config_file(config_path);
  vprg::apply_env_overrides(cfg);

  // Training mode drops the interval annotations at parse time.
  vprg::Corpus corpus = vprg::load_corpus(corpus_dir, true);
  RunSetup setup = setup_from_config(corpus, cfg);
  setup.model.validate();
  setup.train.validate();

  fs::create_directories(out_dir);
  std::ofstream log(fs::path(out_dir) / "train_log.jsonl", std::ios::trunc);
  if (!log) throw std::runtime_error("cannot write train_log.jsonl in " + out_dir);

  const vprg::Tensor* words =
      corpus.embeddings.numel() > 0 ? &corpus.embeddings : nullptr;
  vprg::DmrJrgModel model(setup.model, setup.model_seed, words);
  vprg::TrainHooks hooks;
  hooks.step_log = &log;
  hooks.on_epoch_end = [&](std::size_t epoch, const vprg::StepRecord& last) {
    if (epoch % 10 == 0 || epoch + 1 == setup.train.epochs)
      std::cout << "epoch " << epoch << " total " << last.total << "\n";
  };
  vprg::TrainResult result = vprg::train(model, corpus, setup.train, hooks);

  {
    std::ofstream mc(fs::path(out_dir) / "model_config.json", std::ios::trunc);
    if (!mc) throw std::runtime_error("cannot write model_config.json in " + out_dir);
    mc << setup_to_json(setup).dump(2) << "\n";
  }
  vprg::save_checkpoint((fs::path(out_dir) / "checkpoint.ckpt").string(),
                        result.final_checkpoint);
  std::cout << "final total " << result.log.back().total << " after "
            << result.final_checkpoint.step_count << " steps; checkpoint in " << out_dir
            << "\n";
  return 0;
}

RunSetup load_setup_beside(const std::string& checkpoint_path) {
  const fs::path side = fs::path(checkpoint_path).parent_path() / "model_config.json";
  std::ifstream in(side);
  if (!in)
    throw vprg::FormatError("missing " + side.string() + " next to the checkpoint", 0);
  try {
    return setup_from_json(ordered_json::parse(in));
  } catch (const nlohmann::json::exception& e) {
    throw vprg::ParseError(std::string("model_config.json: ") + e.what(), 0);
  }
}

vprg::DmrJrgModel restore_model(const std::string& checkpoint_path) {
  RunSetup setup = load_setup_beside(checkpoint_path);
  vprg::Checkpoint ckpt = vprg::load_checkpoint(checkpoint_path);
  const std::uint64_t expected = vprg::hash_train_setup(setup.model, setup.train);
  if (ckpt.config_hash != expected)
    throw vprg::FormatError("checkpoint does not match model_config.json", 0);
  vprg::DmrJrgModel model(setup.model, setup.model_seed);
  vprg::AdamOptimizer opt(model.params());
  vprg::restore_checkpoint(model, opt, ckpt);
  return model;
}

int run_eval(const std::string& checkpoint_path, const std::string& corpus_dir,
             const std::vector<std::size_t>& ks, const std::vector<double>& ious,
             const std::string& report_dir) {
  vprg::DmrJrgModel model = restore_model(checkpoint_path);
  vprg::Corpus corpus = vprg::load_corpus(corpus_dir, false);
  vprg::EvalReport report = vprg::evaluate_corpus(model, corpus, ks, ious);
  vprg::emit_report(report, report_dir);

  ordered_json run;
  run["corpus"] = corpus_dir;
  run["checkpoint"] = checkpoint_path;
  run["config_hash"] = vprg::load_checkpoint(checkpoint_path).config_hash;
  std::ofstream rj(fs::path(report_dir) / "run.json", std::ios::trunc);
  rj << run.dump(2) << "\n";

  std::cout << "rank-1 accuracy " << report.rank1_accuracy << " over "
            << report.paragraphs << " paragraphs\n";
  for (const vprg::GridValue& g : report.grid)
    std::cout << "R@" << g.spec.top_k << " IoU=" << g.spec.iou << " -> " << g.value
              << "\n";
  std::cout << "report written to " << report_dir << "\n";
  return 0;
}

int run_inspect(const std::string& checkpoint_path, const std::string& corpus_dir,
                const std::string& paragraph_id, std::string video_id,
                const std::string& out_dir) {
  vprg::DmrJrgModel model = restore_model(checkpoint_path);
  vprg::Corpus corpus = vprg::load_corpus(corpus_dir, false);

  const vprg::ParagraphRecord* para = nullptr;
  std::string home_video;
  for (const auto& v : corpus.videos)
    for (const auto& p : v.paragraphs)
      if (p.paragraph_id == paragraph_id) {
        para = &p;
        home_video = v.video_id;
      }
  if (!para)
    throw std::invalid_argument("paragraph " + paragraph_id + " not in the corpus");
  if (video_id.empty()) video_id = home_video;
  const vprg::CorpusRecord* video = nullptr;
  for (const auto& v : corpus.videos)
    if (v.video_id == video_id) video = &v;
  if (!video) throw std::invalid_argument("video " + video_id + " not in the corpus");

  vprg::ParagraphInput query{para->paragraph_id, para->sentences};
  vprg::VideoInput vin{video->video_id, video->duration, video->segments};
  std::vector<vprg::ScoreMap> maps = model.ground_maps(query, vin);
  vprg::GroundingPrediction pred = vprg::ground(query, vin, model);

  fs::create_directories(out_dir);
  for (std::size_t m = 0; m < maps.size(); ++m) {
    const fs::path path =
        fs::path(out_dir) / (paragraph_id + "_s" + std::to_string(m) + ".pgm");
    vprg::write_score_map_pgm(maps[m], path.string());
    std::cout << "sentence " << m << ": segments [" << pred.sentences[m].moment.start_segment
              << ", " << pred.sentences[m].moment.end_segment << "] time ["
              << pred.sentences[m].interval.t_start << ", "
              << pred.sentences[m].interval.t_end << ") map " << path.string() << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"video-paragraph retrieval and grounding toolkit"};
  app.require_subcommand(1);
  app.footer("Config file keys (train): epochs, base_lr, decay_factor, decay_every,\n"
             "batch_size, clip_norm, seed, use_time_loss, dim, top_q, heads, depth,\n"
             "model_seed. Environment variables VPRG_<KEY> override file values.");

  auto* gen = app.add_subcommand("generate", "write a synthetic planted-signal corpus");
  vprg::SyntheticSpec spec;
  std::string gen_out;
  gen->add_option("--videos", spec.videos, "number of videos");
  gen->add_option("--segments", spec.segments, "segments per video (map side)");
  gen->add_option("--sentences", spec.sentences, "sentences per paragraph");
  gen->add_option("--width", spec.feature_width, "segment feature width");
  gen->add_option("--words", spec.words_per_sentence, "tokens per sentence");
  gen->add_option("--negative-dims", spec.negative_dims, "inhibitory signature dims");
  gen->add_option("--snr", spec.snr, "signal amplitude over noise sigma");
  gen->add_option("--seed", spec.seed, "generator seed");
  gen->add_option("--out", gen_out, "output directory")->required();

  auto* train_cmd = app.add_subcommand("train", "optimize a model on a corpus");
  std::string train_corpus, train_config, train_out;
  train_cmd->add_option("--corpus", train_corpus, "corpus directory")->required();
  train_cmd->add_option("--config", train_config, "key = value config file");
  train_cmd->add_option("--out", train_out, "output directory")->required();

  auto* eval_cmd = app.add_subcommand("eval", "score retrieval and grounding");
  std::string eval_ckpt, eval_corpus, eval_report;
  std::vector<std::size_t> eval_ks = {10, 100};
  std::vector<double> eval_ious = {0.3, 0.5, 0.7};
  eval_cmd->add_option("--checkpoint", eval_ckpt, "trained checkpoint file")->required();
  eval_cmd->add_option("--corpus", eval_corpus, "corpus directory")->required();
  eval_cmd->add_option("--k", eval_ks, "retrieval depths")->delimiter(',');
  eval_cmd->add_option("--iou", eval_ious, "IoU thresholds")->delimiter(',');
  eval_cmd->add_option("--report", eval_report, "report directory")->required();

  auto* inspect_cmd = app.add_subcommand("inspect", "dump score maps for one query");
  std::string ins_ckpt, ins_corpus, ins_para, ins_video, ins_out;
  inspect_cmd->add_option("--checkpoint", ins_ckpt, "trained checkpoint file")->required();
  inspect_cmd->add_option("--corpus", ins_corpus, "corpus directory")->required();
  inspect_cmd->add_option("--paragraph", ins_para, "paragraph id")->required();
  inspect_cmd->add_option("--video", ins_video, "video id (defaults to the paragraph's)");
  inspect_cmd->add_option("--out", ins_out, "output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }

  try {
    if (gen->parsed()) return run_generate(spec, gen_out);
    if (train_cmd->parsed()) return run_train(train_corpus, train_config, train_out);
    if (eval_cmd->parsed())
      return run_eval(eval_ckpt, eval_corpus, eval_ks, eval_ious, eval_report);
    if (inspect_cmd->parsed())
      return run_inspect(ins_ckpt, ins_corpus, ins_para, ins_video, ins_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
