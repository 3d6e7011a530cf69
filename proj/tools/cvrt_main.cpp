#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cvrt/encoder.hpp"
#include "cvrt/errors.hpp"
#include "cvrt/eval.hpp"
#include "cvrt/intent.hpp"
#include "cvrt/model.hpp"
#include "cvrt/multi_context.hpp"
#include "cvrt/objective.hpp"
#include "cvrt/serialize.hpp"
#include "cvrt/tape.hpp"
#include "cvrt/tokenizer.hpp"
#include "cvrt/trainer.hpp"

using json = nlohmann::json;
using namespace cvrt;

namespace {

struct ArchFlags {
  int embed_dim = 512;
  int num_blocks = 6;
  int qk_dim = 64;
  int ff1_dim = 2048;
  int ff2_layers = 3;
  int out_dim = 512;
  int max_seq_len = 60;
  int reduction_heads = 2;
  int attention_heads = 1;
  std::vector<int> caps;
  bool relative_bias = true;
  bool ff2_skip = true;
  bool multi_context = false;
};

void add_arch_flags(CLI::App* sub, ArchFlags& a) {
  sub->add_option("--embed-dim", a.embed_dim, "Subword embedding width");
  sub->add_option("--num-blocks", a.num_blocks, "Transformer block count");
  sub->add_option("--qk-dim", a.qk_dim, "Attention projection width");
  sub->add_option("--ff1-dim", a.ff1_dim, "Feed-forward hidden width inside blocks");
  sub->add_option("--ff2-layers", a.ff2_layers, "Projection head depth");
  sub->add_option("--out-dim", a.out_dim, "Final encoding width");
  sub->add_option("--max-seq-len", a.max_seq_len, "Token truncation length");
  sub->add_option("--reduction-heads", a.reduction_heads, "Sqrt-N reduction heads");
  sub->add_option("--attention-heads", a.attention_heads, "Self-attention heads");
  sub->add_option("--caps", a.caps, "Per-block relative attention caps")
      ->delimiter(',');
  sub->add_flag("--relative-bias,!--no-relative-bias", a.relative_bias,
                "Learned relative position bias");
  sub->add_flag("--ff2-skip,!--no-ff2-skip", a.ff2_skip,
                "Residual connections in the projection head");
  sub->add_flag("--multi-context", a.multi_context,
                "Create the extra-context projection head");
}

ModelConfig arch_to_config(const ArchFlags& a, const SubwordVocab& vocab) {
  ModelConfig cfg;
  cfg.vocab_size = vocab.size();
  cfg.oov_buckets = vocab.oov_buckets;
  cfg.embed_dim = a.embed_dim;
  cfg.num_blocks = a.num_blocks;
  cfg.qk_dim = a.qk_dim;
  cfg.ff1_dim = a.ff1_dim;
  cfg.ff2_layers = a.ff2_layers;
  cfg.out_dim = a.out_dim;
  cfg.max_seq_len = a.max_seq_len;
  cfg.reduction_heads = a.reduction_heads;
  cfg.attention_heads = a.attention_heads;
  cfg.relative_caps = a.caps.empty() ? default_caps(a.num_blocks) : a.caps;
  cfg.use_relative_bias = a.relative_bias;
  cfg.ff2_skip = a.ff2_skip;
  cfg.multi_context = a.multi_context;
  cfg.validate();
  return cfg;
}

LoadedModel load_checked(const std::string& model_path, const std::string& vocab_path) {
  return load_model(model_path, sha256_file(vocab_path));
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

// ---- build-vocab ----

struct BuildVocabFlags {
  std::string corpus, out;
  bool raw_text = false;
  VocabConfig vc;
};

void run_build_vocab(const BuildVocabFlags& f) {
  std::ifstream in(f.corpus);
  if (!in) throw DataError("cannot read corpus " + f.corpus);

  std::stringstream text;
  if (f.raw_text) {
    text << in.rdbuf();
  } else {
    std::string line;
    int64_t skipped = 0;
    while (std::getline(in, line)) {
      json j = json::parse(line, nullptr, false);
      if (!j.is_object() || !j.contains("context") || !j["context"].is_string() ||
          !j.contains("response") || !j["response"].is_string()) {
        ++skipped;
        continue;
      }
      text << j["context"].get<std::string>() << '\n'
           << j["response"].get<std::string>() << '\n';
      if (j.contains("extra_contexts") && j["extra_contexts"].is_array())
        for (const auto& t : j["extra_contexts"])
          if (t.is_string()) text << t.get<std::string>() << '\n';
    }
    if (skipped > 0) std::cerr << "build-vocab: skipped " << skipped << " records\n";
  }

  SubwordVocab vocab = build_vocab(text, f.vc);
  save_vocab(vocab, f.out);
  json out;
  out["subwords"] = vocab.size();
  out["oov_buckets"] = vocab.oov_buckets;
  out["total_ids"] = vocab.total_ids();
  std::cout << out.dump() << "\n";
}

// ---- train / finetune ----

struct TrainFlags {
  std::string corpus, vocab, out, metrics, resume, eval_file;
  TrainConfig tc;
  uint64_t init_seed = 1;
  int checkpoint_period = 0;
  int log_period = 1;
  int eval_period = 0;
  int eval_n = 0;
  bool eval_multi = false;
};

void add_train_flags(CLI::App* sub, TrainFlags& f, bool finetune) {
  sub->add_option("--corpus", f.corpus, "Training pairs, newline-delimited JSON")
      ->required();
  sub->add_option("--vocab", f.vocab, "Vocabulary file")->required();
  sub->add_option("--out", f.out, "Model checkpoint path")->required();
  sub->add_option("--metrics", f.metrics, "Metrics log path (newline-delimited JSON)");
  sub->add_option("--max-steps", f.tc.max_steps, "Total optimizer steps")->required();
  sub->add_option("--batch-size", f.tc.batch_size, "In-batch negatives K");
  sub->add_option("--lr-start", f.tc.lr_start, "Initial learning rate");
  sub->add_option("--lr-end", f.tc.lr_end, "Final learning rate");
  sub->add_option("--rho", f.tc.rho, "ADADELTA decay");
  sub->add_option("--l2-reg", f.tc.l2_reg, "L2 regularization strength");
  sub->add_option("--embed-grad-clip", f.tc.embed_grad_clip,
                  "Embedding gradient norm cap");
  sub->add_option("--smoothing", f.tc.smoothing, "Label smoothing mass");
  sub->add_option("--dropout", f.tc.dropout, "Dropout after embedding and attention");
  sub->add_option("--anneal-steps", f.tc.anneal_steps, "Score scale annealing steps");
  sub->add_option("--loss-scale", f.tc.loss_scale, "Fixed loss scaling factor");
  sub->add_option("--range-update-period", f.tc.range_update_period,
                  "Steps between quantization range refreshes");
  sub->add_option("--max-skip-streak", f.tc.max_skip_streak,
                  "Consecutive non-finite steps tolerated");
  sub->add_flag("--quantized,!--no-quantized", f.tc.quantized,
                "Quantization-aware training");
  sub->add_flag("--multi", f.tc.multi, "Multi-context objective");
  sub->add_flag("--digit-prefixes,!--no-digit-prefixes", f.tc.digit_prefixes,
                "Distance digits in the extra-context string");
  sub->add_option("--seed", f.tc.seed, "Shuffling/dropout seed");
  sub->add_option("--init-seed", f.init_seed, "Parameter init seed");
  sub->add_option("--checkpoint-period", f.checkpoint_period,
                  "Steps between checkpoint rewrites (0: final only)");
  sub->add_option("--log-period", f.log_period, "Steps between metrics lines");
  sub->add_option("--eval-file", f.eval_file, "Validation instances for periodic R_N@1");
  sub->add_option("--eval-period", f.eval_period,
                  "Steps between validation passes (0: off)");
  sub->add_option("--eval-n", f.eval_n, "Validation pool size (0: from file)");
  sub->add_flag("--eval-multi", f.eval_multi, "Validate with combined-context encodings");
  if (finetune) {
    sub->add_option("--model", f.resume, "Checkpoint to fine-tune from")->required();
  } else {
    sub->add_option("--resume", f.resume, "Checkpoint to continue from");
  }
}

void run_train(const TrainFlags& f, const ArchFlags* arch) {
  SubwordVocab vocab = load_vocab(f.vocab);
  Digest digest = sha256_file(f.vocab);

  Model model;
  if (!f.resume.empty()) {
    model = load_checked(f.resume, f.vocab).model;
  } else {
    model = init_model(arch_to_config(*arch, vocab), f.init_seed);
  }
  if (f.tc.multi && !model.cfg.multi_context)
    throw DataError("--multi needs a model built with --multi-context");

  CorpusStats stats;
  auto data = load_corpus(f.corpus, vocab, model.cfg.max_seq_len, f.tc.multi,
                          f.tc.digit_prefixes, &stats);
  if (stats.skipped > 0)
    std::cerr << "train: skipped " << stats.skipped << " records\n";

  std::vector<EvalInstance> val;
  if (!f.eval_file.empty()) val = load_eval_file(f.eval_file);

  std::ofstream metrics;
  if (!f.metrics.empty()) {
    metrics.open(f.metrics, std::ios::trunc);
    if (!metrics) throw DataError("cannot write metrics log " + f.metrics);
  }

  EvalOptions val_opt;
  val_opt.multi = f.eval_multi;
  val_opt.digit_prefixes = f.tc.digit_prefixes;
  val_opt.quantized = f.tc.quantized;
  val_opt.expected_n = f.eval_n;

  Trainer trainer(model, f.tc);
  double last_loss = 0.0;
  auto on_step = [&](const StepInfo& info) {
    last_loss = info.loss;
    if (metrics.is_open() &&
        (info.skipped || f.log_period <= 0 || info.step % f.log_period == 0)) {
      json line;
      line["step"] = info.step;
      line["loss"] = info.loss;
      line["loss_x"] = info.loss_x;
      if (f.tc.multi) {
        line["loss_z"] = info.loss_z;
        line["loss_xz"] = info.loss_xz;
      }
      line["lr"] = info.lr;
      line["scale_c"] = info.scale_c;
      line["skips"] = info.total_skips;
      metrics << line.dump() << "\n";
    }
    if (!val.empty() && f.eval_period > 0 && !info.skipped &&
        info.step % f.eval_period == 0) {
      auto ranks = evaluate_ranks(model, vocab, val, val_opt);
      json line;
      line["step"] = info.step;
      line["validation_recall_at_1"] = recall_at_k(ranks, 1);
      line["validation_mrr"] = mean_reciprocal_rank(ranks);
      if (metrics.is_open()) metrics << line.dump() << "\n";
      std::cerr << "step " << info.step
                << " validation R@1 " << recall_at_k(ranks, 1) << "\n";
    }
    return true;
  };
  auto on_checkpoint = [&](int64_t) { save_model(model, digest, f.out); };

  trainer.run(data, on_step, f.checkpoint_period, on_checkpoint);
  save_model(model, digest, f.out);

  json out;
  out["trained_steps"] = model.cfg.trained_steps;
  out["records"] = stats.kept;
  out["skipped_records"] = stats.skipped;
  out["final_loss"] = last_loss;
  out["checkpoint"] = f.out;
  std::cout << out.dump() << "\n";
}

// ---- encode ----

struct EncodeFlags {
  std::string model, vocab, in, out = "-";
  std::string repr = "h";
  std::string side = "input";
  bool quantized = true;
};

void run_encode(const EncodeFlags& f) {
  LoadedModel lm = load_checked(f.model, f.vocab);
  SubwordVocab vocab = load_vocab(f.vocab);

  Side side = Side::input;
  if (f.side == "response") side = Side::response;
  if (f.side == "extra") {
    if (!lm.model.cfg.multi_context)
      throw DataError("--side extra needs a multi-context model");
    side = Side::extra_context;
  }

  std::vector<std::string> lines = read_lines(f.in);
  std::ofstream file_out;
  if (f.out != "-") {
    file_out.open(f.out, std::ios::trunc);
    if (!file_out) throw DataError("cannot write " + f.out);
  }
  std::ostream& out = f.out == "-" ? std::cout : file_out;

  const size_t chunk = 32;
  for (size_t base = 0; base < lines.size(); base += chunk) {
    size_t end = std::min(lines.size(), base + chunk);
    std::vector<std::vector<int>> seqs;
    for (size_t i = base; i < end; ++i)
      seqs.push_back(tokenize(lines[i], vocab, lm.model.cfg.max_seq_len));

    Tape tape(f.quantized);
    Forward fwd(lm.model, tape, {f.quantized, false, 0.0, nullptr});
    Tape::NodeId node = fwd.encode_r(seqs);
    if (f.repr == "h") node = fwd.project(node, side);
    const Tensor& enc = tape.val(node);

    for (int r = 0; r < enc.rows; ++r) {
      json line;
      std::vector<double> row(enc.cols);
      for (int c = 0; c < enc.cols; ++c) row[c] = enc.at(r, c);
      line["embedding"] = row;
      out << line.dump() << "\n";
    }
  }
}

// ---- rank ----

struct RankFlags {
  std::string model, vocab, context, candidates;
  std::vector<std::string> extra;  // oldest first
  bool multi = false;
  bool digit_prefixes = false;
  bool quantized = true;
};

void run_rank(const RankFlags& f) {
  LoadedModel lm = load_checked(f.model, f.vocab);
  SubwordVocab vocab = load_vocab(f.vocab);
  if (f.multi && !lm.model.cfg.multi_context)
    throw DataError("--multi needs a multi-context model");

  std::vector<std::string> cands = read_lines(f.candidates);
  if (cands.empty()) throw DataError("no candidates in " + f.candidates);

  Tape tape(f.quantized);
  Forward fwd(lm.model, tape, {f.quantized, false, 0.0, nullptr});
  Tape::NodeId h_ctx = fwd.encode_h(
      {tokenize(f.context, vocab, lm.model.cfg.max_seq_len)}, Side::input);
  if (f.multi) {
    Tape::NodeId h_z = fwd.encode_h(
        {tokenize(build_extra_context(f.extra, f.digit_prefixes), vocab,
                  lm.model.cfg.max_seq_len)},
        Side::extra_context);
    h_ctx = combine_contexts(tape, h_ctx, h_z);
  }
  std::vector<std::vector<int>> cand_seqs;
  for (const std::string& c : cands)
    cand_seqs.push_back(tokenize(c, vocab, lm.model.cfg.max_seq_len));
  Tape::NodeId h_cand = fwd.encode_h(cand_seqs, Side::response);

  const Tensor& hc = tape.val(h_ctx);
  const Tensor& hy = tape.val(h_cand);
  std::vector<int> order = rank_responses(hc, hy);
  for (size_t pos = 0; pos < order.size(); ++pos) {
    int idx = order[pos];
    double cosine = 0.0;
    for (int c = 0; c < hy.cols; ++c) cosine += hc.v[c] * hy.at(idx, c);
    std::cout << pos + 1 << "\t" << idx << "\t" << cosine << "\t" << cands[idx]
              << "\n";
  }
}

// ---- eval ----

struct EvalFlags {
  std::string model, vocab, eval_file;
  int k = 1;
  int n = 0;
  bool multi = false;
  bool digit_prefixes = false;
  bool quantized = true;
  bool tie_heads = false;
};

void run_eval(const EvalFlags& f) {
  LoadedModel lm = load_checked(f.model, f.vocab);
  SubwordVocab vocab = load_vocab(f.vocab);

  if (f.tie_heads) {
    for (const Param& p : lm.model.params.params) {
      if (p.name.rfind("input.", 0) != 0) continue;
      std::string mirror = "response." + p.name.substr(6);
      if (lm.model.params.has(mirror))
        lm.model.params.at(mirror).shadow = p.shadow;
    }
  }

  CorpusStats stats;
  auto instances = load_eval_file(f.eval_file, &stats);
  EvalOptions opt;
  opt.multi = f.multi;
  opt.digit_prefixes = f.digit_prefixes;
  opt.quantized = f.quantized;
  opt.expected_n = f.n;
  auto ranks = evaluate_ranks(lm.model, vocab, instances, opt);

  json out;
  out["instances"] = ranks.size();
  out["n"] = f.n > 0 ? f.n : static_cast<int>(instances[0].candidates.size());
  out["k"] = f.k;
  out["recall_at_k"] = recall_at_k(ranks, f.k);
  out["mrr"] = mean_reciprocal_rank(ranks);
  out["skipped_records"] = stats.skipped;
  std::cout << out.dump() << "\n";
}

// ---- intent ----

struct IntentTrainFlags {
  std::string model, vocab, data, out;
  IntentTrainOptions opt;
};

void run_intent_train(const IntentTrainFlags& f) {
  LoadedModel lm = load_checked(f.model, f.vocab);
  SubwordVocab vocab = load_vocab(f.vocab);

  CorpusStats stats;
  auto data = load_intent_file(f.data, &stats);
  if (stats.skipped > 0)
    std::cerr << "intent-train: skipped " << stats.skipped << " records\n";

  IntentReport report;
  IntentClassifier clf = train_intent_classifier(lm.model, vocab, data, f.opt, &report);

  std::ofstream out(f.out, std::ios::trunc);
  if (!out) throw DataError("cannot write " + f.out);
  out << clf.to_json() << "\n";

  json j;
  j["classes"] = clf.labels.size();
  j["train"] = report.n_train;
  j["dev"] = report.n_dev;
  j["test"] = report.n_test;
  j["best_dev_accuracy"] = report.best_dev_accuracy;
  j["test_accuracy"] = report.test_accuracy;
  j["hidden"] = report.best_hidden;
  j["dropout"] = report.best_dropout;
  j["lr"] = report.best_lr;
  j["classifier"] = f.out;
  std::cout << j.dump() << "\n";
}

struct IntentEvalFlags {
  std::string model, vocab, classifier, data, text;
  bool text_given = false;
  bool quantized = true;
};

void run_intent_eval(const IntentEvalFlags& f) {
  LoadedModel lm = load_checked(f.model, f.vocab);
  SubwordVocab vocab = load_vocab(f.vocab);

  std::ifstream clf_in(f.classifier);
  if (!clf_in) throw DataError("cannot read classifier " + f.classifier);
  std::stringstream buf;
  buf << clf_in.rdbuf();
  IntentClassifier clf = IntentClassifier::from_json(buf.str());
  if (clf.w1.rows != lm.model.cfg.r_dim())
    throw DataError("classifier feature width does not match the model");

  if (f.text_given) {
    Tensor features = extract_features(lm.model, vocab, {f.text}, f.quantized);
    auto [label, probs] = classify(clf, features, 0);
    json out;
    out["label"] = clf.labels[label];
    json pj;
    for (size_t i = 0; i < probs.size(); ++i) pj[clf.labels[i]] = probs[i];
    out["probabilities"] = pj;
    std::cout << out.dump() << "\n";
    return;
  }

  CorpusStats stats;
  auto data = load_intent_file(f.data, &stats);
  std::vector<std::string> texts;
  std::vector<int> label_ids;
  for (const IntentExample& ex : data) {
    auto it = std::find(clf.labels.begin(), clf.labels.end(), ex.label);
    if (it == clf.labels.end())
      throw DataError("label '" + ex.label + "' unknown to the classifier");
    texts.push_back(ex.text);
    label_ids.push_back(static_cast<int>(it - clf.labels.begin()));
  }
  Tensor features = extract_features(lm.model, vocab, texts, f.quantized);
  json out;
  out["examples"] = data.size();
  out["accuracy"] = intent_accuracy(clf, features, label_ids);
  out["skipped_records"] = stats.skipped;
  std::cout << out.dump() << "\n";
}

// ---- inspect-model ----

void run_inspect(const std::string& path) {
  LoadedModel lm = load_model(path);
  int64_t embed_params = lm.model.params.count(Precision::embed8);
  int64_t net_params = lm.model.params.count(Precision::param16);
  auto file_bytes = static_cast<int64_t>(std::filesystem::file_size(path));

  json out;
  out["version"] = kModelFormatVersion;
  out["vocab_digest"] = hex_digest(lm.vocab_digest);
  out["config"] = json::parse(lm.model.cfg.to_json());
  out["tensors"] = lm.model.params.params.size();
  out["embedding_params"] = embed_params;
  out["network_params"] = net_params;
  out["embedding_bytes"] = embed_params;      // 1 byte per code
  out["network_bytes"] = 2 * net_params;      // binary16
  out["metadata_bytes"] = file_bytes - embed_params - 2 * net_params;
  out["file_bytes"] = file_bytes;
  std::cout << out.dump(2) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Compact dual-encoder response selection engine"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  app.set_config("--config", "",
                 "INI/TOML file with [subcommand] sections; flags win over file values");

  auto bv = std::make_shared<BuildVocabFlags>();
  auto* bv_cmd = app.add_subcommand("build-vocab", "Induce a subword vocabulary");
  bv_cmd->fallthrough();
  bv_cmd->add_option("--corpus", bv->corpus, "Training pairs or raw text")->required();
  bv_cmd->add_option("--out", bv->out, "Vocabulary file to write")->required();
  bv_cmd->add_flag("--raw-text", bv->raw_text, "Corpus is plain text, one document per line");
  bv_cmd->add_option("--min-frequency", bv->vc.min_frequency, "Subword count threshold");
  bv_cmd->add_option("--max-subword-chars", bv->vc.max_subword_chars, "Subword length cap");
  bv_cmd->add_option("--max-consecutive-digits", bv->vc.max_consecutive_digits,
                     "Digit run cap inside subwords");
  bv_cmd->add_option("--iterations", bv->vc.iterations, "Induction passes");
  bv_cmd->add_option("--oov-buckets", bv->vc.oov_buckets, "Hash buckets for unknown pieces");
  bv_cmd->callback([bv] { run_build_vocab(*bv); });

  auto tr = std::make_shared<TrainFlags>();
  auto tr_arch = std::make_shared<ArchFlags>();
  auto* tr_cmd = app.add_subcommand("train", "Pretrain on response selection");
  tr_cmd->fallthrough();
  add_train_flags(tr_cmd, *tr, false);
  add_arch_flags(tr_cmd, *tr_arch);
  tr_cmd->callback([tr, tr_arch] { run_train(*tr, tr_arch.get()); });

  auto ft = std::make_shared<TrainFlags>();
  ft->tc.batch_size = 256;
  ft->tc.lr_start = 0.1;
  ft->tc.lr_end = 0.0001;
  ft->tc.dropout = 0.2;
  ft->tc.digit_prefixes = true;
  ft->tc.max_steps = 60000;
  auto* ft_cmd = app.add_subcommand("finetune", "Continue training on target-domain pairs");
  ft_cmd->fallthrough();
  add_train_flags(ft_cmd, *ft, true);
  ft_cmd->callback([ft] { run_train(*ft, nullptr); });

  auto en = std::make_shared<EncodeFlags>();
  auto* en_cmd = app.add_subcommand("encode", "Emit encodings for texts, one per line");
  en_cmd->fallthrough();
  en_cmd->add_option("--model", en->model, "Model file")->required();
  en_cmd->add_option("--vocab", en->vocab, "Vocabulary file")->required();
  en_cmd->add_option("--in", en->in, "Input texts, one per line")->required();
  en_cmd->add_option("--out", en->out, "Output path ('-' for stdout)");
  en_cmd->add_option("--repr", en->repr, "Representation to emit")
      ->check(CLI::IsMember({"h", "r"}));
  en_cmd->add_option("--side", en->side, "Projection head for h")
      ->check(CLI::IsMember({"input", "response", "extra"}));
  en_cmd->add_flag("--quantized,!--no-quantized", en->quantized, "Quantized rendering");
  en_cmd->callback([en] { run_encode(*en); });

  auto rk = std::make_shared<RankFlags>();
  auto* rk_cmd = app.add_subcommand("rank", "Rank candidate responses for one context");
  rk_cmd->fallthrough();
  rk_cmd->add_option("--model", rk->model, "Model file")->required();
  rk_cmd->add_option("--vocab", rk->vocab, "Vocabulary file")->required();
  rk_cmd->add_option("--context", rk->context, "Immediate context text")->required();
  rk_cmd->add_option("--candidates", rk->candidates, "Candidate file, one per line")
      ->required();
  rk_cmd->add_option("--extra-context", rk->extra,
                     "Earlier turns, oldest first (repeatable)");
  rk_cmd->add_flag("--multi", rk->multi, "Rank with combined-context encodings");
  rk_cmd->add_flag("--digit-prefixes", rk->digit_prefixes,
                   "Distance digits in the extra-context string");
  rk_cmd->add_flag("--quantized,!--no-quantized", rk->quantized, "Quantized rendering");
  rk_cmd->callback([rk] { run_rank(*rk); });

  auto ev = std::make_shared<EvalFlags>();
  auto* ev_cmd = app.add_subcommand("eval", "Ranked-retrieval metrics over instances");
  ev_cmd->fallthrough();
  ev_cmd->add_option("--model", ev->model, "Model file")->required();
  ev_cmd->add_option("--vocab", ev->vocab, "Vocabulary file")->required();
  ev_cmd->add_option("--eval-file", ev->eval_file, "Evaluation instances")->required();
  ev_cmd->add_option("--k", ev->k, "Recall cutoff");
  ev_cmd->add_option("--n", ev->n, "Expected pool size (0: from file)");
  ev_cmd->add_flag("--multi", ev->multi, "Use combined-context encodings");
  ev_cmd->add_flag("--digit-prefixes", ev->digit_prefixes,
                   "Distance digits in the extra-context string");
  ev_cmd->add_flag("--quantized,!--no-quantized", ev->quantized, "Quantized rendering");
  ev_cmd->add_flag("--debug-tie-heads", ev->tie_heads,
                   "Copy the input head onto the response head (debug)");
  ev_cmd->callback([ev] { run_eval(*ev); });

  auto it = std::make_shared<IntentTrainFlags>();
  auto* it_cmd = app.add_subcommand("intent-train",
                                    "Fit the transfer classifier on frozen encodings");
  it_cmd->fallthrough();
  it_cmd->add_option("--model", it->model, "Model file")->required();
  it_cmd->add_option("--vocab", it->vocab, "Vocabulary file")->required();
  it_cmd->add_option("--data", it->data, "Labeled utterances")->required();
  it_cmd->add_option("--out", it->out, "Classifier JSON to write")->required();
  it_cmd->add_option("--batch-size", it->opt.batch_size, "SGD minibatch size");
  it_cmd->add_option("--max-epochs", it->opt.max_epochs, "Epoch cap per grid point");
  it_cmd->add_option("--patience", it->opt.patience,
                     "Epochs without dev improvement before stopping");
  it_cmd->add_option("--seed", it->opt.seed, "Split/init/shuffle seed");
  it_cmd->add_option("--hidden-grid", it->opt.hidden_grid, "Hidden sizes to search")
      ->delimiter(',');
  it_cmd->add_option("--dropout-grid", it->opt.dropout_grid, "Dropout rates to search")
      ->delimiter(',');
  it_cmd->add_option("--lr-grid", it->opt.lr_grid, "Learning rates to search")
      ->delimiter(',');
  it_cmd->add_flag("--quantized,!--no-quantized", it->opt.quantized,
                   "Quantized feature extraction");
  it_cmd->callback([it] { run_intent_train(*it); });

  auto ie = std::make_shared<IntentEvalFlags>();
  auto* ie_cmd = app.add_subcommand("intent-eval",
                                    "Score the transfer classifier or classify one text");
  ie_cmd->fallthrough();
  ie_cmd->add_option("--model", ie->model, "Model file")->required();
  ie_cmd->add_option("--vocab", ie->vocab, "Vocabulary file")->required();
  ie_cmd->add_option("--classifier", ie->classifier, "Classifier JSON")->required();
  ie_cmd->add_option("--data", ie->data, "Labeled utterances to score");
  auto* text_opt = ie_cmd->add_option("--text", ie->text, "Single utterance to classify");
  ie_cmd->add_flag("--quantized,!--no-quantized", ie->quantized,
                   "Quantized feature extraction");
  ie_cmd->callback([ie, text_opt] {
    ie->text_given = text_opt->count() > 0;
    if (ie->text_given == !ie->data.empty())
      throw CLI::ValidationError("intent-eval", "give exactly one of --data or --text");
    run_intent_eval(*ie);
  });

  auto im_path = std::make_shared<std::string>();
  auto* im_cmd = app.add_subcommand("inspect-model", "Header and size breakdown");
  im_cmd->fallthrough();
  im_cmd->add_option("--model", *im_path, "Model file")->required();
  im_cmd->callback([im_path] { run_inspect(*im_path); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const DataError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
