#include "cvrt/intent.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include <nlohmann/json.hpp>

#include "cvrt/encoder.hpp"
#include "cvrt/errors.hpp"
#include "cvrt/numeric.hpp"
#include "cvrt/rng.hpp"
#include "cvrt/tape.hpp"

namespace cvrt {

using nlohmann::json;

std::vector<IntentExample> load_intent_file(const std::string& path, CorpusStats* stats) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read intent file " + path);

  std::vector<IntentExample> out;
  CorpusStats local;
  std::string line;
  while (std::getline(in, line)) {
    json j = json::parse(line, nullptr, false);
    if (!j.is_object() || !j.contains("text") || !j["text"].is_string() ||
        !j.contains("label") || !j["label"].is_string() ||
        j["label"].get<std::string>().empty()) {
      ++local.skipped;
      continue;
    }
    ++local.kept;
    out.push_back({j["text"].get<std::string>(), j["label"].get<std::string>()});
  }
  if (stats) *stats = local;
  if (out.empty()) throw DataError("no usable intent examples in " + path);
  return out;
}

std::array<std::vector<int>, 3> split_80_10_10(int n, uint64_t seed) {
  std::vector<int> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  Rng rng(seed);
  rng.shuffle(idx);

  int n_train = n * 8 / 10;
  int n_dev = n / 10;
  int n_test = n - n_train - n_dev;
  if (n_train < 1 || n_dev < 1 || n_test < 1)
    throw DataError("dataset too small for an 80/10/10 split");

  std::array<std::vector<int>, 3> out;
  out[0].assign(idx.begin(), idx.begin() + n_train);
  out[1].assign(idx.begin() + n_train, idx.begin() + n_train + n_dev);
  out[2].assign(idx.begin() + n_train + n_dev, idx.end());
  return out;
}

Tensor extract_features(Model& model, const SubwordVocab& vocab,
                        const std::vector<std::string>& texts, bool quantized) {
  const int chunk = 32;
  Tensor out(static_cast<int>(texts.size()), model.cfg.r_dim());
  for (size_t base = 0; base < texts.size(); base += chunk) {
    size_t end = std::min(texts.size(), base + chunk);
    std::vector<std::vector<int>> seqs;
    for (size_t i = base; i < end; ++i)
      seqs.push_back(tokenize(texts[i], vocab, model.cfg.max_seq_len));

    Tape tape(quantized);
    Forward fwd(model, tape, {quantized, false, 0.0, nullptr});
    const Tensor& r = tape.val(fwd.encode_r(seqs));
    for (size_t i = base; i < end; ++i)
      for (int j = 0; j < r.cols; ++j)
        out.at(static_cast<int>(i), j) = r.at(static_cast<int>(i - base), j);
  }
  return out;
}

namespace {

json tensor_to_json(const Tensor& t) {
  json j;
  j["rows"] = t.rows;
  j["cols"] = t.cols;
  j["data"] = t.v;
  return j;
}

Tensor tensor_from_json(const json& j) {
  Tensor t(j.at("rows").get<int>(), j.at("cols").get<int>());
  auto data = j.at("data").get<std::vector<double>>();
  if (data.size() != t.v.size()) throw DataError("classifier tensor size mismatch");
  t.v = std::move(data);
  return t;
}

Tensor gather_rows(const Tensor& src, const std::vector<int>& rows) {
  Tensor out(static_cast<int>(rows.size()), src.cols);
  for (size_t i = 0; i < rows.size(); ++i)
    for (int j = 0; j < src.cols; ++j)
      out.at(static_cast<int>(i), j) = src.at(rows[i], j);
  return out;
}

struct FitResult {
  IntentClassifier clf;
  double dev_accuracy = -1.0;
};

FitResult fit_one(const Tensor& train_x, const std::vector<int>& train_y,
                  const Tensor& dev_x, const std::vector<int>& dev_y, int n_labels,
                  int hidden, double dropout, double lr, const IntentTrainOptions& opt) {
  const int feat = train_x.cols;
  IntentClassifier clf;
  clf.hidden = hidden;
  clf.dropout = dropout;
  clf.lr = lr;
  clf.w1 = orthogonal_init(feat, hidden, opt.seed * 4 + 1);
  clf.b1 = Tensor(1, hidden);
  clf.w2 = orthogonal_init(hidden, n_labels, opt.seed * 4 + 2);
  clf.b2 = Tensor(1, n_labels);

  Rng rng(opt.seed);
  std::vector<int> order(train_y.size());
  std::iota(order.begin(), order.end(), 0);

  FitResult best;
  best.clf = clf;
  int stale_epochs = 0;

  for (int epoch = 0; epoch < opt.max_epochs; ++epoch) {
    rng.shuffle(order);
    for (size_t off = 0; off < order.size(); off += opt.batch_size) {
      size_t end = std::min(order.size(), off + opt.batch_size);
      std::vector<int> rows(order.begin() + off, order.begin() + end);
      int b = static_cast<int>(rows.size());

      Tape tape(false);
      auto x = tape.leaf(gather_rows(train_x, rows), false);
      auto w1 = tape.leaf(clf.w1, true);
      auto b1 = tape.leaf(clf.b1, true);
      auto w2 = tape.leaf(clf.w2, true);
      auto b2 = tape.leaf(clf.b2, true);

      auto h = tape.gelu(tape.add_rowvec(tape.matmul(x, w1), b1));
      if (dropout > 0.0) h = tape.dropout(h, dropout, rng);
      auto lp = tape.log_softmax_rows(tape.add_rowvec(tape.matmul(h, w2), b2));

      auto weights = std::make_shared<Tensor>(b, n_labels);
      for (int i = 0; i < b; ++i) weights->at(i, train_y[rows[i]]) = -1.0 / b;
      tape.backward(tape.weighted_sum_all(lp, weights));

      auto sgd = [&](Tensor& param, Tape::NodeId leaf) {
        const Tensor& g = tape.grad(leaf);
        for (size_t i = 0; i < param.v.size(); ++i) param.v[i] -= lr * g.v[i];
      };
      sgd(clf.w1, w1);
      sgd(clf.b1, b1);
      sgd(clf.w2, w2);
      sgd(clf.b2, b2);
    }

    double acc = intent_accuracy(clf, dev_x, dev_y);
    if (acc > best.dev_accuracy) {
      best.dev_accuracy = acc;
      best.clf = clf;
      stale_epochs = 0;
    } else if (++stale_epochs >= opt.patience) {
      break;
    }
  }
  return best;
}

}  // namespace

IntentClassifier train_intent_classifier(Model& model, const SubwordVocab& vocab,
                                         const std::vector<IntentExample>& data,
                                         const IntentTrainOptions& opt,
                                         IntentReport* report) {
  std::vector<std::string> labels;
  for (const IntentExample& ex : data) labels.push_back(ex.label);
  std::sort(labels.begin(), labels.end());
  labels.erase(std::unique(labels.begin(), labels.end()), labels.end());
  if (labels.size() < 2) throw DataError("intent training needs at least two classes");

  std::vector<std::string> texts;
  std::vector<int> label_ids;
  for (const IntentExample& ex : data) {
    texts.push_back(ex.text);
    label_ids.push_back(static_cast<int>(
        std::lower_bound(labels.begin(), labels.end(), ex.label) - labels.begin()));
  }

  Tensor features = extract_features(model, vocab, texts, opt.quantized);
  auto splits = split_80_10_10(static_cast<int>(data.size()), opt.seed);

  auto pick = [&](const std::vector<int>& rows) {
    std::vector<int> ys;
    for (int r : rows) ys.push_back(label_ids[r]);
    return std::make_pair(gather_rows(features, rows), ys);
  };
  auto [train_x, train_y] = pick(splits[0]);
  auto [dev_x, dev_y] = pick(splits[1]);
  auto [test_x, test_y] = pick(splits[2]);

  FitResult best;
  int n_labels = static_cast<int>(labels.size());
  for (int hidden : opt.hidden_grid)
    for (double dropout : opt.dropout_grid)
      for (double lr : opt.lr_grid) {
        FitResult fit =
            fit_one(train_x, train_y, dev_x, dev_y, n_labels, hidden, dropout, lr, opt);
        if (fit.dev_accuracy > best.dev_accuracy) best = fit;
      }

  best.clf.labels = labels;
  if (report) {
    report->n_train = static_cast<int>(train_y.size());
    report->n_dev = static_cast<int>(dev_y.size());
    report->n_test = static_cast<int>(test_y.size());
    report->best_dev_accuracy = best.dev_accuracy;
    report->test_accuracy = intent_accuracy(best.clf, test_x, test_y);
    report->best_hidden = best.clf.hidden;
    report->best_dropout = best.clf.dropout;
    report->best_lr = best.clf.lr;
  }
  return best.clf;
}

std::pair<int, std::vector<double>> classify(const IntentClassifier& clf,
                                             const Tensor& features, int row) {
  const int feat = clf.w1.rows;
  const int hidden = clf.w1.cols;
  const int n_labels = clf.w2.cols;

  std::vector<double> h(hidden);
  for (int j = 0; j < hidden; ++j) {
    double s = clf.b1.v[j];
    for (int i = 0; i < feat; ++i) s += features.at(row, i) * clf.w1.at(i, j);
    h[j] = gelu_fast(s);
  }
  std::vector<double> logits(n_labels);
  for (int j = 0; j < n_labels; ++j) {
    double s = clf.b2.v[j];
    for (int i = 0; i < hidden; ++i) s += h[i] * clf.w2.at(i, j);
    logits[j] = s;
  }

  double mx = *std::max_element(logits.begin(), logits.end());
  double denom = 0.0;
  std::vector<double> probs(n_labels);
  for (int j = 0; j < n_labels; ++j) {
    probs[j] = std::exp(logits[j] - mx);
    denom += probs[j];
  }
  int arg = 0;
  for (int j = 0; j < n_labels; ++j) {
    probs[j] /= denom;
    if (probs[j] > probs[arg]) arg = j;
  }
  return {arg, probs};
}

double intent_accuracy(const IntentClassifier& clf, const Tensor& features,
                       const std::vector<int>& label_ids) {
  if (label_ids.empty()) throw std::invalid_argument("no examples");
  int64_t hits = 0;
  for (size_t i = 0; i < label_ids.size(); ++i)
    if (classify(clf, features, static_cast<int>(i)).first == label_ids[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(label_ids.size());
}

std::string IntentClassifier::to_json() const {
  json j;
  j["labels"] = labels;
  j["hidden"] = hidden;
  j["dropout"] = dropout;
  j["lr"] = lr;
  j["w1"] = tensor_to_json(w1);
  j["b1"] = tensor_to_json(b1);
  j["w2"] = tensor_to_json(w2);
  j["b2"] = tensor_to_json(b2);
  return j.dump();
}

IntentClassifier IntentClassifier::from_json(const std::string& text) {
  json j = json::parse(text, nullptr, false);
  if (!j.is_object()) throw DataError("malformed classifier file");
  try {
    IntentClassifier clf;
    clf.labels = j.at("labels").get<std::vector<std::string>>();
    clf.hidden = j.at("hidden").get<int>();
    clf.dropout = j.at("dropout").get<double>();
    clf.lr = j.at("lr").get<double>();
    clf.w1 = tensor_from_json(j.at("w1"));
    clf.b1 = tensor_from_json(j.at("b1"));
    clf.w2 = tensor_from_json(j.at("w2"));
    clf.b2 = tensor_from_json(j.at("b2"));
    if (clf.labels.size() < 2 ||
        static_cast<int>(clf.labels.size()) != clf.w2.cols ||
        clf.w1.cols != clf.w2.rows)
      throw DataError("inconsistent classifier dimensions");
    return clf;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed classifier file: ") + e.what());
  }
}

}  // namespace cvrt
