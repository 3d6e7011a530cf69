#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "cvrt/model.hpp"
#include "cvrt/tokenizer.hpp"
#include "cvrt/trainer.hpp"

namespace cvrt {

struct IntentExample {
  std::string text;
  std::string label;
};

// Newline-delimited JSON {"text", "label"}; skip-and-count semantics as for
// the other ingest paths.
std::vector<IntentExample> load_intent_file(const std::string& path,
                                            CorpusStats* stats = nullptr);

// Seeded shuffle, then 80/10/10 by position. Returns index lists
// {train, dev, test}; throws DataError when a split would be empty.
std::array<std::vector<int>, 3> split_80_10_10(int n, uint64_t seed);

// Two-layer softmax classifier over frozen r_x features.
struct IntentClassifier {
  std::vector<std::string> labels;  // sorted; output order
  int hidden = 256;
  double dropout = 0.0;  // training-time rate, recorded for provenance
  double lr = 0.03;
  Tensor w1, b1, w2, b2;

  std::string to_json() const;
  static IntentClassifier from_json(const std::string& text);  // throws DataError
};

struct IntentTrainOptions {
  int batch_size = 32;
  int max_epochs = 50;
  int patience = 5;  // epochs without dev improvement before stopping
  uint64_t seed = 1;
  bool quantized = true;  // feature extraction regime
  std::vector<int> hidden_grid = {256, 512};
  std::vector<double> dropout_grid = {0.0, 0.5, 0.75};
  std::vector<double> lr_grid = {0.01, 0.03, 0.1};
};

struct IntentReport {
  int n_train = 0, n_dev = 0, n_test = 0;
  double best_dev_accuracy = 0.0;
  double test_accuracy = 0.0;
  int best_hidden = 0;
  double best_dropout = 0.0;
  double best_lr = 0.0;
};

// Frozen r_x features for a batch of texts, extracted in chunks.
Tensor extract_features(Model& model, const SubwordVocab& vocab,
                        const std::vector<std::string>& texts, bool quantized);

// Grid-searched SGD training with early stopping at the best dev accuracy.
// The encoder is read-only throughout. Throws DataError on single-class or
// too-small datasets.
IntentClassifier train_intent_classifier(Model& model, const SubwordVocab& vocab,
                                         const std::vector<IntentExample>& data,
                                         const IntentTrainOptions& opt,
                                         IntentReport* report = nullptr);

// Label index and the full probability vector for one feature row.
std::pair<int, std::vector<double>> classify(const IntentClassifier& clf,
                                             const Tensor& features, int row = 0);

double intent_accuracy(const IntentClassifier& clf, const Tensor& features,
                       const std::vector<int>& label_ids);

}  // namespace cvrt
