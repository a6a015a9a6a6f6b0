#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "vlltr/anss.hpp"
#include "vlltr/lgr.hpp"

namespace vlltr {

// Every knob of the two-stage pipeline. Text form is flat "key = value"
// lines with '#' comments; unknown keys are rejected.
struct RunConfig {
  std::uint64_t seed = 0;

  // widths
  std::size_t d_img = 32;
  std::size_t dim = 32;
  std::size_t vocab_size = 400;

  // long-tailed image set
  std::size_t classes = 20;
  std::size_t n_max = 500;
  std::size_t n_min = 5;
  double alpha = 6.0;
  double noise_sigma = 0.5;
  std::size_t test_per_class = 20;

  // sentence corpus
  std::size_t sentences_per_class = 40;
  std::size_t prompt_count = 80;
  double noise_fraction = 0.2;
  std::size_t max_tokens = kMaxTokens;

  // stage 1
  std::size_t teacher_epochs = 30;
  std::size_t pretrain_epochs = 30;
  std::size_t pretrain_batch = 64;
  double pretrain_lr = 5e-4;
  double lambda = 0.5;
  double tau_init = kTauInit;
  double weight_decay = 5e-2;
  bool student_from_teacher = true;  // start stage 1 from the teacher's weights

  // anchors
  std::size_t anchors_per_class = kAnchorsPerClass;
  SelectionMode anchor_mode = SelectionMode::AnSS;
  std::size_t probe_cap = kProbeCap;

  // stage 2
  HeadKind head = HeadKind::LGR;
  std::size_t finetune_epochs = 30;
  std::size_t finetune_batch = 64;
  double finetune_lr = 1e-3;

  // ablation grid
  std::size_t ablate_seeds = 3;

  // artifacts, relative to the output directory unless absolute
  std::string dataset_path = "dataset.vllt";
  std::string corpus_path = "corpus.tsv";
  std::string stats_path = "corpus_stats.json";
  std::string teacher_path = "teacher.vlck";
  std::string pretrain_path = "pretrain.vlck";
  std::string pretrain_trace_path = "pretrain_trace.tsv";
  std::string anchors_path = "anchors.tsv";
  std::string anchor_cache_path = "anchors.vlae";
  std::string finetune_path = "finetune.vlck";
  std::string finetune_trace_path = "finetune_trace.tsv";
  std::string report_path = "report.json";
  std::string predictions_path = "predictions.tsv";

  // Applies one "key=value" assignment; ValidationError on unknown keys or
  // unparsable values.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;

  // Parses config text and applies every assignment.
  void apply_text(const std::string& text);
  void load(const std::filesystem::path& path);

  // Range checks that span several keys.
  void validate() const;

  std::string to_text() const;
  // sha256 hex over every non-path key in canonical order.
  std::string fingerprint() const;

  struct KeyInfo {
    std::string key;
    std::string default_value;
    std::string help;
  };
  static std::vector<KeyInfo> keys();
};

}  // namespace vlltr
