#include "vlltr/config.hpp"

#include <charconv>
#include <functional>
#include <sstream>

#include "vlltr/error.hpp"
#include "vlltr/io.hpp"

namespace vlltr {
namespace {

struct Field {
  const char* key;
  const char* help;
  bool is_path;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& v, const char* what) {
  throw ValidationError("config key '" + key + "': '" + v + "' is not " + what);
}

template <typename T>
T parse_uint(const std::string& key, const std::string& v) {
  T out{};
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty())
    bad_value(key, v, "a non-negative integer");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) bad_value(key, v, "a number");
    return d;
  } catch (const std::logic_error&) {
    bad_value(key, v, "a number");
  }
}

// Shortest text that parses back to the same double.
std::string fmt_double(double v) {
  char buf[40];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <typename T>
Field uint_field(const char* key, const char* help, T RunConfig::*m) {
  return {key, help, false,
          [key, m](RunConfig& c, const std::string& v) { c.*m = parse_uint<T>(key, v); },
          [m](const RunConfig& c) { return std::to_string(c.*m); }};
}

Field real_field(const char* key, const char* help, double RunConfig::*m) {
  return {key, help, false,
          [key, m](RunConfig& c, const std::string& v) { c.*m = parse_double(key, v); },
          [m](const RunConfig& c) { return fmt_double(c.*m); }};
}

Field path_field(const char* key, const char* help, std::string RunConfig::*m) {
  return {key, help, true,
          [key, m](RunConfig& c, const std::string& v) {
            if (v.empty()) throw ValidationError("config key '" + std::string(key) + "' is empty");
            c.*m = v;
          },
          [m](const RunConfig& c) { return c.*m; }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      uint_field("seed", "master seed for every random stream", &RunConfig::seed),
      uint_field("d_img", "synthetic image feature width", &RunConfig::d_img),
      uint_field("dim", "shared embedding width D", &RunConfig::dim),
      uint_field("vocab_size", "token vocabulary size", &RunConfig::vocab_size),
      uint_field("classes", "number of classes C", &RunConfig::classes),
      uint_field("n_max", "training images of the most frequent class", &RunConfig::n_max),
      uint_field("n_min", "training images of the rarest class", &RunConfig::n_min),
      real_field("alpha", "Pareto shape (recorded with the data)", &RunConfig::alpha),
      real_field("noise_sigma", "std-dev of per-image Gaussian noise", &RunConfig::noise_sigma),
      uint_field("test_per_class", "images per class in the balanced test split",
                 &RunConfig::test_per_class),
      uint_field("sentences_per_class", "encyclopedia sentences per class",
                 &RunConfig::sentences_per_class),
      uint_field("prompt_count", "prompt-template sentences per class", &RunConfig::prompt_count),
      real_field("noise_fraction", "share of encyclopedia sentences that are distractors",
                 &RunConfig::noise_fraction),
      uint_field("max_tokens", "token limit per sentence, markers included",
                 &RunConfig::max_tokens),
      uint_field("teacher_epochs", "epochs for the balanced-data teacher",
                 &RunConfig::teacher_epochs),
      uint_field("pretrain_epochs", "stage-1 epochs", &RunConfig::pretrain_epochs),
      uint_field("pretrain_batch", "stage-1 batch size N", &RunConfig::pretrain_batch),
      real_field("pretrain_lr", "stage-1 initial learning rate", &RunConfig::pretrain_lr),
      real_field("lambda", "weight of the contrastive term against distillation",
                 &RunConfig::lambda),
      real_field("tau_init", "initial temperature", &RunConfig::tau_init),
      real_field("weight_decay", "AdamW decoupled weight decay", &RunConfig::weight_decay),
      {"student_init", "stage-1 starting point: teacher (copy its weights) or random", false,
       [](RunConfig& c, const std::string& v) {
         if (v == "teacher") c.student_from_teacher = true;
         else if (v == "random") c.student_from_teacher = false;
         else bad_value("student_init", v, "teacher or random");
       },
       [](const RunConfig& c) { return std::string(c.student_from_teacher ? "teacher" : "random"); }},
      uint_field("anchors_per_class", "anchor sentences kept per class M",
                 &RunConfig::anchors_per_class),
      {"anchor_mode", "anss (scored) or cutoff (first M in corpus order)", false,
       [](RunConfig& c, const std::string& v) { c.anchor_mode = parse_mode(v); },
       [](const RunConfig& c) { return mode_name(c.anchor_mode); }},
      uint_field("probe_cap", "probe images per class for sentence scoring",
                 &RunConfig::probe_cap),
      {"head", "recognition head: lgr, fc or knn", false,
       [](RunConfig& c, const std::string& v) { c.head = parse_head(v); },
       [](const RunConfig& c) { return head_name(c.head); }},
      uint_field("finetune_epochs", "stage-2 epochs", &RunConfig::finetune_epochs),
      uint_field("finetune_batch", "stage-2 batch size", &RunConfig::finetune_batch),
      real_field("finetune_lr", "stage-2 initial learning rate", &RunConfig::finetune_lr),
      uint_field("ablate_seeds", "seeds per configuration in the ablation grid",
                 &RunConfig::ablate_seeds),
      path_field("dataset_path", "image set (train + balanced test)", &RunConfig::dataset_path),
      path_field("corpus_path", "sentence corpus", &RunConfig::corpus_path),
      path_field("stats_path", "corpus statistics", &RunConfig::stats_path),
      path_field("teacher_path", "teacher checkpoint", &RunConfig::teacher_path),
      path_field("pretrain_path", "stage-1 checkpoint", &RunConfig::pretrain_path),
      path_field("pretrain_trace_path", "stage-1 loss trace", &RunConfig::pretrain_trace_path),
      path_field("anchors_path", "selected anchor sentences", &RunConfig::anchors_path),
      path_field("anchor_cache_path", "precomputed anchor embeddings",
                 &RunConfig::anchor_cache_path),
      path_field("finetune_path", "stage-2 checkpoint", &RunConfig::finetune_path),
      path_field("finetune_trace_path", "stage-2 loss trace", &RunConfig::finetune_trace_path),
      path_field("report_path", "evaluation report", &RunConfig::report_path),
      path_field("predictions_path", "per-sample prediction dump",
                 &RunConfig::predictions_path),
  };
  return f;
}

const Field& find_field(const std::string& key) {
  for (const auto& f : fields())
    if (key == f.key) return f;
  throw ValidationError("unknown config key '" + key + "'");
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  find_field(trim(key)).set(*this, trim(value));
}

std::string RunConfig::get(const std::string& key) const { return find_field(key).get(*this); }

void RunConfig::apply_text(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto h = line.find('#'); h != std::string::npos) line.erase(h);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ValidationError("config line " + std::to_string(lineno) + ": expected key = value");
    set(line.substr(0, eq), line.substr(eq + 1));
  }
}

void RunConfig::load(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path))
    throw ValidationError("config file " + path.string() + " does not exist");
  apply_text(read_file(path));
}

void RunConfig::validate() const {
  auto need = [](bool ok, const std::string& msg) {
    if (!ok) throw ValidationError("config: " + msg);
  };
  need(classes >= 2, "classes must be >= 2");
  need(n_min >= 1 && n_max >= n_min, "need 1 <= n_min <= n_max");
  need(alpha > 0.0, "alpha must be positive");
  need(noise_sigma >= 0.0, "noise_sigma must be non-negative");
  need(d_img >= 2 && dim >= 1, "d_img must be >= 2 and dim >= 1");
  need(test_per_class >= 1, "test_per_class must be >= 1");
  need(noise_fraction >= 0.0 && noise_fraction <= 1.0, "noise_fraction must lie in [0, 1]");
  need(max_tokens >= 3, "max_tokens must be >= 3");
  need(pretrain_batch >= 1 && finetune_batch >= 1, "batch sizes must be positive");
  need(pretrain_lr >= 0.0 && finetune_lr >= 0.0, "learning rates must be non-negative");
  need(lambda >= 0.0 && lambda <= 1.0, "lambda must lie in [0, 1]");
  need(tau_init > 0.0, "tau_init must be positive");
  need(weight_decay >= 0.0, "weight_decay must be non-negative");
  need(anchors_per_class >= 1, "anchors_per_class must be >= 1");
  need(probe_cap >= 1, "probe_cap must be >= 1");
  need(ablate_seeds >= 1, "ablate_seeds must be >= 1");
}

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.key) + " = " + f.get(*this) + "\n";
  return out;
}

std::string RunConfig::fingerprint() const {
  std::string canon;
  for (const auto& f : fields())
    if (!f.is_path) canon += std::string(f.key) + "=" + f.get(*this) + "\n";
  return hex(sha256(canon));
}

std::vector<RunConfig::KeyInfo> RunConfig::keys() {
  const RunConfig defaults;
  std::vector<KeyInfo> out;
  for (const auto& f : fields()) out.push_back({f.key, f.get(defaults), f.help});
  return out;
}

}  // namespace vlltr
