// Command-line driver for the two-stage pipeline.
#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "vlltr/error.hpp"
#include "vlltr/parallel.hpp"
#include "vlltr/pipeline.hpp"

namespace {

enum Exit { kOk = 0, kUsage = 1, kValidation = 2, kNumeric = 3 };

std::string keys_help() {
  std::string s = "\nConfig keys (--set key=value or a --config file of key = value lines):\n";
  std::size_t w = 0;
  for (const auto& k : vlltr::RunConfig::keys()) w = std::max(w, k.key.size() + k.default_value.size() + 3);
  for (const auto& k : vlltr::RunConfig::keys()) {
    std::string head = "  " + k.key + " = " + k.default_value;
    s += head + std::string(w + 4 > head.size() ? w + 4 - head.size() : 1, ' ') + k.help + "\n";
  }
  s += "\nEnvironment: VLLTR_THREADS caps worker threads.\n"
       "Exit codes: 0 success, 1 usage, 2 validation, 3 numeric failure.\n";
  return s;
}

std::string pct(const std::optional<vlltr::BandScore>& b) {
  if (!b) return "absent";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f%%", 100.0 * b->accuracy());
  return buf;
}

void print_report(const vlltr::EvalReport& r) {
  std::cout << "overall " << pct(r.overall) << "  many " << pct(r.many) << "  medium "
            << pct(r.medium) << "  few " << pct(r.few) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Long-tailed recognition with language-guided heads"};
  app.footer(keys_help());
  app.require_subcommand(1, 1);
  app.fallthrough();

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir = ".";
  std::vector<std::string> sets;
  app.add_option("--config", config_path, "config file");
  app.add_option("--seed", seed, "override the config seed");
  app.add_option("--out", out_dir, "artifact directory")->capture_default_str();
  app.add_option("--set", sets, "override one config key (key=value)")->take_all();

  auto* gen = app.add_subcommand("gen-data", "generate the long-tailed image set and corpus");
  auto* teacher = app.add_subcommand("make-teacher", "train the teacher pair on balanced data");
  auto* pretrain = app.add_subcommand("pretrain", "stage 1: class-wise contrastive pre-training");
  auto* select = app.add_subcommand("select-anchors", "score and select anchor sentences");
  auto* finetune = app.add_subcommand("finetune", "stage 2: fine-tune encoder and head");
  auto* eval = app.add_subcommand("eval", "evaluate on the balanced test split");
  bool zero_shot = false;
  eval->add_flag("--zero-shot", zero_shot, "classify by prompt means with pre-trained encoders");
  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every op and loss");
  std::size_t instances = 20;
  bool inject = false;
  grad->add_option("--instances", instances, "random instances per case")->capture_default_str();
  grad->add_flag("--inject-fault", inject, "add a deliberately wrong op as a negative control");
  auto* retrieve = app.add_subcommand("retrieve", "test images closest to a corpus sentence");
  std::size_t sentence = 0, k = 10;
  retrieve->add_option("--sentence", sentence, "corpus sentence id")->required();
  retrieve->add_option("-k", k, "number of images")->capture_default_str();
  auto* ablate = app.add_subcommand("ablate", "run the head / selection / distillation grid");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? kOk : kUsage;
  }

  try {
    vlltr::RunConfig cfg;
    if (!config_path.empty()) cfg.load(config_path);
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) {
        std::cerr << "error: --set expects key=value, got '" << s << "'\n";
        return kUsage;
      }
      cfg.set(s.substr(0, eq), s.substr(eq + 1));
    }
    if (seed) cfg.seed = *seed;
    cfg.validate();
    const std::filesystem::path out(out_dir);
    const std::size_t threads = vlltr::thread_budget();

    if (*gen) {
      vlltr::cmd_gen_data(cfg, out);
      std::cout << "wrote " << vlltr::artifact(cfg, out, cfg.dataset_path).string() << ", "
                << vlltr::artifact(cfg, out, cfg.corpus_path).string() << ", "
                << vlltr::artifact(cfg, out, cfg.stats_path).string() << "\n";
    } else if (*teacher) {
      vlltr::cmd_make_teacher(cfg, out);
      std::cout << "wrote " << vlltr::artifact(cfg, out, cfg.teacher_path).string() << "\n";
    } else if (*pretrain) {
      vlltr::cmd_pretrain(cfg, out);
      std::cout << "wrote " << vlltr::artifact(cfg, out, cfg.pretrain_path).string() << "\n";
    } else if (*select) {
      vlltr::cmd_select_anchors(cfg, out, threads);
      std::cout << "wrote " << vlltr::artifact(cfg, out, cfg.anchors_path).string() << "\n";
    } else if (*finetune) {
      vlltr::cmd_finetune(cfg, out);
      std::cout << "wrote " << vlltr::artifact(cfg, out, cfg.finetune_path).string() << "\n";
    } else if (*eval) {
      print_report(zero_shot ? vlltr::cmd_eval_zero_shot(cfg, out)
                             : vlltr::cmd_eval(cfg, out, threads));
    } else if (*grad) {
      const auto res = vlltr::cmd_gradcheck(instances, cfg.seed, inject);
      std::cout << vlltr::format_suite(res);
      for (const auto& r : res)
        if (!r.passed()) {
          std::cerr << "gradcheck failed: " << r.name << "\n";
          return kNumeric;
        }
    } else if (*retrieve) {
      for (const auto& h : vlltr::cmd_retrieve(cfg, out, sentence, k)) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.6f", h.cosine);
        std::cout << h.sample_id << '\t' << h.label << '\t' << buf << '\n';
      }
    } else if (*ablate) {
      std::cout << vlltr::cmd_ablate(cfg, out, threads).table;
    }
  } catch (const vlltr::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kValidation;
  }
  return kOk;
}
