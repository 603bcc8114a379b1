// ssmmt: keyword-driven image retrieval, image-text self-supervised matching,
// relevance-filtered visual contexts, and gated multimodal translation, with
// an end-to-end benchmark comparing the text-only and multimodal arms.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ssmmt/config.hpp"
#include "ssmmt/http_client.hpp"
#include "ssmmt/pipeline.hpp"

namespace {

constexpr const char* kVersion = "ssmmt 1.0.0 (checkpoint format ssmmt-ckpt-1)";

struct GlobalArgs {
  std::string config_path;
  std::vector<std::string> overrides;  // key=value
  std::string work_dir;
  int64_t seed = -1;
};

ssmmt::RunConfig make_config(const GlobalArgs& args) {
  std::vector<std::pair<std::string, std::string>> overrides;
  for (const auto& kv : args.overrides) {
    auto eq = kv.find('=');
    if (eq == std::string::npos) {
      throw ssmmt::UsageError("--set expects key=value, got '" + kv + "'");
    }
    overrides.emplace_back(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (!args.work_dir.empty()) overrides.emplace_back("paths.work_dir", args.work_dir);
  if (args.seed >= 0) overrides.emplace_back("seed", std::to_string(args.seed));
  return ssmmt::load_config(args.config_path, overrides);
}

void add_globals(CLI::App* cmd, GlobalArgs& args) {
  cmd->add_option("--config", args.config_path, "JSON configuration file");
  cmd->add_option("--set", args.overrides,
                  "Override a config value by dotted path, e.g. --set matcher.epochs=30");
  cmd->add_option("--work-dir", args.work_dir, "Output directory (overrides paths.work_dir)");
  cmd->add_option("--seed", args.seed, "Top-level seed (overrides config)");
}

int run_retrieve(const ssmmt::RunConfig& cfg) {
  if (cfg.client == "http") {
    ssmmt::HttpSearchClient client(cfg.endpoint);
    ssmmt::pipeline::stage_retrieve(cfg, &client);
  } else {
    ssmmt::pipeline::stage_retrieve(cfg);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"image-text self-supervised filtering for multimodal translation"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  GlobalArgs args;
  std::string arm = "text";
  bool uniform_weights = false;
  std::string eval_baseline, eval_system, eval_references, eval_answer_key, eval_out;

  auto* prepare = app.add_subcommand("prepare", "Tokenize corpus, build vocab and keywords");
  add_globals(prepare, args);
  auto* retrieve = app.add_subcommand("retrieve", "Fetch candidate images per keyword");
  add_globals(retrieve, args);
  auto* extract = app.add_subcommand("extract-features", "Compute image feature vectors");
  add_globals(extract, args);
  auto* train_matcher = app.add_subcommand("train-matcher",
                                           "Train the image-text match head");
  add_globals(train_matcher, args);
  auto* build_contexts = app.add_subcommand("build-contexts",
                                            "Score candidates and pool visual contexts");
  add_globals(build_contexts, args);
  auto* pretrain = app.add_subcommand("pretrain", "Masked LM pretraining (one arm)");
  add_globals(pretrain, args);
  pretrain->add_option("--arm", arm, "text | mm")->default_val("text");
  auto* finetune = app.add_subcommand("finetune", "Translation fine-tuning (one arm)");
  add_globals(finetune, args);
  finetune->add_option("--arm", arm, "text | mm")->default_val("text");
  auto* translate = app.add_subcommand("translate", "Decode the evaluation split");
  add_globals(translate, args);
  translate->add_option("--arm", arm, "text | mm")->default_val("text");
  translate->add_flag("--uniform-weights", uniform_weights,
                      "Ablation: pool candidates with uniform weights");
  auto* evaluate = app.add_subcommand("evaluate", "BLEU comparison report");
  add_globals(evaluate, args);
  evaluate->add_option("--baseline", eval_baseline, "Baseline translations (explicit mode)");
  evaluate->add_option("--system", eval_system, "System translations (explicit mode)");
  evaluate->add_option("--references", eval_references, "Reference translations");
  evaluate->add_option("--answer-key", eval_answer_key, "Benchmark answer key jsonl");
  evaluate->add_option("--out", eval_out, "Report JSON output path (explicit mode)");
  auto* synth = app.add_subcommand("synth", "Generate the synthetic benchmark");
  add_globals(synth, args);
  auto* e2e = app.add_subcommand("e2e", "Run the whole experiment end to end");
  add_globals(e2e, args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) {
      return app.exit(e);  // --help / --version
    }
    std::cerr << "error: usage: " << e.what() << "\n";
    return 1;
  }

  try {
    auto arm_of = [&]() {
      if (arm == "text" || arm == "tlm" || arm == "baseline") {
        return ssmmt::pipeline::Arm::kText;
      }
      if (arm == "mm" || arm == "vtlm" || arm == "system") {
        return ssmmt::pipeline::Arm::kMultimodal;
      }
      throw ssmmt::UsageError("unknown arm '" + arm + "' (use text|mm)");
    };

    if (prepare->parsed()) {
      ssmmt::pipeline::stage_prepare(make_config(args));
    } else if (retrieve->parsed()) {
      return run_retrieve(make_config(args));
    } else if (extract->parsed()) {
      ssmmt::pipeline::stage_extract_features(make_config(args));
    } else if (train_matcher->parsed()) {
      auto res = ssmmt::pipeline::stage_train_matcher(make_config(args));
      std::printf("matcher trained: held-out AUC %.4f\n", res.train.final_auc);
    } else if (build_contexts->parsed()) {
      ssmmt::pipeline::stage_build_contexts(make_config(args));
    } else if (pretrain->parsed()) {
      auto trace = ssmmt::pipeline::stage_pretrain(make_config(args), arm_of());
      std::printf("pretrain %s: final loss %.4f\n", arm.c_str(), trace.epoch_loss.back());
    } else if (finetune->parsed()) {
      auto trace = ssmmt::pipeline::stage_finetune(make_config(args), arm_of());
      std::printf("finetune %s: final loss %.4f\n", arm.c_str(), trace.epoch_loss.back());
    } else if (translate->parsed()) {
      ssmmt::pipeline::stage_translate(make_config(args), arm_of(),
                                       uniform_weights
                                           ? ssmmt::pipeline::WeightsMode::kUniform
                                           : ssmmt::pipeline::WeightsMode::kLearned);
    } else if (evaluate->parsed()) {
      if (!eval_references.empty()) {
        // Explicit-path mode, independent of a pipeline work directory.
        if (eval_baseline.empty() || eval_system.empty()) {
          throw ssmmt::UsageError("evaluate: explicit mode needs --baseline and --system");
        }
        auto refs = ssmmt::split_token_lines(ssmmt::read_lines(eval_references));
        auto base = ssmmt::split_token_lines(ssmmt::read_lines(eval_baseline));
        auto sys = ssmmt::split_token_lines(ssmmt::read_lines(eval_system));
        std::vector<ssmmt::AnswerKeyEntry> key;
        std::vector<int64_t> ids;
        if (!eval_answer_key.empty()) {
          key = ssmmt::answer_key_from_jsonl(ssmmt::read_file(eval_answer_key));
        }
        for (size_t i = 0; i < refs.size(); ++i) ids.push_back(int64_t(i));
        auto report = ssmmt::compare(base, sys, refs, ids, key);
        auto j = ssmmt::compare_report_to_json(report);
        if (!eval_out.empty()) {
          ssmmt::write_file_atomic(eval_out, j.dump(2) + "\n");
        }
        std::fputs(ssmmt::compare_report_text(report).c_str(), stdout);
      } else {
        auto res = ssmmt::pipeline::stage_evaluate(make_config(args));
        std::fputs(ssmmt::compare_report_text(res.report).c_str(), stdout);
      }
    } else if (synth->parsed()) {
      auto cfg = make_config(args);
      ssmmt::pipeline::stage_synth(cfg);
      // Materialize the downstream artifacts so a synth run leaves a complete
      // corpus + manifest + feature store + answer key behind.
      ssmmt::pipeline::stage_prepare(cfg);
      ssmmt::pipeline::stage_retrieve(cfg);
      ssmmt::pipeline::stage_extract_features(cfg);
    } else if (e2e->parsed()) {
      auto cfg = make_config(args);
      auto res = ssmmt::pipeline::run_e2e(cfg);
      std::fputs(ssmmt::compare_report_text(res.report).c_str(), stdout);
      std::printf("report: %s\n", (cfg.report_dir() / "report.json").string().c_str());
    }
    return 0;
  } catch (const ssmmt::UsageError& e) {
    std::cerr << "error: usage: " << e.what() << "\n";
    return 1;
  } catch (const ssmmt::TrainError& e) {
    std::cerr << "error: train: " << e.what() << "\n";
    return 3;
  } catch (const ssmmt::DataError& e) {
    std::cerr << "error: data: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: data: " << e.what() << "\n";
    return 2;
  }
}
