#include <fstream>
#include <iostream>
#include <random>

#include <CLI11.hpp>

#include "kinject/config.hpp"
#include "kinject/corpus_index.hpp"
#include "kinject/entailment.hpp"
#include "kinject/errors.hpp"
#include "kinject/pipeline.hpp"

using namespace kinject;

namespace {

struct Paths {
  std::filesystem::path data_dir = "data";
};

void add_pipeline_options(CLI::App& app, PipelineConfig& cfg, Paths& paths) {
  auto& d = cfg.decode;
  app.add_option("--data_dir", paths.data_dir, "Directory relative artifact paths are resolved against");
  app.add_option("--alpha", d.alpha, "Entailment weight");
  app.add_option("--lambda", d.lambda, "Knowledge fidelity weight");
  app.add_option("--gamma", d.gamma, "Share of perturbed states in the backward/forward mix");
  app.add_option("--iterations", d.iterations, "Backward/forward passes per injection");
  app.add_option("--step_size", d.step_size, "Hidden-state step per backward pass");
  app.add_option("--tau", d.tau, "Softmax temperature");
  app.add_option("--max_len", d.max_len, "Response length limit");
  app.add_option("--deterministic_final", d.deterministic_final, "Argmax final tokens instead of sampling");
  app.add_option("--n_nonparametric", cfg.n_nonparametric, "Snippets retrieved from the index");
  app.add_option("--per_phrase", cfg.per_phrase, "Completions per prompt");
  app.add_option("--max_keyphrases", cfg.max_keyphrases, "Key phrases used for prompting");
  app.add_option("--top_p", cfg.top_p, "Nucleus mass for knowledge generation");
  app.add_option("--use_parametric", cfg.use_parametric, "Generate knowledge with the language model");
  app.add_option("--use_nonparametric", cfg.use_nonparametric, "Retrieve knowledge from the index");
  app.add_option("--budget", cfg.B, "Snippets selected per turn (B)");
  app.add_option("--beta_init", cfg.beta_init, "Initial off-diagonal kernel weight");
  app.add_option("--history_turns", cfg.history_turns, "Turns of history kept (0 = all)");
  app.add_option("--seed", cfg.seed, "Random seed");
  app.add_option("--workers", cfg.workers, "Concurrent injections");
  app.add_option("--vocab", cfg.vocab_path, "Vocabulary file");
  app.add_option("--model", cfg.model_path, "Dialog model checkpoint");
  app.add_option("--scorer", cfg.scorer_path, "Scoring model checkpoint (default: --model)");
  app.add_option("--generator", cfg.generator_path, "Knowledge generator checkpoint (default: --model)");
  app.add_option("--head", cfg.head_path, "Entailment head");
  app.add_option("--index", cfg.index_path, "TF-IDF index");
  app.add_option("--stopwords", cfg.stopwords_path, "Stopword list");
  app.add_option("--blocklist", cfg.blocklist_path, "Blocked-token list");
  app.add_option("--generator_url", cfg.generator_url, "External generator endpoint (http://host:port/path)");
  app.add_option("--generator_timeout", cfg.generator_timeout, "External generator timeout in seconds");
}

DialogHistory read_one_dialog(const std::filesystem::path& path, std::size_t line_no) {
  const auto file = read_dialog_file(path);
  if (file.malformed > 0 && file.dialogs.empty()) throw ParseError(path.string() + ": no valid dialogs");
  if (line_no >= file.dialogs.size()) {
    throw InvalidArgument(path.string() + " has " + std::to_string(file.dialogs.size()) +
                          " dialogs; index " + std::to_string(line_no) + " is out of range");
  }
  return file.dialogs[line_no];
}

std::unique_ptr<KnowledgeGenerator> external_generator(const PipelineConfig& cfg) {
  if (cfg.generator_url.empty()) return nullptr;
  return std::make_unique<HttpGenerator>(cfg.generator_url, cfg.generator_timeout);
}

std::vector<TokenSeq> corpus_words(const std::vector<std::vector<Segment>>& corpus) {
  std::vector<TokenSeq> words;
  for (const auto& segs : corpus) {
    for (const auto& s : segs) words.push_back(tokenize(s.text));
  }
  return words;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Post-hoc knowledge injection for dialog responses"};
  app.set_config("--config", "", "Key=value configuration file; flags override it");
  app.require_subcommand(1);
  app.fallthrough();

  PipelineConfig cfg;
  Paths paths;
  add_pipeline_options(app, cfg, paths);

  auto* ingest = app.add_subcommand("ingest", "Build a TF-IDF index from a snippet corpus");
  std::filesystem::path ingest_input;
  std::string ingest_format = "auto";
  ingest->add_option("input", ingest_input, "Corpus file (id<TAB>domain<TAB>text or plain lines)")->required();
  ingest->add_option("--format", ingest_format, "auto, tsv or lines")
      ->check(CLI::IsMember({"auto", "tsv", "lines"}));

  auto* train_lm_cmd = app.add_subcommand("train-lm", "Train the language model");
  std::filesystem::path lm_corpus = "lm_corpus.jsonl";
  TrainOptions lm_opts;
  std::size_t hidden = kDefaultHiddenSize;
  std::size_t min_count = 1;
  train_lm_cmd->add_option("--corpus", lm_corpus, "Training corpus (JSON lines of segments)");
  train_lm_cmd->add_option("--epochs", lm_opts.epochs);
  train_lm_cmd->add_option("--learning_rate", lm_opts.learning_rate);
  train_lm_cmd->add_option("--lr_decay", lm_opts.lr_decay);
  train_lm_cmd->add_option("--batch_size", lm_opts.batch_size);
  train_lm_cmd->add_option("--clip_norm", lm_opts.clip_norm);
  train_lm_cmd->add_option("--hidden", hidden);
  train_lm_cmd->add_option("--min_count", min_count);

  auto* train_entail_cmd = app.add_subcommand("train-entail", "Train the entailment head on synthetic pairs");
  std::filesystem::path entail_dialogs = "dialogs.jsonl";
  std::filesystem::path entail_groups = "contradiction_groups.txt";
  EntailTrainOptions entail_opts;
  entail_opts.epochs = 300;
  entail_opts.learning_rate = 0.02;
  double validation_share = 0.2;
  train_entail_cmd->add_option("--dialogs", entail_dialogs);
  train_entail_cmd->add_option("--groups", entail_groups);
  train_entail_cmd->add_option("--epochs", entail_opts.epochs);
  train_entail_cmd->add_option("--learning_rate", entail_opts.learning_rate);
  train_entail_cmd->add_option("--l2", entail_opts.l2);
  train_entail_cmd->add_option("--validation_share", validation_share)->check(CLI::Range(0.0, 0.9));

  std::filesystem::path dialog_path;
  std::size_t dialog_line = 0;
  std::filesystem::path trace_path;

  auto* respond_cmd = app.add_subcommand("respond", "Answer the last user turn of a dialog");
  respond_cmd->add_option("dialogs", dialog_path, "Dialog JSON-lines file")->required();
  respond_cmd->add_option("--line", dialog_line, "Zero-based dialog index in the file");
  respond_cmd->add_option("--trace", trace_path, "Write the stage trace here (JSON lines)");

  auto* chat_cmd = app.add_subcommand("chat", "Interactive session on stdin/stdout");
  bool chat_trace = false;
  chat_cmd->add_flag("--show_trace", chat_trace, "Show selected snippets after each reply");

  auto* eval_cmd = app.add_subcommand("eval", "Diversity report over a dialog file");
  std::filesystem::path report_path;
  std::size_t eval_limit = 0;
  eval_cmd->add_option("dialogs", dialog_path, "Dialog JSON-lines file")->required();
  eval_cmd->add_option("--limit", eval_limit, "Evaluate only the first N dialogs (0 = all)");
  eval_cmd->add_option("--report", report_path, "Write the report here instead of stdout");

  auto* debug_cmd = app.add_subcommand("select-debug", "Print relevance, redundancy and selection");
  debug_cmd->add_option("dialogs", dialog_path, "Dialog JSON-lines file")->required();
  debug_cmd->add_option("--line", dialog_line, "Zero-based dialog index in the file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return static_cast<int>(ExitCode::kConfig);
  }

  try {
    cfg = resolve_paths(cfg, paths.data_dir);
    auto data = [&](const std::filesystem::path& p) { return p.is_relative() ? paths.data_dir / p : p; };

    if (*ingest) {
      const auto format = ingest_format == "tsv"     ? RecordFormat::kTabSeparated
                          : ingest_format == "lines" ? RecordFormat::kPlainLines
                                                     : RecordFormat::kAuto;
      IngestReport report;
      const auto index = TfIdfIndex::ingest(read_documents(ingest_input, format), &report);
      index.save(cfg.index_path);
      std::cout << nlohmann::json{{"records", report.records},
                                  {"skipped_empty", report.skipped_empty},
                                  {"split_records", report.split_records},
                                  {"documents", index.doc_count()},
                                  {"terms", index.term_count()},
                                  {"index", cfg.index_path.generic_string()}}
                       .dump()
                << '\n';
      return 0;
    }

    if (*train_lm_cmd) {
      const auto corpus = read_lm_corpus(data(lm_corpus));
      const auto vocab = Vocab::build(corpus_words(corpus), min_count);
      std::vector<TokenIds> seqs;
      seqs.reserve(corpus.size());
      for (const auto& segs : corpus) seqs.push_back(encode_training_sequence(vocab, segs));
      lm_opts.seed = cfg.seed;
      auto params = LMParams::random(vocab.size(), hidden, cfg.seed);
      std::cerr << "vocab " << vocab.size() << ", sequences " << seqs.size() << '\n';
      const auto report = train_lm(params, seqs, lm_opts, [](std::size_t epoch, double loss) {
        std::cerr << "epoch " << epoch + 1 << " loss " << loss << '\n';
      });
      vocab.save(cfg.vocab_path);
      params.save(cfg.model_path);
      std::cout << nlohmann::json{{"vocab_size", vocab.size()},
                                  {"initial_loss", report.initial_loss},
                                  {"epoch_losses", report.epoch_losses}}
                       .dump()
                << '\n';
      return 0;
    }

    if (*train_entail_cmd) {
      const auto lm = LanguageModel::load(cfg.vocab_path, cfg.model_path);
      const auto dialogs = read_dialog_file(data(entail_dialogs)).dialogs;
      const auto groups = read_word_groups(data(entail_groups));
      const auto n_val = static_cast<std::size_t>(static_cast<double>(dialogs.size()) * validation_share);
      const std::vector<DialogHistory> train_d(dialogs.begin(), dialogs.end() - static_cast<std::ptrdiff_t>(n_val));
      const std::vector<DialogHistory> val_d(dialogs.end() - static_cast<std::ptrdiff_t>(n_val), dialogs.end());
      auto examples = [&](const std::vector<DialogHistory>& ds, std::uint64_t seed) {
        std::vector<EntailmentExample> out;
        for (const auto& p : synthesize_entailment_pairs(ds, groups, seed)) {
          out.push_back(make_entailment_example(lm, p.history, p.response, p.label));
        }
        return out;
      };
      const auto train = examples(train_d, cfg.seed);
      const auto val = examples(val_d, cfg.seed + 1);
      entail_opts.seed = cfg.seed;
      auto head = EntailmentHead::zeros(lm.params.hidden_size());
      const auto report = train_entailment(head, train, entail_opts);
      head.save(cfg.head_path);
      std::cout << nlohmann::json{{"train_examples", train.size()},
                                  {"validation_examples", val.size()},
                                  {"initial_loss", report.initial_loss},
                                  {"final_loss", report.epoch_losses.empty() ? report.initial_loss
                                                                             : report.epoch_losses.back()},
                                  {"train_accuracy", entailment_accuracy(head, train)},
                                  {"validation_accuracy", entailment_accuracy(head, val)}}
                       .dump()
                << '\n';
      return 0;
    }

    validate(cfg);
    const auto artifacts = load_artifacts(cfg);
    const auto external = external_generator(cfg);

    if (*respond_cmd) {
      const auto history = read_one_dialog(dialog_path, dialog_line);
      const auto turn = respond(artifacts, cfg, history, external.get());
      if (!trace_path.empty()) {
        std::ofstream out(trace_path);
        if (!out) throw ArtifactError("cannot write trace: " + trace_path.string());
        write_trace(out, turn.trace);
      }
      std::cout << turn.final_text << '\n';
      return 0;
    }
    if (*chat_cmd) {
      run_chat(artifacts, cfg, std::cin, std::cout, {chat_trace}, external.get());
      return 0;
    }
    if (*eval_cmd) {
      auto file = read_dialog_file(dialog_path);
      if (eval_limit > 0 && file.dialogs.size() > eval_limit) file.dialogs.resize(eval_limit);
      const auto report = to_json(evaluate(artifacts, cfg, file, external.get())).dump(2);
      if (report_path.empty()) {
        std::cout << report << '\n';
      } else {
        std::ofstream out(report_path);
        if (!out) throw ArtifactError("cannot write report: " + report_path.string());
        out << report << '\n';
      }
      return 0;
    }
    if (*debug_cmd) {
      const auto history = read_one_dialog(dialog_path, dialog_line);
      std::cout << select_debug(artifacts, cfg, history, external.get()).dump(2) << '\n';
      return 0;
    }
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::kParse);
  } catch (const NumericFailure& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return static_cast<int>(ExitCode::kNumeric);
  } catch (const ArtifactError& e) {
    std::cerr << "artifact error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::kConfig);
  } catch (const InvalidArgument& e) {
    std::cerr << "invalid configuration: " << e.what() << '\n';
    return static_cast<int>(ExitCode::kConfig);
  } catch (const SourceUnavailable& e) {
    std::cerr << "knowledge source unavailable: " << e.what() << '\n';
    return static_cast<int>(ExitCode::kGeneric);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::kGeneric);
  }
  return 0;
}
