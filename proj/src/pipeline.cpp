#include "kinject/pipeline.hpp"

#include <atomic>
#include <exception>
#include <functional>
#include <istream>
#include <map>
#include <ostream>
#include <thread>

#include "kinject/errors.hpp"
#include "kinject/text_metrics.hpp"
#include "seeding.hpp"

namespace kinject {
namespace {

nlohmann::json stage(std::string_view name) {
  return {{"schema", kTraceSchema}, {"stage", name}};
}

nlohmann::json snippet_json(const KnowledgeSnippet& s) {
  return {{"text", s.text}, {"source", to_string(s.source)}, {"origin", s.origin}, {"raw_score", s.raw_score}};
}

nlohmann::json matrix_json(const Eigen::MatrixXd& m) {
  auto rows = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    auto row = nlohmann::json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

nlohmann::json vector_json(const Eigen::VectorXd& v) {
  return std::vector<double>(v.data(), v.data() + v.size());
}

std::shared_ptr<const LanguageModel> load_model(const std::filesystem::path& vocab,
                                                const std::filesystem::path& params) {
  for (const auto& p : {vocab, params}) {
    if (!std::filesystem::exists(p)) throw ArtifactError("missing artifact: " + p.string());
  }
  return std::make_shared<const LanguageModel>(LanguageModel::load(vocab, params));
}

// Runs fn(i) for i in [0, n) on up to `workers` threads; the first exception
// (by index) is rethrown after all workers finish.
void parallel_for(std::size_t n, std::size_t workers, const std::function<void(std::size_t)>& fn) {
  if (workers <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  std::vector<std::jthread> pool;
  for (std::size_t w = 0; w < std::min(workers, n); ++w) {
    pool.emplace_back([&] {
      for (std::size_t i; (i = next.fetch_add(1)) < n;) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  pool.clear();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

}  // namespace

Artifacts load_artifacts(const PipelineConfig& cfg) {
  Artifacts a;
  a.model = load_model(cfg.vocab_path, cfg.model_path);
  auto role = [&](const std::filesystem::path& p) {
    return p.empty() || p == cfg.model_path ? a.model : load_model(cfg.vocab_path, p);
  };
  a.scorer = role(cfg.scorer_path);
  a.generator_lm = role(cfg.generator_path);
  if (!std::filesystem::exists(cfg.head_path)) throw ArtifactError("missing artifact: " + cfg.head_path.string());
  a.head = EntailmentHead::load(cfg.head_path, a.model->params.hidden_size());
  if (cfg.use_nonparametric) {
    if (!std::filesystem::exists(cfg.index_path)) {
      throw ArtifactError("missing artifact: " + cfg.index_path.string());
    }
    a.index = TfIdfIndex::load(cfg.index_path);
  }
  a.stopwords = read_word_list(cfg.stopwords_path);
  a.blocklist = read_word_list(cfg.blocklist_path);
  return a;
}

PoolResult acquire_and_select(const Artifacts& artifacts, const PipelineConfig& cfg,
                              const DialogHistory& full_history, KnowledgeGenerator* external,
                              std::vector<nlohmann::json>* trace, std::vector<std::string>* warnings) {
  if (full_history.empty()) throw InvalidArgument("dialog history is empty");
  auto emit = [&](nlohmann::json j) {
    if (trace) trace->push_back(std::move(j));
  };
  auto warn = [&](std::string w) {
    if (warnings) warnings->push_back(std::move(w));
  };
  const auto history = full_history.last(cfg.history_turns);
  const auto& model = *artifacts.model;
  PoolResult r;

  r.context = encode_dialog_context(model.vocab, history);
  r.initial = greedy_decode(model.params, r.context, cfg.decode.max_len, cfg.decode.tau);
  const auto initial_words = render_response(model.vocab, r.initial.tokens);
  r.initial_text = join(initial_words);
  {
    auto j = stage("initial");
    j["tokens"] = r.initial.tokens;
    j["text"] = r.initial_text;
    emit(std::move(j));
  }

  const auto phrases = extract_keyphrases(history, initial_words, artifacts.stopwords, cfg.max_keyphrases);
  {
    auto j = stage("keyphrases");
    j["phrases"] = nlohmann::json::array();
    for (const auto& p : phrases) j["phrases"].push_back({{"text", p.text}, {"score", p.score}});
    emit(std::move(j));
  }

  std::vector<KnowledgeSnippet> parametric, nonparametric;
  bool no_keyphrases = false;
  if (cfg.use_parametric) {
    LocalGenerator local(*artifacts.generator_lm, cfg.decode.tau);
    KnowledgeGenerator& gen = external ? *external : local;
    ParametricOptions opts;
    opts.per_phrase = cfg.per_phrase;
    opts.top_p = cfg.top_p;
    opts.seed = derive_seed(cfg.seed, {1});
    try {
      auto res = parametric_snippets(gen, *artifacts.scorer, history, phrases, opts);
      parametric = std::move(res.snippets);
      no_keyphrases = res.no_keyphrases;
      if (no_keyphrases) warn("no key phrases extracted; parametric source skipped");
    } catch (const SourceUnavailable& e) {
      warn(std::string("parametric source unavailable: ") + e.what());
    }
  }
  if (cfg.use_nonparametric && artifacts.index) {
    try {
      nonparametric = nonparametric_snippets(*artifacts.index, history, initial_words, cfg.n_nonparametric);
    } catch (const EmptyQuery&) {
      warn("retrieval query has no tokens");
    }
  }
  const auto n_param = parametric.size();
  const auto n_nonparam = nonparametric.size();
  std::size_t duplicates = 0;
  auto merged = merge_snippet_pools(std::move(nonparametric), std::move(parametric), &duplicates);
  auto filtered = filter_snippets(std::move(merged), artifacts.blocklist);
  r.pool = std::move(filtered.kept);
  {
    auto j = stage("acquisition");
    j["parametric"] = n_param;
    j["nonparametric"] = n_nonparam;
    j["duplicates"] = duplicates;
    j["no_keyphrases"] = no_keyphrases;
    j["snippets"] = nlohmann::json::array();
    for (const auto& s : r.pool) j["snippets"].push_back(snippet_json(s));
    emit(std::move(j));
    auto f = stage("filter");
    f["dropped"] = filtered.dropped;
    f["kept"] = r.pool.size();
    emit(std::move(f));
  }
  if (r.pool.empty()) return r;

  std::vector<std::string> texts;
  texts.reserve(r.pool.size());
  for (const auto& s : r.pool) texts.push_back(s.text);
  r.scores = score_snippets(*artifacts.scorer, texts, history);
  r.kernel = build_kernel(r.scores, cfg.beta_init);
  r.selection = greedy_map(r.kernel->D, std::min(cfg.B, r.pool.size()));
  {
    auto s = stage("scores");
    s["rel"] = vector_json(r.scores.rel);
    s["red"] = matrix_json(r.scores.red);
    emit(std::move(s));
    auto k = stage("kernel");
    k["D"] = matrix_json(r.kernel->D);
    k["beta_used"] = r.kernel->beta_used;
    k["jitter"] = r.kernel->jitter_used;
    k["psd_certified"] = r.kernel->psd_certified;
    k["halvings"] = r.kernel->halvings;
    emit(std::move(k));
    auto sel = stage("selection");
    sel["order"] = r.selection.order;
    sel["log_det"] = r.selection.log_det;
    emit(std::move(sel));
  }
  return r;
}

TurnResult respond(const Artifacts& artifacts, const PipelineConfig& cfg, const DialogHistory& full_history,
                   KnowledgeGenerator* external) {
  if (full_history.empty()) throw InvalidArgument("dialog history is empty");
  validate(cfg);
  TurnResult out;
  {
    auto c = stage("config");
    c["config"] = to_json(cfg);
    out.trace.push_back(std::move(c));
    auto h = stage("history");
    h["history"] = to_json(full_history);
    out.trace.push_back(std::move(h));
  }
  const auto history = full_history.last(cfg.history_turns);
  auto pr = acquire_and_select(artifacts, cfg, full_history, external, &out.trace, &out.warnings);
  out.initial_text = pr.initial_text;
  const auto& model = *artifacts.model;

  for (auto idx : pr.selection.order) out.selected.push_back({pr.pool[idx], idx});
  out.injected = !out.selected.empty();

  struct Attempt {
    std::optional<InjectionResult> result;
    std::optional<InjectionTrace> failed_trace;
    std::string error;
  };
  std::vector<Attempt> attempts(out.selected.size());
  parallel_for(out.selected.size(), cfg.workers, [&](std::size_t i) {
    const auto& sel = out.selected[i];
    DecodeConfig dc = cfg.decode;
    dc.seed = derive_seed(cfg.seed, {2, i});
    auto knowledge = model.vocab.encode_text(sel.snippet.text);
    try {
      if (knowledge.empty()) throw InvalidArgument("snippet has no tokens");
      attempts[i].result = inject(model.params, artifacts.head, pr.context, pr.initial, knowledge, dc,
                                  sel.snippet.origin);
    } catch (const InjectionError& e) {
      attempts[i].failed_trace = e.trace();
      attempts[i].error = e.what();
    } catch (const NumericFailure& e) {
      attempts[i].error = e.what();
    } catch (const InvalidArgument& e) {
      attempts[i].error = e.what();
    }
  });

  std::vector<CandidateResponse> candidates{{pr.initial.tokens, "initial"}};
  for (std::size_t i = 0; i < attempts.size(); ++i) {
    auto j = stage("injection");
    j["snippet_id"] = out.selected[i].snippet.origin;
    j["pool_index"] = out.selected[i].pool_index;
    const auto& a = attempts[i];
    const InjectionTrace* t = a.result ? &a.result->trace : (a.failed_trace ? &*a.failed_trace : nullptr);
    j["iterations"] = nlohmann::json::array();
    if (t) {
      for (const auto& rec : t->iterations) {
        j["iterations"].push_back({{"iteration", rec.iteration},
                                   {"ce", rec.ce},
                                   {"entail_log_prob", rec.entail_log_prob},
                                   {"objective", rec.objective},
                                   {"grad_norm", rec.grad_norm},
                                   {"forward_shift", rec.forward_shift}});
      }
    }
    if (a.result) {
      const auto words = render_response(model.vocab, a.result->tokens);
      j["final_ce"] = t->final_ce;
      j["final_entail_log_prob"] = t->final_entail_log_prob;
      j["tokens"] = a.result->tokens;
      j["text"] = join(words);
      if (words.empty() && !pr.initial_text.empty()) {
        j["status"] = "empty";
        out.warnings.push_back("injection of " + out.selected[i].snippet.origin + " produced an empty response");
      } else {
        j["status"] = "ok";
        candidates.push_back({a.result->tokens, out.selected[i].snippet.origin});
      }
    } else {
      j["status"] = "failed";
      j["error"] = a.error;
      out.warnings.push_back("injection of " + out.selected[i].snippet.origin + " failed: " + a.error);
    }
    out.trace.push_back(std::move(j));
  }

  out.ranking = score_candidates(*artifacts.scorer, history, std::move(candidates));
  {
    auto j = stage("ranking");
    j["candidates"] = nlohmann::json::array();
    for (const auto& r : out.ranking) {
      j["candidates"].push_back({{"rank", r.rank},
                                 {"index", r.index},
                                 {"provenance", r.candidate.provenance},
                                 {"text", join(render_response(model.vocab, r.candidate.tokens))},
                                 {"distinct2", r.distinct2},
                                 {"cond_loglik", r.cond_loglik},
                                 {"z_distinct2", r.z_distinct2},
                                 {"z_loglik", r.z_loglik},
                                 {"combined", r.combined}});
      if (r.index == 0) out.initial_combined = r.combined;
    }
    out.trace.push_back(std::move(j));
  }
  const auto& winner = out.ranking.front();
  out.final_tokens = winner.candidate.tokens;
  out.final_provenance = winner.candidate.provenance;
  out.final_text = join(render_response(model.vocab, out.final_tokens));
  out.final_combined = winner.combined;
  {
    auto j = stage("final");
    j["text"] = out.final_text;
    j["provenance"] = out.final_provenance;
    j["injected"] = out.injected;
    j["no_injection"] = !out.injected;
    j["warnings"] = out.warnings;
    out.trace.push_back(std::move(j));
  }
  return out;
}

std::vector<std::string> validate_trace_line(const nlohmann::json& line) {
  using Type = nlohmann::json::value_t;
  std::vector<std::string> problems;
  if (!line.is_object()) return {"trace line is not an object"};
  if (!line.contains("schema") || line["schema"] != kTraceSchema) problems.push_back("missing or wrong schema");
  if (!line.contains("stage") || !line["stage"].is_string()) {
    problems.push_back("missing stage");
    return problems;
  }
  enum Kind { kObject, kArray, kString, kNumber, kBool };
  static const std::map<std::string, std::vector<std::pair<std::string, Kind>>> layouts = {
      {"config", {{"config", kObject}}},
      {"history", {{"history", kObject}}},
      {"initial", {{"tokens", kArray}, {"text", kString}}},
      {"keyphrases", {{"phrases", kArray}}},
      {"acquisition",
       {{"parametric", kNumber}, {"nonparametric", kNumber}, {"duplicates", kNumber},
        {"no_keyphrases", kBool}, {"snippets", kArray}}},
      {"filter", {{"dropped", kNumber}, {"kept", kNumber}}},
      {"scores", {{"rel", kArray}, {"red", kArray}}},
      {"kernel",
       {{"D", kArray}, {"beta_used", kNumber}, {"jitter", kNumber}, {"psd_certified", kBool},
        {"halvings", kNumber}}},
      {"selection", {{"order", kArray}, {"log_det", kArray}}},
      {"injection",
       {{"snippet_id", kString}, {"pool_index", kNumber}, {"iterations", kArray}, {"status", kString}}},
      {"ranking", {{"candidates", kArray}}},
      {"final",
       {{"text", kString}, {"provenance", kString}, {"injected", kBool}, {"no_injection", kBool},
        {"warnings", kArray}}},
  };
  const auto name = line["stage"].get<std::string>();
  const auto it = layouts.find(name);
  if (it == layouts.end()) {
    problems.push_back("unknown stage " + name);
    return problems;
  }
  for (const auto& [key, kind] : it->second) {
    if (!line.contains(key)) {
      problems.push_back(name + ": missing " + key);
      continue;
    }
    const auto t = line[key].type();
    const bool ok = (kind == kObject && t == Type::object) || (kind == kArray && t == Type::array) ||
                    (kind == kString && t == Type::string) || (kind == kBool && t == Type::boolean) ||
                    (kind == kNumber && line[key].is_number());
    if (!ok) problems.push_back(name + ": wrong type for " + key);
  }
  if (name == "injection" && line["status"] == "ok") {
    for (const char* key : {"final_ce", "final_entail_log_prob"}) {
      if (!line.contains(key) || !line[key].is_number()) problems.push_back(std::string("injection: bad ") + key);
    }
    if (!line.contains("tokens") || !line["tokens"].is_array()) problems.push_back("injection: bad tokens");
  }
  return problems;
}

void write_trace(std::ostream& out, const std::vector<nlohmann::json>& trace) {
  for (const auto& j : trace) out << j.dump() << '\n';
}

std::size_t run_chat(const Artifacts& artifacts, const PipelineConfig& cfg, std::istream& in,
                     std::ostream& out, ChatOptions options, KnowledgeGenerator* external) {
  DialogHistory history;
  std::size_t replies = 0;
  std::string line;
  while (out << "> " << std::flush, std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line == "/quit") break;
    if (line == "/trace") {
      options.show_trace = !options.show_trace;
      out << "trace " << (options.show_trace ? "on" : "off") << '\n';
      continue;
    }
    if (tokenize(line).empty()) continue;
    history.turns.push_back({Speaker::kUser, line});
    try {
      const auto turn = respond(artifacts, cfg, history, external);
      history.turns.push_back({Speaker::kSystem, turn.final_text});
      ++replies;
      out << "system: " << turn.final_text << '\n';
      if (options.show_trace) {
        for (const auto& s : turn.selected) {
          out << "  [" << to_string(s.snippet.source) << "] " << s.snippet.origin << ": " << s.snippet.text << '\n';
        }
        out << "  chosen: " << turn.final_provenance << '\n';
      }
    } catch (const std::exception& e) {
      history.turns.pop_back();
      out << "error: " << e.what() << '\n';
    }
  }
  return replies;
}

EvalReport evaluate(const Artifacts& artifacts, const PipelineConfig& cfg, const DialogFile& dialogs,
                    KnowledgeGenerator* external) {
  EvalReport report;
  report.skipped = dialogs.malformed;
  std::vector<TokenSeq> initial, final;
  double lift = 0.0, d2_init = 0.0, d2_final = 0.0;
  for (const auto& d : dialogs.dialogs) {
    if (d.empty()) {
      ++report.skipped;
      continue;
    }
    try {
      const auto turn = respond(artifacts, cfg, d, external);
      initial.push_back(tokenize(turn.initial_text));
      final.push_back(tokenize(turn.final_text));
      report.initial_responses.push_back(turn.initial_text);
      report.final_responses.push_back(turn.final_text);
      d2_init += distinct_n(initial.back(), 2);
      d2_final += distinct_n(final.back(), 2);
      lift += turn.final_combined - turn.initial_combined;
      if (turn.injected) ++report.injected;
      ++report.dialogs;
    } catch (const NumericFailure&) {
      ++report.failed;
    }
  }
  if (report.dialogs == 0) return report;
  const double n = static_cast<double>(report.dialogs);
  report.initial_distinct2 = distinct_n(std::span<const TokenSeq>(initial), 2);
  report.final_distinct2 = distinct_n(std::span<const TokenSeq>(final), 2);
  report.mean_initial_distinct2 = d2_init / n;
  report.mean_final_distinct2 = d2_final / n;
  report.mean_combined_lift = lift / n;
  auto safe_entr = [](const std::vector<TokenSeq>& seqs) -> std::optional<double> {
    try {
      return entr(std::span<const TokenSeq>(seqs));
    } catch (const InvalidArgument&) {
      return std::nullopt;
    }
  };
  report.initial_entr = safe_entr(initial);
  report.final_entr = safe_entr(final);
  return report;
}

nlohmann::json to_json(const EvalReport& r) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  return {{"dialogs", r.dialogs},
          {"skipped", r.skipped},
          {"failed", r.failed},
          {"injected", r.injected},
          {"initial", {{"distinct2", r.initial_distinct2}, {"mean_distinct2", r.mean_initial_distinct2},
                       {"entr", opt(r.initial_entr)}, {"responses", r.initial_responses}}},
          {"final", {{"distinct2", r.final_distinct2}, {"mean_distinct2", r.mean_final_distinct2},
                     {"entr", opt(r.final_entr)}, {"responses", r.final_responses}}},
          {"mean_combined_lift", r.mean_combined_lift}};
}

nlohmann::json select_debug(const Artifacts& artifacts, const PipelineConfig& cfg,
                            const DialogHistory& history, KnowledgeGenerator* external) {
  validate(cfg);
  std::vector<std::string> warnings;
  const auto pr = acquire_and_select(artifacts, cfg, history, external, nullptr, &warnings);
  nlohmann::json j;
  j["initial"] = pr.initial_text;
  j["snippets"] = nlohmann::json::array();
  for (const auto& s : pr.pool) j["snippets"].push_back(snippet_json(s));
  j["rel"] = vector_json(pr.scores.rel);
  j["red"] = matrix_json(pr.scores.red);
  if (pr.kernel) {
    j["beta_used"] = pr.kernel->beta_used;
    j["jitter"] = pr.kernel->jitter_used;
    j["psd_certified"] = pr.kernel->psd_certified;
  } else {
    j["beta_used"] = nullptr;
    j["jitter"] = nullptr;
    j["psd_certified"] = false;
  }
  j["selection"] = pr.selection.order;
  j["log_det"] = pr.selection.log_det;
  j["warnings"] = warnings;
  return j;
}

}  // namespace kinject
