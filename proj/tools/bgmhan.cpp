// bgmhan: tokenizer training, synthetic data, training, grid search,
// evaluation, baselines, SAR batch runs and correlation analysis.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage error.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "bgmhan/bpe.hpp"
#include "bgmhan/checkpoint.hpp"
#include "bgmhan/error.hpp"
#include "bgmhan/hash.hpp"
#include "bgmhan/http_transport.hpp"
#include "bgmhan/metrics.hpp"
#include "bgmhan/model.hpp"
#include "bgmhan/profile.hpp"
#include "bgmhan/sar.hpp"
#include "bgmhan/synthetic.hpp"
#include "bgmhan/training.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace bgmhan;

namespace {

bool g_quiet = false;

template <class... A>
void log(const char* fmt, A... args) {
  if (g_quiet) return;
  std::fprintf(stderr, fmt, args...);
  std::fputc('\n', stderr);
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path);
  f << content;
  if (!f) throw std::runtime_error("write failed for " + path);
}

// ---------------------------------------------------------------------------
// Run configuration

struct RunConfig {
  json doc;
  ModelConfig model;
  TrainConfig train;
  WorkflowConfig workflow;
  std::uint64_t seed = 0;
  std::string precision = "f32";

  std::string hash() const { return digest(doc.dump()); }

  std::string path(const std::string& name, const std::string& flag) const {
    if (!flag.empty()) return flag;
    if (doc.contains("paths") && doc["paths"].contains(name)) return doc["paths"][name].get<std::string>();
    return {};
  }
};

json default_doc() {
  return {{"seed", 0},
          {"precision", "f32"},
          {"model", to_json(ModelConfig{})},
          {"train", to_json(TrainConfig{})},
          {"workflow", to_json(WorkflowConfig{})},
          {"paths", json::object()}};
}

json parse_scalar(const std::string& text) {
  try {
    return json::parse(text);
  } catch (const json::exception&) {
    return text;
  }
}

struct CommonFlags {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<double> tau, delta;
  std::string client;
  std::optional<std::size_t> threads;
};

RunConfig resolve_config(const CommonFlags& f) {
  json doc = default_doc();
  if (!f.config.empty()) {
    json user;
    try {
      user = json::parse(read_file(f.config));
    } catch (const json::exception& e) {
      throw UsageError("--config: " + f.config + " is not valid JSON: " + e.what());
    }
    if (!user.is_object()) throw UsageError("--config: top level must be an object");
    for (const auto& [k, v] : user.items()) {
      if (!doc.contains(k)) throw UsageError("--config: unknown section '" + k + "'");
      if (doc[k].is_object()) {
        if (!v.is_object()) throw UsageError("--config: section '" + k + "' must be an object");
        for (const auto& [kk, vv] : v.items()) {
          if (k != "paths" && !doc[k].contains(kk)) throw UsageError("--config: unknown key '" + k + "." + kk + "'");
          doc[k][kk] = vv;
        }
      } else {
        doc[k] = v;
      }
    }
  }
  for (const auto& s : f.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("--set expects key.path=value, got '" + s + "'");
    auto key = s.substr(0, eq);
    std::string pointer = "/" + key;
    std::replace(pointer.begin(), pointer.end(), '.', '/');
    const json::json_pointer ptr(pointer);
    if (!doc.contains(ptr) && key.rfind("paths.", 0) != 0) throw UsageError("--set: unknown key '" + key + "'");
    doc[ptr] = parse_scalar(s.substr(eq + 1));
  }
  if (f.seed) doc["seed"] = *f.seed;
  if (f.tau) doc["workflow"]["tau"] = *f.tau;
  if (f.delta) doc["workflow"]["delta"] = *f.delta;
  if (!f.client.empty()) doc["workflow"]["client"] = f.client;
  if (f.threads) doc["workflow"]["threads"] = *f.threads;
  doc["train"]["seed"] = doc["seed"];

  RunConfig rc;
  try {
    rc.seed = doc["seed"].get<std::uint64_t>();
    rc.precision = doc["precision"].get<std::string>();
    update_from_json(rc.model, doc["model"]);
    update_from_json(rc.train, doc["train"]);
    update_from_json(rc.workflow, doc["workflow"]);
  } catch (const json::exception& e) {
    throw UsageError(std::string("config: ") + e.what());
  }
  if (rc.precision != "f32" && rc.precision != "f64") throw UsageError("precision must be f32 or f64");
  rc.workflow.validate();
  rc.doc = std::move(doc);
  return rc;
}

void require_input(const std::string& flag, const std::string& path) {
  if (path.empty()) throw UsageError(flag + " is required");
  if (!fs::exists(path)) throw UsageError(flag + ": " + path + " does not exist");
}

void require_output(const std::string& flag, const std::string& path) {
  if (path.empty()) throw UsageError(flag + " is required");
}

// Sidecar written next to every output file.
void write_manifest(const std::string& out, const std::string& command, const RunConfig& rc,
                    const std::map<std::string, std::string>& inputs, const json& extra = json::object()) {
  json m{{"tool", "bgmhan"},
         {"version", BGMHAN_VERSION},
         {"command", command},
         {"seed", rc.seed},
         {"config_hash", rc.hash()},
         {"config", rc.doc},
         {"output", {{"path", fs::path(out).filename().string()}, {"digest", digest(read_file(out))}}}};
  json in = json::object();
  for (const auto& [name, path] : inputs) in[name] = {{"path", path}, {"digest", digest(read_file(path))}};
  m["inputs"] = std::move(in);
  if (!extra.empty()) m["extra"] = extra;
  write_file(out + ".manifest.json", m.dump(2) + "\n");
}

Vocabulary load_vocab(const std::string& path) { return Vocabulary::deserialize(read_file(path)); }

void check_vocab(const CheckpointInfo& info, const Vocabulary& vocab, const std::string& vocab_path) {
  if (!info.vocab_hash.empty() && info.vocab_hash != vocab.content_hash()) {
    throw std::runtime_error("vocabulary " + vocab_path + " does not match the one the checkpoint was trained with (" +
                             info.vocab_path + ")");
  }
  if (info.config.vocab_size != vocab.size()) {
    throw std::runtime_error("checkpoint expects " + std::to_string(info.config.vocab_size) +
                             " vocabulary entries, " + vocab_path + " has " + std::to_string(vocab.size()));
  }
}

std::string checkpoint_dtype(const std::string& path) {
  return checkpoint_info(parse_checkpoint(read_file(path))).dtype;
}

// ---------------------------------------------------------------------------
// tokenizer

struct TokenizerArgs {
  std::string corpus, out;
  std::size_t size = 5000;
};

std::vector<std::string> load_corpus(const std::string& path) {
  const auto text = read_file(path);
  std::istringstream in(text);
  std::string first;
  while (std::getline(in, first) && detail::blank(first)) {
  }
  std::vector<std::string> docs;
  if (!first.empty() && detail::trim(first).front() == '{') {
    std::istringstream all(text);
    for (const auto& p : read_profiles(all)) {
      for (const auto& t : model_field_texts(impute_missing(p), 4)) docs.push_back(t);
      if (p.analysis) docs.push_back(*p.analysis);
    }
  } else {
    std::istringstream all(text);
    std::string line;
    while (std::getline(all, line))
      if (!detail::blank(line)) docs.push_back(line);
  }
  return docs;
}

int cmd_tokenizer(const TokenizerArgs& a, const CommonFlags& cf) {
  const auto rc = resolve_config(cf);
  const auto corpus_path = rc.path("corpus", a.corpus);
  require_input("--corpus", corpus_path);
  const auto out = rc.path("vocab", a.out);
  require_output("--out", out);
  if (a.size < 2) throw UsageError("--size must be at least 2");
  const auto docs = load_corpus(corpus_path);
  log("tokenizer: %zu documents, target size %zu", docs.size(), a.size);
  const auto vocab = train_bpe(docs, a.size);
  write_file(out, vocab.serialize());
  write_manifest(out, "tokenizer", rc, {{"corpus", corpus_path}}, {{"size", a.size}, {"symbols", vocab.size()}});
  log("tokenizer: wrote %zu symbols to %s", vocab.size(), out.c_str());
  return 0;
}

// ---------------------------------------------------------------------------
// synth / split

struct SynthArgs {
  std::size_t n = 2000;
  double noise = 0, balance = 0.5, missing = 0;
  std::string out;
};

int cmd_synth(const SynthArgs& a, const CommonFlags& cf) {
  const auto rc = resolve_config(cf);
  require_output("--out", a.out);
  const auto ps = generate_synthetic(a.n, rc.seed, {a.balance, a.noise, a.missing});
  save_profiles(a.out, ps);
  write_manifest(a.out, "synth", rc, {},
                 {{"n", a.n}, {"noise", a.noise}, {"balance", a.balance}, {"missing", a.missing}});
  log("synth: wrote %zu profiles to %s", ps.size(), a.out.c_str());
  return 0;
}

struct SplitArgs {
  std::string data, out;
  std::vector<double> ratios{0.90, 0.05, 0.05};
};

int cmd_split(const SplitArgs& a, const CommonFlags& cf) {
  const auto rc = resolve_config(cf);
  const auto data = rc.path("data", a.data);
  require_input("--data", data);
  require_output("--out", a.out);
  if (a.ratios.size() != 3) throw UsageError("--ratios expects three values");
  const auto split = stratified_split(load_profiles(data), {a.ratios[0], a.ratios[1], a.ratios[2]}, rc.seed);
  const std::pair<const char*, const std::vector<Profile>*> parts[] = {
      {"train", &split.train}, {"val", &split.val}, {"test", &split.test}};
  for (const auto& [name, ps] : parts) {
    const auto path = a.out + "." + name + ".jsonl";
    save_profiles(path, *ps);
    write_manifest(path, "split", rc, {{"data", data}}, {{"part", name}, {"ratios", a.ratios}});
    log("split: %zu profiles -> %s", ps->size(), path.c_str());
  }
  return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string train, val, test, vocab, out, history;
};

template <class T>
int run_train(const TrainArgs& a, const RunConfig& rc) {
  const auto train_path = rc.path("train", a.train);
  const auto val_path = rc.path("val", a.val);
  const auto test_path = rc.path("test", a.test);
  const auto vocab_path = rc.path("vocab", a.vocab);
  require_input("--train", train_path);
  require_input("--val", val_path);
  if (!test_path.empty()) require_input("--test", test_path);
  require_input("--vocab", vocab_path);
  require_output("--out", a.out);

  const auto vocab = load_vocab(vocab_path);
  auto mc = rc.model;
  mc.vocab_size = vocab.size();
  mc.validate();
  const auto train_set = make_labeled_set(load_profiles(train_path), vocab, mc);
  const auto val_set = make_labeled_set(load_profiles(val_path), vocab, mc);
  log("train: %zu train / %zu val profiles, %zu fields, vocab %zu, %s", train_set.size(), val_set.size(), mc.fields,
      vocab.size(), rc.precision.c_str());

  Model<T> model(mc, rc.seed);
  const auto t0 = std::chrono::steady_clock::now();
  const auto res = train(model, train_set, val_set, rc.train, [](const EpochRecord& r) {
    log("epoch %3zu  loss %.6f  val_acc %.4f  lr %.3g", r.epoch, r.train_loss, r.val_acc, r.lr);
  });
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const double val_acc = accuracy(model, val_set);

  json extra{{"seed", rc.seed},
             {"train", to_json(rc.train)},
             {"val_acc", val_acc},
             {"best_epoch", res.state.best_epoch},
             {"epochs", res.state.history.size()},
             {"stopped_early", res.stopped_early},
             {"config_hash", rc.hash()},
             {"tool_version", BGMHAN_VERSION}};
  std::optional<MetricReport> test_report;
  if (!test_path.empty()) {
    const auto test_set = make_labeled_set(load_profiles(test_path), vocab, mc);
    std::vector<int> preds;
    for (const double p : predict_probs(model, test_set.inputs)) preds.push_back(decide(p));
    test_report = metrics(preds, test_set.labels);
    extra["test"] = to_json(*test_report);
  }
  save_checkpoint(a.out, model, {mc, "", vocab_path, vocab.content_hash(), extra});

  // The saved file must reproduce the validation accuracy it reports.
  CheckpointInfo info;
  const auto reloaded = load_checkpoint<T>(a.out, &info);
  const double again = accuracy(reloaded, val_set);
  if (std::abs(again - val_acc) > 1e-9) {
    throw std::runtime_error("reloaded checkpoint gives val accuracy " + std::to_string(again) + ", expected " +
                             std::to_string(val_acc));
  }
  std::map<std::string, std::string> inputs{{"train", train_path}, {"val", val_path}, {"vocab", vocab_path}};
  if (!test_path.empty()) inputs["test"] = test_path;
  write_manifest(a.out, "train", rc, inputs, {{"val_acc", val_acc}, {"epochs", res.state.history.size()}});
  if (!a.history.empty()) {
    std::ostringstream h;
    write_history_csv(h, res.state.history);
    write_file(a.history, h.str());
    write_manifest(a.history, "train", rc, inputs);
  }
  log("train: %zu epochs in %.1f s, best epoch %zu, val_acc %.4f%s", res.state.history.size(), secs,
      res.state.best_epoch, val_acc, res.stopped_early ? " (early stop)" : "");
  if (test_report) log("train: test accuracy %.4f, macro F1 %.4f", test_report->accuracy, test_report->f1_macro);
  return 0;
}

int cmd_train(const TrainArgs& a, const CommonFlags& cf) {
  const auto rc = resolve_config(cf);
  return rc.precision == "f64" ? run_train<double>(a, rc) : run_train<float>(a, rc);
}

// ---------------------------------------------------------------------------
// gridsearch

struct GridArgs {
  std::string space, train, val, vocab, out, best;
};

template <class T>
int run_grid(const GridArgs& a, const RunConfig& rc) {
  const auto train_path = rc.path("train", a.train);
  const auto val_path = rc.path("val", a.val);
  const auto vocab_path = rc.path("vocab", a.vocab);
  require_input("--space", a.space);
  require_input("--train", train_path);
  require_input("--val", val_path);
  require_input("--vocab", vocab_path);
  require_output("--out", a.out);
  GridSpace space;
  try {
    space = grid_space_from_json(json::parse(read_file(a.space)));
  } catch (const json::exception& e) {
    throw UsageError("--space: " + std::string(e.what()));
  }
  const auto vocab = load_vocab(vocab_path);
  auto mc = rc.model;
  mc.vocab_size = vocab.size();
  const auto train_set = make_labeled_set(load_profiles(train_path), vocab, mc);
  const auto val_set = make_labeled_set(load_profiles(val_path), vocab, mc);
  log("gridsearch: %zu trials", space.size());
  const auto res = grid_search<T>(space, mc, rc.train, train_set, val_set, [](const GridTrial& t) {
    log("trial %3zu  hidden %zu heads %zu dropout %.2f lr %.1e batch %zu  val_acc %.4f", t.index, t.hidden, t.heads,
        t.dropout, t.lr, t.batch, t.val_acc);
  });
  std::ostringstream csv;
  write_leaderboard_csv(csv, res.leaderboard);
  write_file(a.out, csv.str());
  const std::map<std::string, std::string> inputs{
      {"space", a.space}, {"train", train_path}, {"val", val_path}, {"vocab", vocab_path}};
  write_manifest(a.out, "gridsearch", rc, inputs);
  if (!a.best.empty()) {
    auto doc = rc.doc;
    doc["model"] = to_json(res.best_model);
    doc["model"]["vocab_size"] = 0;
    doc["train"] = to_json(res.best_train);
    write_file(a.best, doc.dump(2) + "\n");
    write_manifest(a.best, "gridsearch", rc, inputs);
  }
  log("gridsearch: best val_acc %.4f (trial %zu)", res.leaderboard.front().val_acc, res.leaderboard.front().index);
  return 0;
}

int cmd_gridsearch(const GridArgs& a, const CommonFlags& cf) {
  const auto rc = resolve_config(cf);
  return rc.precision == "f64" ? run_grid<double>(a, rc) : run_grid<float>(a, rc);
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::string checkpoint, data, vocab, out, table;
};

template <class T>
MetricReport evaluate(const std::string& ck, const std::string& data, std::string vocab_path) {
  CheckpointInfo info;
  const auto model = load_checkpoint<T>(ck, &info);
  if (vocab_path.empty()) vocab_path = info.vocab_path;
  require_input("--vocab", vocab_path);
  const auto vocab = load_vocab(vocab_path);
  check_vocab(info, vocab, vocab_path);
  const auto set = make_labeled_set(load_profiles(data), vocab, model.config());
  std::vector<int> preds;
  for (const double p : predict_probs(model, set.inputs)) preds.push_back(decide(p));
  return metrics(preds, set.labels);
}

int cmd_eval(const EvalArgs& a, const CommonFlags& cf) {
  const auto rc = resolve_config(cf);
  const auto ck = rc.path("checkpoint", a.checkpoint);
  const auto data = rc.path("data", a.data);
  require_input("--checkpoint", ck);
  require_input("--data", data);
  require_output("--out", a.out);
  const auto vocab_path = rc.path("vocab", a.vocab);
  const auto report = checkpoint_dtype(ck) == "f64" ? evaluate<double>(ck, data, vocab_path)
                                                    : evaluate<float>(ck, data, vocab_path);
  write_file(a.out, to_json(report).dump(2) + "\n");
  write_manifest(a.out, "eval", rc, {{"checkpoint", ck}, {"data", data}});
  std::ostringstream table;
  write_metric_table(table, report);
  std::cout << table.str();
  if (!a.table.empty()) {
    write_file(a.table, table.str());
    write_manifest(a.table, "eval", rc, {{"checkpoint", ck}, {"data", data}});
  }
  return 0;
}

// ---------------------------------------------------------------------------
// baseline

struct BaselineArgs {
  std::string method = "tfidf", features = "tfidf", train, test, checkpoint, vocab, out;
  std::size_t k = 5;
};

int cmd_baseline(const BaselineArgs& a, const CommonFlags& cf) {
  const auto rc = resolve_config(cf);
  const auto train_path = rc.path("train", a.train);
  const auto test_path = rc.path("test", a.test);
  require_input("--train", train_path);
  require_input("--test", test_path);
  require_output("--out", a.out);
  const auto train_ps = load_profiles(train_path);
  const auto test_ps = load_profiles(test_path);
  std::map<std::string, std::string> inputs{{"train", train_path}, {"test", test_path}};

  BaselineResult res;
  if (a.method == "tfidf") {
    res = tfidf_logreg(train_ps, test_ps);
  } else if (a.method == "knn-l2" || a.method == "knn-cosine") {
    const auto metric = a.method == "knn-l2" ? Distance::kL2 : Distance::kCosine;
    std::vector<std::vector<double>> xtr, xte;
    std::vector<int> ytr, yte;
    for (const auto& p : train_ps) {
      if (!p.label) throw UsageError("--train: profile '" + p.id + "' has no label");
      ytr.push_back(*p.label);
    }
    for (const auto& p : test_ps) {
      if (!p.label) throw UsageError("--test: profile '" + p.id + "' has no label");
      yte.push_back(*p.label);
    }
    if (a.features == "tfidf") {
      std::vector<std::string> docs;
      for (const auto& p : train_ps) docs.push_back(profile_document(p));
      TfidfVectorizer vec;
      vec.fit(docs);
      for (const auto& d : docs) xtr.push_back(densify(vec.transform(d), vec.size()));
      for (const auto& p : test_ps) xte.push_back(densify(vec.transform(profile_document(p)), vec.size()));
    } else if (a.features == "encoder") {
      const auto ck = rc.path("checkpoint", a.checkpoint);
      require_input("--checkpoint", ck);
      CheckpointInfo info;
      const auto model = load_checkpoint<double>(ck, &info);
      auto vocab_path = rc.path("vocab", a.vocab);
      if (vocab_path.empty()) vocab_path = info.vocab_path;
      require_input("--vocab", vocab_path);
      const auto vocab = load_vocab(vocab_path);
      check_vocab(info, vocab, vocab_path);
      for (const auto& p : train_ps) xtr.push_back(mean_field_embedding(p, vocab, model));
      for (const auto& p : test_ps) xte.push_back(mean_field_embedding(p, vocab, model));
      inputs["checkpoint"] = ck;
    } else {
      throw UsageError("--features must be tfidf or encoder");
    }
    res = knn_retrieval(xtr, ytr, xte, yte, a.k, metric);
  } else {
    throw UsageError("--method must be tfidf, knn-l2 or knn-cosine");
  }
  auto j = to_json(res.report);
  j["method"] = a.method;
  if (a.method != "tfidf") {
    j["features"] = a.features;
    j["k"] = a.k;
  }
  write_file(a.out, j.dump(2) + "\n");
  write_manifest(a.out, "baseline", rc, inputs);
  std::ostringstream table;
  write_metric_table(table, res.report);
  std::cout << table.str();
  return 0;
}

// ---------------------------------------------------------------------------
// analyze / sar / audit

std::unique_ptr<AnalysisClient> make_client(const WorkflowConfig& wc) {
  if (wc.client == "mock") return std::make_unique<MockClient>();
  auto opt = remote_options_from_env();
  opt.max_in_flight = std::max<std::size_t>(wc.threads, 1);
  return std::make_unique<RemoteClient>(opt, http_transport(opt));
}

struct AnalyzeArgs {
  std::string data, out, checkpoint, vocab;
};

template <class T>
std::vector<Profile> shortlisted_only(const std::vector<Profile>& ps, const std::string& ck, std::string vocab_path,
                                      double tau) {
  CheckpointInfo info;
  const auto model = load_checkpoint<T>(ck, &info);
  if (model.config().fields != 4) throw UsageError("--checkpoint must be a 4-field shortlisting model");
  if (vocab_path.empty()) vocab_path = info.vocab_path;
  require_input("--vocab", vocab_path);
  const auto vocab = load_vocab(vocab_path);
  check_vocab(info, vocab, vocab_path);
  std::vector<Profile> out;
  for (const auto& p : ps)
    if (model.predict(tokenize_profile(impute_missing(p), vocab, model.config())) > tau) out.push_back(p);
  return out;
}

int cmd_analyze(const AnalyzeArgs& a, const CommonFlags& cf) {
  const auto rc = resolve_config(cf);
  const auto data = rc.path("data", a.data);
  require_input("--data", data);
  require_output("--out", a.out);
  auto ps = load_profiles(data);
  std::map<std::string, std::string> inputs{{"data", data}};
  const auto ck = rc.path("checkpoint", a.checkpoint);
  if (!ck.empty()) {
    require_input("--checkpoint", ck);
    const auto vocab_path = rc.path("vocab", a.vocab);
    ps = checkpoint_dtype(ck) == "f64" ? shortlisted_only<double>(ps, ck, vocab_path, rc.workflow.tau)
                                       : shortlisted_only<float>(ps, ck, vocab_path, rc.workflow.tau);
    inputs["checkpoint"] = ck;
  }
  const auto client = make_client(rc.workflow);
  std::size_t failed = 0;
  for (auto& p : ps) {
    if (p.analysis && !detail::blank(*p.analysis)) continue;
    try {
      p.analysis = client->analyze(p, build_prompt(p), rc.workflow.generation);
    } catch (const AnalysisError& e) {
      log("analyze: %s", e.what());
      ++failed;
    }
  }
  save_profiles(a.out, ps);
  write_manifest(a.out, "analyze", rc, inputs, {{"client", client->name()}, {"failed", failed}});
  log("analyze: wrote %zu profiles (%zu failed) to %s", ps.size(), failed, a.out.c_str());
  return failed == 0 ? 0 : 1;
}

struct SarArgs {
  std::string checkpoint, recommender, data, vocab, out, summary;
};

std::size_t audit(const std::vector<SarOutcome>& outcomes, double tau, double delta) {
  std::size_t bad = 0;
  for (const auto& o : outcomes) {
    if (const auto v = gating_violation(o, tau, delta)) {
      log("audit: %s: %s", o.id.c_str(), v->c_str());
      ++bad;
    }
  }
  return bad;
}

template <class T>
BatchResult run_sar_batch(const SarArgs&, const RunConfig& rc, const std::string& ck_s, const std::string& ck_r,
                          const std::string& vocab_flag, const std::vector<Profile>& ps) {
  CheckpointInfo info_s, info_r;
  const auto shortlister = load_checkpoint<T>(ck_s, &info_s);
  const auto recommender = load_checkpoint<T>(ck_r, &info_r);
  auto vocab_path = vocab_flag.empty() ? info_s.vocab_path : vocab_flag;
  require_input("--vocab", vocab_path);
  const auto vocab = load_vocab(vocab_path);
  check_vocab(info_s, vocab, vocab_path);
  check_vocab(info_r, vocab, vocab_path);
  const SarModels<T> models{&shortlister, &recommender, &vocab};
  const auto client = make_client(rc.workflow);
  return run_batch(ps, models, *client, rc.workflow);
}

int cmd_sar(const SarArgs& a, const CommonFlags& cf) {
  const auto rc = resolve_config(cf);
  const auto ck_s = rc.path("checkpoint", a.checkpoint);
  const auto ck_r = rc.path("recommender", a.recommender);
  const auto data = rc.path("data", a.data);
  require_input("--checkpoint", ck_s);
  require_input("--recommender", ck_r);
  require_input("--data", data);
  require_output("--out", a.out);
  const auto ps = load_profiles(data);
  const auto dtype = checkpoint_dtype(ck_s);
  if (checkpoint_dtype(ck_r) != dtype) throw UsageError("--checkpoint and --recommender differ in precision");
  const auto vocab_path = rc.path("vocab", a.vocab);
  const auto res = dtype == "f64" ? run_sar_batch<double>(a, rc, ck_s, ck_r, vocab_path, ps)
                                  : run_sar_batch<float>(a, rc, ck_s, ck_r, vocab_path, ps);
  std::ostringstream out;
  write_outcomes(out, res.outcomes);
  write_file(a.out, out.str());
  const std::map<std::string, std::string> inputs{{"checkpoint", ck_s}, {"recommender", ck_r}, {"data", data}};
  write_manifest(a.out, "sar", rc, inputs);

  std::istringstream back(out.str());
  const auto violations = audit(read_outcomes(back), rc.workflow.tau, rc.workflow.delta);
  auto summary = to_json(res.summary);
  summary["audit_violations"] = violations;
  summary["tau"] = rc.workflow.tau;
  summary["delta"] = rc.workflow.delta;
  summary["client"] = rc.workflow.client;
  if (!a.summary.empty()) {
    write_file(a.summary, summary.dump(2) + "\n");
    write_manifest(a.summary, "sar", rc, inputs);
  }
  std::cout << summary.dump(2) << "\n";
  log("sar: %zu profiles, shortlist rate %.4f, offer rate %.4f, %zu failed, %zu audit violations", res.summary.n,
      res.summary.shortlist_rate, res.summary.offer_rate, res.summary.failed, violations);
  return violations == 0 ? 0 : 1;
}

struct AuditArgs {
  std::string outcomes;
};

int cmd_audit(const AuditArgs& a, const CommonFlags& cf) {
  const auto rc = resolve_config(cf);
  require_input("--outcomes", a.outcomes);
  std::ifstream in(a.outcomes);
  const auto outcomes = read_outcomes(in);
  const auto bad = audit(outcomes, rc.workflow.tau, rc.workflow.delta);
  std::cout << json{{"outcomes", outcomes.size()}, {"violations", bad}}.dump() << "\n";
  return bad == 0 ? 0 : 1;
}

// ---------------------------------------------------------------------------
// correlate

struct CorrelateArgs {
  std::string records, out;
};

int cmd_correlate(const CorrelateArgs& a, const CommonFlags& cf) {
  const auto rc = resolve_config(cf);
  require_input("--records", a.records);
  require_output("--out", a.out);
  const auto m = correlation_matrix(load_decision_records(a.records));
  std::ostringstream csv;
  write_correlation_csv(csv, m);
  write_file(a.out, csv.str());
  write_manifest(a.out, "correlate", rc, {{"records", a.records}});
  std::cout << csv.str();
  return 0;
}

void add_common(CLI::App* cmd, CommonFlags& cf) {
  cmd->add_option("--config", cf.config, "JSON run configuration");
  cmd->add_option("--set", cf.sets, "Override a config field, e.g. --set model.d=32 (repeatable)");
  cmd->add_option("--seed", cf.seed, "Random seed");
  cmd->add_option("--threads", cf.threads, "Worker threads for SAR batches");
  cmd->add_flag("--quiet", g_quiet, "Suppress progress logs");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"BGM-HAN admissions classifier and SAR workflow"};
  app.set_version_flag("--version", BGMHAN_VERSION);
  app.require_subcommand(1);

  CommonFlags cf;
  TokenizerArgs tok;
  auto* c_tok = app.add_subcommand("tokenizer", "Train a BPE vocabulary");
  c_tok->add_option("--corpus", tok.corpus, "Profiles JSONL or plain text, one document per line");
  c_tok->add_option("--size", tok.size, "Target vocabulary size")->capture_default_str();
  c_tok->add_option("--out", tok.out, "Vocabulary file to write");
  add_common(c_tok, cf);

  SynthArgs syn;
  auto* c_syn = app.add_subcommand("synth", "Generate planted-rule synthetic profiles");
  c_syn->add_option("--n", syn.n, "Number of profiles")->capture_default_str();
  c_syn->add_option("--noise", syn.noise, "Label flip rate")->capture_default_str();
  c_syn->add_option("--balance", syn.balance, "Fraction of positive profiles")->capture_default_str();
  c_syn->add_option("--missing", syn.missing, "Missing-field rate")->capture_default_str();
  c_syn->add_option("--out", syn.out, "Profiles JSONL to write");
  add_common(c_syn, cf);

  SplitArgs spl;
  auto* c_spl = app.add_subcommand("split", "Stratified train/val/test split");
  c_spl->add_option("--data", spl.data, "Labeled profiles JSONL");
  c_spl->add_option("--ratios", spl.ratios, "train val test fractions")->expected(3)->capture_default_str();
  c_spl->add_option("--out", spl.out, "Output prefix; writes PREFIX.{train,val,test}.jsonl");
  add_common(c_spl, cf);

  TrainArgs trn;
  auto* c_trn = app.add_subcommand("train", "Train a model and write a checkpoint");
  c_trn->add_option("--train", trn.train, "Training profiles");
  c_trn->add_option("--val", trn.val, "Validation profiles");
  c_trn->add_option("--test", trn.test, "Optional test profiles, scored after training");
  c_trn->add_option("--vocab", trn.vocab, "Vocabulary file");
  c_trn->add_option("--out", trn.out, "Checkpoint to write");
  c_trn->add_option("--history", trn.history, "Per-epoch history CSV");
  add_common(c_trn, cf);

  GridArgs grd;
  auto* c_grd = app.add_subcommand("gridsearch", "Grid search over model/training hyperparameters");
  c_grd->add_option("--space", grd.space, "JSON search space");
  c_grd->add_option("--train", grd.train, "Training profiles");
  c_grd->add_option("--val", grd.val, "Validation profiles");
  c_grd->add_option("--vocab", grd.vocab, "Vocabulary file");
  c_grd->add_option("--out", grd.out, "Leaderboard CSV");
  c_grd->add_option("--best-config", grd.best, "Write the winning configuration here");
  add_common(c_grd, cf);

  EvalArgs evl;
  auto* c_evl = app.add_subcommand("eval", "Score a checkpoint on labeled profiles");
  c_evl->add_option("--checkpoint", evl.checkpoint, "Checkpoint");
  c_evl->add_option("--data", evl.data, "Labeled profiles");
  c_evl->add_option("--vocab", evl.vocab, "Vocabulary (defaults to the one recorded in the checkpoint)");
  c_evl->add_option("--out", evl.out, "JSON report");
  c_evl->add_option("--table", evl.table, "Also write the text table here");
  add_common(c_evl, cf);

  BaselineArgs bsl;
  auto* c_bsl = app.add_subcommand("baseline", "TF-IDF logistic regression or k-NN retrieval");
  c_bsl->add_option("--method", bsl.method, "tfidf | knn-l2 | knn-cosine")->capture_default_str();
  c_bsl->add_option("--features", bsl.features, "k-NN features: tfidf | encoder")->capture_default_str();
  c_bsl->add_option("--k", bsl.k, "Neighbours")->capture_default_str();
  c_bsl->add_option("--train", bsl.train, "Training profiles");
  c_bsl->add_option("--test", bsl.test, "Test profiles");
  c_bsl->add_option("--checkpoint", bsl.checkpoint, "Encoder checkpoint for --features encoder");
  c_bsl->add_option("--vocab", bsl.vocab, "Vocabulary for --features encoder");
  c_bsl->add_option("--out", bsl.out, "JSON report");
  add_common(c_bsl, cf);

  AnalyzeArgs anl;
  auto* c_anl = app.add_subcommand("analyze", "Attach generated analyses to profiles");
  c_anl->add_option("--data", anl.data, "Profiles");
  c_anl->add_option("--checkpoint", anl.checkpoint, "Keep only profiles this shortlisting model passes");
  c_anl->add_option("--vocab", anl.vocab, "Vocabulary for --checkpoint");
  c_anl->add_option("--tau", cf.tau, "Shortlist threshold for --checkpoint");
  c_anl->add_option("--client", cf.client, "mock | remote");
  c_anl->add_option("--out", anl.out, "Profiles JSONL with analyses");
  add_common(c_anl, cf);

  SarArgs sar;
  auto* c_sar = app.add_subcommand("sar", "Run the Shortlist-Analyze-Recommend workflow");
  c_sar->add_option("--checkpoint", sar.checkpoint, "Shortlisting model (4 fields)");
  c_sar->add_option("--recommender", sar.recommender, "Recommendation model (5 fields)");
  c_sar->add_option("--data", sar.data, "Profiles");
  c_sar->add_option("--vocab", sar.vocab, "Vocabulary (defaults to the one recorded in the checkpoint)");
  c_sar->add_option("--tau", cf.tau, "Shortlist threshold");
  c_sar->add_option("--delta", cf.delta, "Recommend threshold");
  c_sar->add_option("--client", cf.client, "mock | remote");
  c_sar->add_option("--out", sar.out, "Outcomes JSONL");
  c_sar->add_option("--summary", sar.summary, "Summary JSON");
  add_common(c_sar, cf);

  AuditArgs aud;
  auto* c_aud = app.add_subcommand("audit", "Check the gating rules over an outcomes file");
  c_aud->add_option("--outcomes", aud.outcomes, "Outcomes JSONL");
  c_aud->add_option("--tau", cf.tau, "Shortlist threshold used for the run");
  c_aud->add_option("--delta", cf.delta, "Recommend threshold used for the run");
  add_common(c_aud, cf);

  CorrelateArgs cor;
  auto* c_cor = app.add_subcommand("correlate", "Pearson correlation of decision-point scores");
  c_cor->add_option("--records", cor.records, "CSV: id plus SL,AR,SR,DO,SO,Adm");
  c_cor->add_option("--out", cor.out, "Matrix CSV");
  add_common(c_cor, cf);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (c_tok->parsed()) return cmd_tokenizer(tok, cf);
    if (c_syn->parsed()) return cmd_synth(syn, cf);
    if (c_spl->parsed()) return cmd_split(spl, cf);
    if (c_trn->parsed()) return cmd_train(trn, cf);
    if (c_grd->parsed()) return cmd_gridsearch(grd, cf);
    if (c_evl->parsed()) return cmd_eval(evl, cf);
    if (c_bsl->parsed()) return cmd_baseline(bsl, cf);
    if (c_anl->parsed()) return cmd_analyze(anl, cf);
    if (c_sar->parsed()) return cmd_sar(sar, cf);
    if (c_aud->parsed()) return cmd_audit(aud, cf);
    if (c_cor->parsed()) return cmd_correlate(cor, cf);
  } catch (const DimensionError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 2;
}
