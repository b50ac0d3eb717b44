#pragma once

// Shortlist -> Analyze -> Recommend.
//
// A_S is a four-field model, A_R a five-field model that reads the analysis
// as its last field. The analysis agent is any AnalysisClient; MockClient is
// deterministic and RemoteClient speaks the JSON request/response contract
// through a pluggable transport (see http_transport.hpp for the HTTP one).

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <cstdlib>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <ostream>
#include <regex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "bgmhan/bpe.hpp"
#include "bgmhan/error.hpp"
#include "bgmhan/hash.hpp"
#include "bgmhan/metrics.hpp"
#include "bgmhan/model.hpp"
#include "bgmhan/profile.hpp"
#include "bgmhan/synthetic.hpp"

namespace bgmhan {

struct GenerationParams {
  double temperature = 0.3;
  double top_p = 0.8;
  int top_k = 40;
  int max_tokens = 1024;

  bool operator==(const GenerationParams&) const = default;
};

struct WorkflowConfig {
  double tau = 0.5;
  double delta = 0.5;
  std::string client = "mock";  // mock | remote
  GenerationParams generation;
  std::size_t threads = 1;
  bool record_timing = false;

  void validate() const {
    if (!(tau > 0 && tau < 1)) throw UsageError("tau must lie in (0, 1)");
    if (!(delta > 0 && delta < 1)) throw UsageError("delta must lie in (0, 1)");
    if (client != "mock" && client != "remote") throw UsageError("client must be 'mock' or 'remote'");
    if (threads == 0) throw UsageError("threads must be at least 1");
  }
};

inline nlohmann::json to_json(const WorkflowConfig& c) {
  return {{"tau", c.tau},
          {"delta", c.delta},
          {"client", c.client},
          {"temperature", c.generation.temperature},
          {"top_p", c.generation.top_p},
          {"top_k", c.generation.top_k},
          {"max_tokens", c.generation.max_tokens},
          {"threads", c.threads},
          {"record_timing", c.record_timing}};
}

inline void update_from_json(WorkflowConfig& c, const nlohmann::json& j) {
  for (const auto& [k, v] : j.items()) {
    if (k == "tau") v.get_to(c.tau);
    else if (k == "delta") v.get_to(c.delta);
    else if (k == "client") v.get_to(c.client);
    else if (k == "temperature") v.get_to(c.generation.temperature);
    else if (k == "top_p") v.get_to(c.generation.top_p);
    else if (k == "top_k") v.get_to(c.generation.top_k);
    else if (k == "max_tokens") v.get_to(c.generation.max_tokens);
    else if (k == "threads") v.get_to(c.threads);
    else if (k == "record_timing") v.get_to(c.record_timing);
    else throw UsageError("unknown workflow key '" + k + "'");
  }
}

// ---------------------------------------------------------------------------
// Prompt

inline const std::string kAnalysisPrompt =
    "You are an experienced university admission officer. Your task is to analyze and summarise this "
    "candidate's profile comprehensively across multiple aspects:\n"
    "\n"
    "1. Academic Strength Assessment:\n"
    "   - GCEA Results: {GCEA Results}\n"
    "   - GCEO Results: {GCEO Results}\n"
    "   - Focus on performance in STEM subjects\n"
    "   - Note any special academic achievements (H3, merit awards, etc.)\n"
    "2. Technical Aptitude:\n"
    "   - Evaluate demonstrated interest and capability in STEM\n"
    "   - Look for project work, independent learning, or technical activities\n"
    "   - Consider any innovative or creative technical solutions mentioned\n"
    "3. Leadership & Soft Skills:\n"
    "   {Leadership Experience}\n"
    "   - Analyze leadership roles and responsibilities\n"
    "   - Evaluate team collaboration and project management experience\n"
    "   - Consider diversity of leadership experiences\n"
    "4. Personal Insight Questions Analysis:\n"
    "   {Personal Insight Questions}\n"
    "   - Assess motivation and alignment with engineering\n"
    "   - Evaluate cultural fit with institutional core values: Leadership, Integrity, Passion, Collaboration, "
    "Creativity\n"
    "   - Look for evidence of red flags or negative traits against institutional core values\n"
    "\n"
    "Based on these inputs, provide a balanced 150-200 word analysis with precise language, that:\n"
    "1. Highlights key strengths that make them suitable for engineering\n"
    "2. Identifies any potential areas of concern\n"
    "3. Evaluates their overall fit for an engineering program\n"
    "4. Comments on their potential to contribute to a collaborative learning environment\n"
    "\n"
    "Focus on specific evidence from their profile rather than general statements.\n";

// Replaces every {Name}; each placeholder must have a value and every value
// must be used.
inline std::string fill_template(const std::string& tmpl, const std::map<std::string, std::string>& values) {
  static const std::regex placeholder(R"(\{([A-Za-z][A-Za-z ]*)\})");
  std::string out;
  std::map<std::string, bool> used;
  auto last = tmpl.cbegin();
  for (auto it = std::sregex_iterator(tmpl.begin(), tmpl.end(), placeholder); it != std::sregex_iterator(); ++it) {
    const auto name = (*it)[1].str();
    const auto v = values.find(name);
    if (v == values.end()) throw UsageError("prompt template: no value for placeholder {" + name + "}");
    out.append(last, (*it)[0].first);
    out += v->second;
    used[name] = true;
    last = (*it)[0].second;
  }
  out.append(last, tmpl.cend());
  for (const auto& [k, v] : values) {
    if (!used.count(k)) throw UsageError("prompt template: placeholder {" + k + "} not found");
  }
  return out;
}

inline std::string build_prompt(const Profile& p, const std::string& tmpl = kAnalysisPrompt) {
  const auto f = impute_missing(p);
  return fill_template(tmpl, {{"GCEA Results", field_text(f, Field::kGcea)},
                              {"GCEO Results", field_text(f, Field::kGceo)},
                              {"Leadership Experience", field_text(f, Field::kLeadership)},
                              {"Personal Insight Questions", field_text(f, Field::kPiq)}});
}

// ---------------------------------------------------------------------------
// Clients

class AnalysisError : public std::runtime_error {
 public:
  AnalysisError(std::string profile_id, const std::string& msg)
      : std::runtime_error("analysis failed for '" + profile_id + "': " + msg), profile_id_(std::move(profile_id)) {}
  const std::string& profile_id() const { return profile_id_; }

 private:
  std::string profile_id_;
};

class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class AnalysisClient {
 public:
  virtual ~AnalysisClient() = default;
  virtual std::string name() const = 0;
  // Must be safe to call concurrently.
  virtual std::string analyze(const Profile& p, const std::string& prompt, const GenerationParams& theta) = 0;
};

inline std::size_t word_count(std::string_view text) {
  std::size_t n = 0;
  bool in_word = false;
  for (const char c : text) {
    const bool space = std::isspace(static_cast<unsigned char>(c)) != 0;
    if (!space && !in_word) ++n;
    in_word = !space;
  }
  return n;
}

struct ExtractedFeatures {
  std::map<char, std::size_t> h2_grades;
  std::size_t h2_subjects = 0;
  std::optional<long> uas;
  std::size_t roles = 0;
  std::vector<std::string> role_names;
  std::size_t senior_roles = 0;
  std::size_t positive = 0;
  std::size_t negative = 0;
};

inline ExtractedFeatures extract_features(const Profile& p) {
  ExtractedFeatures f;
  static const std::regex h2(R"(H2 [A-Z ]+ ([A-EUS])\b)");
  for (auto it = std::sregex_iterator(p.gcea.begin(), p.gcea.end(), h2); it != std::sregex_iterator(); ++it) {
    ++f.h2_grades[(*it)[1].str()[0]];
    ++f.h2_subjects;
  }
  static const std::regex uas(R"(UAS:\s*([0-9]+(?:\.[0-9]+)?))");
  std::smatch m;
  if (std::regex_search(p.gcea, m, uas)) f.uas = std::lround(std::stod(m[1].str()));
  static const std::regex level(R"(Level:\s*([^,;]+))");
  static const std::vector<std::string> senior{"Captain", "President", "Chairperson", "Vice-President",
                                               "Chair", "Head", "Leader"};
  for (const auto& entry : p.leadership) {
    if (detail::blank(entry) || entry == "NaN") continue;
    ++f.roles;
    if (std::regex_search(entry, m, level)) {
      const auto role = detail::trim(m[1].str());
      f.role_names.push_back(role);
      if (std::find(senior.begin(), senior.end(), role) != senior.end()) ++f.senior_roles;
    }
  }
  const auto piq = field_text(p, Field::kPiq);
  f.positive = synth::count_words(piq, synth::kPositive);
  f.negative = synth::count_words(piq, synth::kNegative);
  return f;
}

// Deterministic 150-200 word analysis built from extracted features. The
// prompt is ignored.
class MockClient : public AnalysisClient {
 public:
  std::string name() const override { return "mock"; }

  std::string analyze(const Profile& p, const std::string&, const GenerationParams&) override {
    return compose(extract_features(p));
  }

  static std::string compose(const ExtractedFeatures& f) {
    std::vector<std::string> s;
    const std::size_t n_a = f.h2_grades.count('A') ? f.h2_grades.at('A') : 0;
    std::string academic = "Academic record shows " + std::to_string(n_a) + " A grades across " +
                           std::to_string(f.h2_subjects) + " H2 subjects";
    if (f.uas) academic += " with a UAS of " + std::to_string(*f.uas);
    s.push_back(academic);
    s.push_back(std::string("Academic strength is ") + (n_a >= 3 ? "strong" : n_a == 2 ? "moderate" : "limited"));
    if (f.roles == 0) {
      s.push_back("Leadership record lists no roles");
    } else {
      std::string lead = "Leadership record lists " + std::to_string(f.roles) + (f.roles == 1 ? " role" : " roles");
      if (!f.role_names.empty()) {
        lead += " as ";
        for (std::size_t i = 0; i < std::min<std::size_t>(f.role_names.size(), 3); ++i) {
          if (i) lead += " and ";
          lead += f.role_names[i];
        }
      }
      s.push_back(lead);
    }
    s.push_back(std::string("Senior responsibility is ") + (f.senior_roles > 0 ? "evident" : "not evident"));
    s.push_back("Personal insight answers contain " + std::to_string(f.positive) + " positive and " +
                std::to_string(f.negative) + " negative signals");
    s.push_back(std::string("Overall motivation appears ") +
                (f.positive > f.negative ? "positive" : f.positive == f.negative ? "mixed" : "concerning"));
    static const std::vector<std::string> closing{
        "The candidate's strengths should be weighed against the specific demands of an engineering curriculum",
        "Evidence of independent technical work would strengthen the case for admission considerably",
        "Areas of concern should be explored further during the interview stage if one is scheduled",
        "The profile suggests the candidate could contribute to group projects and peer learning",
        "Collaboration with classmates from different backgrounds is likely to be a useful part of their growth",
        "Consistency between academic results and stated interests is an important signal for reviewers",
        "Their written answers should be compared with teacher testimonials where these are available",
        "This summary is based only on the information provided in the application",
        "Reviewers are encouraged to read the full essays before making a final recommendation",
        "Any missing fields in the application have been treated as not reported",
        "A holistic review should balance academic results, leadership and personal motivation",
        "The overall fit for the programme depends on how these factors combine"};
    std::size_t words = 0;
    for (const auto& x : s) words += word_count(x);
    for (std::size_t i = 0; words < 150 && i < closing.size(); ++i) {
      s.push_back(closing[i]);
      words += word_count(closing[i]);
    }
    std::string out;
    for (const auto& x : s) {
      if (!out.empty()) out += ' ';
      out += x + '.';
    }
    return out;
  }
};

using Transport = std::function<std::string(const std::string& request_body)>;

struct RemoteOptions {
  std::string url;
  int timeout_ms = 30000;
  int attempts = 3;
  int backoff_ms = 500;  // doubles after each failed attempt
  std::size_t max_in_flight = 4;
};

inline RemoteOptions remote_options_from_env() {
  RemoteOptions o;
  if (const char* u = std::getenv("SAR_REMOTE_URL")) o.url = u;
  auto int_env = [](const char* name, int& dst) {
    if (const char* v = std::getenv(name)) {
      try {
        dst = std::stoi(v);
      } catch (const std::exception&) {
        throw UsageError(std::string(name) + " must be an integer");
      }
      if (dst < 0) throw UsageError(std::string(name) + " must be non-negative");
    }
  };
  int_env("SAR_REMOTE_TIMEOUT_MS", o.timeout_ms);
  int_env("SAR_REMOTE_ATTEMPTS", o.attempts);
  int_env("SAR_REMOTE_BACKOFF_MS", o.backoff_ms);
  return o;
}

inline nlohmann::json remote_request(const std::string& prompt, const GenerationParams& theta) {
  return {{"prompt", prompt},
          {"temperature", theta.temperature},
          {"top_p", theta.top_p},
          {"top_k", theta.top_k},
          {"max_tokens", theta.max_tokens}};
}

class RemoteClient : public AnalysisClient {
 public:
  RemoteClient(RemoteOptions opt, Transport transport) : opt_(std::move(opt)), transport_(std::move(transport)) {
    if (opt_.attempts < 1) throw UsageError("remote client needs at least one attempt");
    if (opt_.max_in_flight == 0) throw UsageError("remote client needs max_in_flight >= 1");
  }

  std::string name() const override { return "remote"; }

  std::string analyze(const Profile& p, const std::string& prompt, const GenerationParams& theta) override {
    const auto body = remote_request(prompt, theta).dump();
    std::string last_error;
    int delay = opt_.backoff_ms;
    for (int attempt = 0; attempt < opt_.attempts; ++attempt) {
      if (attempt > 0 && delay > 0) {
        std::this_thread::sleep_for(std::chrono::milliseconds(delay));
        delay *= 2;
      }
      try {
        const auto response = call(body);
        const auto j = nlohmann::json::parse(response);
        if (!j.is_object() || !j.contains("text") || !j["text"].is_string()) {
          throw TransportError("response lacks a string 'text' field");
        }
        return j["text"].get<std::string>();
      } catch (const TransportError& e) {
        last_error = e.what();
      } catch (const nlohmann::json::exception& e) {
        last_error = std::string("malformed response: ") + e.what();
      }
    }
    throw AnalysisError(p.id, std::to_string(opt_.attempts) + " attempts failed, last: " + last_error);
  }

  const RemoteOptions& options() const { return opt_; }

 private:
  std::string call(const std::string& body) {
    {
      std::unique_lock lock(mu_);
      cv_.wait(lock, [&] { return in_flight_ < opt_.max_in_flight; });
      ++in_flight_;
    }
    struct Release {
      RemoteClient* c;
      ~Release() {
        {
          std::lock_guard lock(c->mu_);
          --c->in_flight_;
        }
        c->cv_.notify_one();
      }
    } release{this};
    return transport_(body);
  }

  RemoteOptions opt_;
  Transport transport_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::size_t in_flight_ = 0;
};

// ---------------------------------------------------------------------------
// Workflow

struct TraceEntry {
  std::string stage;
  std::string input_digest;
  nlohmann::json output;
  std::optional<double> millis;
};

struct SarOutcome {
  std::string id;
  double p_s = 0;
  bool shortlisted = false;
  std::optional<std::string> analysis;
  std::optional<double> p_r;
  int decision = 0;
  std::vector<TraceEntry> trace;
  std::optional<std::string> error;
};

inline nlohmann::json to_json(const SarOutcome& o) {
  nlohmann::json j{{"id", o.id}, {"P_s", o.p_s}, {"shortlisted", o.shortlisted}};
  if (o.analysis) j["analysis"] = *o.analysis;
  if (o.p_r) j["P_r"] = *o.p_r;
  j["decision"] = o.decision;
  auto trace = nlohmann::json::array();
  for (const auto& t : o.trace) {
    nlohmann::json e{{"stage", t.stage}, {"input_digest", t.input_digest}, {"output", t.output}};
    if (t.millis) e["ms"] = *t.millis;
    trace.push_back(std::move(e));
  }
  j["trace"] = std::move(trace);
  if (o.error) j["error"] = *o.error;
  return j;
}

inline SarOutcome sar_outcome_from_json(const nlohmann::json& j) {
  SarOutcome o;
  j.at("id").get_to(o.id);
  j.at("P_s").get_to(o.p_s);
  j.at("shortlisted").get_to(o.shortlisted);
  if (j.contains("analysis")) o.analysis = j["analysis"].get<std::string>();
  if (j.contains("P_r")) o.p_r = j["P_r"].get<double>();
  j.at("decision").get_to(o.decision);
  for (const auto& e : j.at("trace")) {
    TraceEntry t{e.at("stage").get<std::string>(), e.at("input_digest").get<std::string>(), e.at("output"), {}};
    if (e.contains("ms")) t.millis = e["ms"].get<double>();
    o.trace.push_back(std::move(t));
  }
  if (j.contains("error")) o.error = j["error"].get<std::string>();
  return o;
}

// Checks the gating rules for one outcome; returns a description of the
// first violation. Failed outcomes only need d == 0 and no P_r.
inline std::optional<std::string> gating_violation(const SarOutcome& o, double tau, double delta) {
  if (o.shortlisted != (o.p_s > tau)) return "shortlisted disagrees with P_s > tau";
  if (o.error) {
    if (o.decision != 0 || o.p_r) return "failed outcome carries a decision or P_r";
    return std::nullopt;
  }
  if (o.analysis.has_value() != o.shortlisted) return "analysis present without shortlisting (or missing)";
  if (o.p_r.has_value() != o.shortlisted) return "P_r present without shortlisting (or missing)";
  const bool offer = o.p_s > tau && o.p_r && *o.p_r > delta;
  if ((o.decision == 1) != offer) return "decision disagrees with P_s > tau and P_r > delta";
  return std::nullopt;
}

template <class T>
struct SarModels {
  const Model<T>* shortlister = nullptr;
  const Model<T>* recommender = nullptr;
  const Vocabulary* vocab = nullptr;

  void validate() const {
    if (!shortlister || !recommender || !vocab) throw UsageError("SAR needs both models and a vocabulary");
    if (shortlister->config().fields != 4) throw UsageError("shortlisting model must read 4 fields");
    if (recommender->config().fields != 5) throw UsageError("recommendation model must read 5 fields");
  }
};

template <class T>
double shortlist_probability(const Profile& p, const SarModels<T>& m) {
  return m.shortlister->predict(tokenize_profile(impute_missing(p), *m.vocab, m.shortlister->config()));
}

template <class T>
double recommend_probability(const Profile& p, const std::string& analysis, const SarModels<T>& m) {
  auto q = impute_missing(p);
  q.analysis = analysis;
  return m.recommender->predict(tokenize_profile(q, *m.vocab, m.recommender->config()));
}

// A profile that already carries an analysis skips the client.
template <class T>
SarOutcome run_sar(const Profile& p, const SarModels<T>& m, AnalysisClient& client, const WorkflowConfig& wc) {
  using Clock = std::chrono::steady_clock;
  auto elapsed = [&](Clock::time_point t0) -> std::optional<double> {
    if (!wc.record_timing) return std::nullopt;
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
  };
  SarOutcome o;
  o.id = p.id;

  auto t0 = Clock::now();
  o.p_s = shortlist_probability(p, m);
  o.shortlisted = o.p_s > wc.tau;
  o.trace.push_back({"shortlist", digest(serialize_profile(p)),
                     {{"P_s", o.p_s}, {"shortlisted", o.shortlisted}}, elapsed(t0)});
  if (!o.shortlisted) return o;

  t0 = Clock::now();
  std::string analysis;
  if (p.analysis && !detail::blank(*p.analysis)) {
    analysis = *p.analysis;
    o.trace.push_back({"analyze", digest(analysis), {{"source", "precomputed"}, {"digest", digest(analysis)}},
                       elapsed(t0)});
  } else {
    const auto prompt = build_prompt(p);
    try {
      analysis = client.analyze(p, prompt, wc.generation);
    } catch (const AnalysisError& e) {
      o.error = e.what();
      o.trace.push_back({"analyze", digest(prompt), {{"source", client.name()}, {"error", e.what()}}, elapsed(t0)});
      return o;
    }
    o.trace.push_back({"analyze", digest(prompt),
                       {{"source", client.name()}, {"words", word_count(analysis)}, {"digest", digest(analysis)}},
                       elapsed(t0)});
  }
  o.analysis = analysis;

  t0 = Clock::now();
  o.p_r = recommend_probability(p, analysis, m);
  o.decision = (o.p_s > wc.tau && *o.p_r > wc.delta) ? 1 : 0;
  o.trace.push_back({"recommend", digest(analysis), {{"P_r", *o.p_r}, {"decision", o.decision}}, elapsed(t0)});
  return o;
}

struct BatchSummary {
  std::size_t n = 0;
  std::size_t shortlisted = 0;
  std::size_t offered = 0;
  std::size_t failed = 0;
  double shortlist_rate = 0;
  double offer_rate = 0;
  std::optional<MetricReport> report;  // when every profile is labeled
};

inline nlohmann::json to_json(const BatchSummary& s) {
  nlohmann::json j{{"n", s.n},
                   {"shortlisted", s.shortlisted},
                   {"offered", s.offered},
                   {"failed", s.failed},
                   {"shortlist_rate", s.shortlist_rate},
                   {"offer_rate", s.offer_rate}};
  j["metrics"] = s.report ? to_json(*s.report) : nlohmann::json(nullptr);
  return j;
}

inline BatchSummary summarize(const std::vector<Profile>& profiles, const std::vector<SarOutcome>& outcomes) {
  BatchSummary s;
  s.n = outcomes.size();
  std::vector<int> preds, labels;
  bool labeled = !profiles.empty();
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    s.shortlisted += outcomes[i].shortlisted ? 1 : 0;
    s.offered += outcomes[i].decision == 1 ? 1 : 0;
    s.failed += outcomes[i].error ? 1 : 0;
    preds.push_back(outcomes[i].decision);
    if (profiles[i].label) labels.push_back(*profiles[i].label);
    else labeled = false;
  }
  if (s.n > 0) {
    s.shortlist_rate = static_cast<double>(s.shortlisted) / static_cast<double>(s.n);
    s.offer_rate = static_cast<double>(s.offered) / static_cast<double>(s.n);
  }
  if (labeled) s.report = metrics(preds, labels);
  return s;
}

struct BatchResult {
  std::vector<SarOutcome> outcomes;
  BatchSummary summary;
};

// Runs profiles on wc.threads workers; outcomes keep input order.
template <class T>
BatchResult run_batch(const std::vector<Profile>& profiles, const SarModels<T>& m, AnalysisClient& client,
                      const WorkflowConfig& wc) {
  wc.validate();
  m.validate();
  BatchResult r;
  r.outcomes.resize(profiles.size());
  std::atomic<std::size_t> next{0};
  std::mutex err_mu;
  std::exception_ptr first_error;
  auto worker = [&] {
    for (std::size_t i = next++; i < profiles.size(); i = next++) {
      try {
        r.outcomes[i] = run_sar(profiles[i], m, client, wc);
      } catch (const UsageError&) {
        std::lock_guard lock(err_mu);
        if (!first_error) first_error = std::current_exception();
      } catch (const std::exception& e) {
        r.outcomes[i].id = profiles[i].id;
        r.outcomes[i].error = e.what();
      }
    }
  };
  const std::size_t n_threads = std::min(wc.threads, std::max<std::size_t>(profiles.size(), 1));
  if (n_threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < n_threads; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (first_error) std::rethrow_exception(first_error);
  r.summary = summarize(profiles, r.outcomes);
  return r;
}

inline void write_outcomes(std::ostream& out, const std::vector<SarOutcome>& outcomes) {
  for (const auto& o : outcomes) out << to_json(o).dump() << '\n';
}

inline std::vector<SarOutcome> read_outcomes(std::istream& in) {
  std::vector<SarOutcome> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (detail::blank(line)) continue;
    try {
      out.push_back(sar_outcome_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(n, "outcome", e.what());
    }
  }
  return out;
}

}  // namespace bgmhan
