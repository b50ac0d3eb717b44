#include <catch_amalgamated.hpp>

#include <atomic>
#include <map>
#include <set>
#include <sstream>
#include <thread>

#include "bgmhan/http_transport.hpp"
#include "bgmhan/sar.hpp"
#include "bgmhan/synthetic.hpp"

using namespace bgmhan;

namespace {

const char* kTable1 =
    "[ID]: 8f2c\n"
    "[GCEA]: School:HCI, UAS:90.0; Grades:H1 PROJECT WORK A, H2 ECONOMICS A, H2 MATHEMATICS A\n"
    "[GCEO]: ENGLISH A1, ELEMENTARY MATHEMATICS A1\n"
    "[Leadership]: Mind Sports Club, Level:President, Year:2023, Category:Sports, Participation:Executive Committee\n"
    "[PIQ1]: I am passionate about robotics.\n";

struct Fixture {
  Vocabulary vocab;
  std::unique_ptr<Model<float>> shortlister, recommender;
  SarModels<float> models;
  std::vector<Profile> profiles;
};

ModelConfig tiny(std::size_t fields, std::size_t vocab_size) {
  ModelConfig c;
  c.d = 8;
  c.hidden = 8;
  c.heads = 2;
  c.s = 3;
  c.w = 10;
  c.fields = fields;
  c.vocab_size = vocab_size;
  return c;
}

// Untrained models with the head output scaled up so probabilities spread
// over (0, 1).
Fixture make_fixture(std::size_t n = 60, std::uint64_t seed = 1) {
  Fixture f;
  f.profiles = generate_synthetic(n, seed);
  std::vector<std::string> corpus;
  MockClient mock;
  for (const auto& p : f.profiles) {
    for (const auto& t : model_field_texts(impute_missing(p), 4)) corpus.push_back(t);
    corpus.push_back(mock.analyze(p, "", {}));
  }
  f.vocab = train_bpe(corpus, 200);
  f.shortlister = std::make_unique<Model<float>>(tiny(4, f.vocab.size()), seed + 10);
  f.recommender = std::make_unique<Model<float>>(tiny(5, f.vocab.size()), seed + 20);
  for (auto* m : {f.shortlister.get(), f.recommender.get()})
    for (auto& v : m->head().w2.data()) v *= 40.0f;
  f.models = {f.shortlister.get(), f.recommender.get(), &f.vocab};
  return f;
}

void zero_head(Model<float>& m) {
  auto& hd = m.head();
  for (auto* t : {&hd.w1, &hd.b1, &hd.w2, &hd.b2})
    for (auto& v : t->data()) v = 0.0f;
}

class FailingClient : public AnalysisClient {
 public:
  std::string name() const override { return "failing"; }
  std::string analyze(const Profile& p, const std::string&, const GenerationParams&) override {
    throw AnalysisError(p.id, "unreachable");
  }
};

}  // namespace

TEST_CASE("workflow config validation", "[sar][config]") {
  WorkflowConfig c;
  CHECK(c.tau == 0.5);
  CHECK(c.delta == 0.5);
  CHECK(c.client == "mock");
  CHECK(c.generation == GenerationParams{0.3, 0.8, 40, 1024});
  CHECK_NOTHROW(c.validate());
  for (const double bad : {0.0, 1.0, -0.1, 1.5}) {
    auto t = c;
    t.tau = bad;
    CHECK_THROWS_AS(t.validate(), UsageError);
    t = c;
    t.delta = bad;
    CHECK_THROWS_AS(t.validate(), UsageError);
  }
  auto t = c;
  t.client = "vendor";
  CHECK_THROWS_AS(t.validate(), UsageError);
  WorkflowConfig u;
  update_from_json(u, to_json(c));
  CHECK(to_json(u) == to_json(c));
  CHECK_THROWS_AS(update_from_json(u, {{"gamma", 1}}), UsageError);
}

TEST_CASE("prompt assembly", "[sar][prompt]") {
  const auto p = parse_profile(kTable1);
  const auto prompt = build_prompt(p);
  CHECK(prompt.find("School:HCI, UAS:90.0") != std::string::npos);
  CHECK(prompt.rfind("You are an experienced university admission officer.", 0) == 0);
  CHECK(prompt.find("Level:President") != std::string::npos);
  CHECK(prompt.find("passionate about robotics") != std::string::npos);
  CHECK(prompt.find('{') == std::string::npos);
  // Missing GCEO slots in as the imputation marker.
  auto q = p;
  q.gceo.clear();
  CHECK(build_prompt(q).find("GCEO Results: NaN") != std::string::npos);

  CHECK_THROWS_AS(build_prompt(p, "Hello {Unknown Field}"), UsageError);
  CHECK_THROWS_AS(fill_template("{A}", {{"A", "x"}, {"B", "y"}}), UsageError);
  CHECK(fill_template("{A}-{A}", {{"A", "x"}}) == "x-x");
}

TEST_CASE("mock analysis is deterministic and sized", "[sar][mock]") {
  MockClient mock;
  const auto ps = generate_synthetic(300, 9, {0.5, 0.0, 0.3});
  for (const auto& p : ps) {
    const auto a = mock.analyze(p, build_prompt(p), {});
    REQUIRE(a == mock.analyze(p, "different prompt", {0.9, 0.1, 1, 1}));
    const auto words = word_count(a);
    REQUIRE(words >= 150);
    REQUIRE(words <= 200);
  }
  Profile empty;
  empty.id = "E";
  const auto a = mock.analyze(empty, "", {});
  CHECK(word_count(a) >= 150);
  CHECK(a.find("0 A grades") != std::string::npos);
  CHECK(a.find("lists no roles") != std::string::npos);

  const auto t = mock.analyze(parse_profile(kTable1), "", {});
  CHECK(t.find("2 A grades across 2 H2 subjects with a UAS of 90") != std::string::npos);
  CHECK(t.find("1 role as President") != std::string::npos);
  CHECK(t.find("1 positive and 0 negative") != std::string::npos);
}

TEST_CASE("remote client request, retry and failure", "[sar][remote]") {
  const auto p = parse_profile(kTable1);
  std::vector<nlohmann::json> seen;
  int fail_first = 2;
  Transport flaky = [&](const std::string& body) {
    seen.push_back(nlohmann::json::parse(body));
    if (fail_first-- > 0) throw TransportError("connection refused");
    return std::string(R"({"text": "A fine candidate."})");
  };
  RemoteOptions opt;
  opt.backoff_ms = 0;
  RemoteClient client(opt, flaky);
  const auto prompt = build_prompt(p);
  CHECK(client.analyze(p, prompt, {}) == "A fine candidate.");
  REQUIRE(seen.size() == 3);
  const auto& req = seen.back();
  CHECK(req["prompt"] == prompt);
  CHECK(req["temperature"] == 0.3);
  CHECK(req["top_p"] == 0.8);
  CHECK(req["top_k"] == 40);
  CHECK(req["max_tokens"] == 1024);

  int calls = 0;
  RemoteClient dead(opt, [&](const std::string&) -> std::string {
    ++calls;
    throw TransportError("timeout");
  });
  try {
    dead.analyze(p, prompt, {});
    FAIL("expected AnalysisError");
  } catch (const AnalysisError& e) {
    CHECK(e.profile_id() == "8f2c");
    CHECK(std::string(e.what()).find("timeout") != std::string::npos);
  }
  CHECK(calls == 3);

  RemoteClient garbled(opt, [](const std::string&) { return std::string("{\"txt\": 1}"); });
  CHECK_THROWS_AS(garbled.analyze(p, prompt, {}), AnalysisError);
}

TEST_CASE("remote client backs off exponentially", "[sar][remote]") {
  RemoteOptions opt;
  opt.backoff_ms = 20;
  std::vector<std::chrono::steady_clock::time_point> stamps;
  RemoteClient c(opt, [&](const std::string&) -> std::string {
    stamps.push_back(std::chrono::steady_clock::now());
    throw TransportError("down");
  });
  Profile p;
  p.id = "x";
  CHECK_THROWS_AS(c.analyze(p, "prompt", {}), AnalysisError);
  REQUIRE(stamps.size() == 3);
  using ms = std::chrono::duration<double, std::milli>;
  CHECK(ms(stamps[1] - stamps[0]).count() >= 20);
  CHECK(ms(stamps[2] - stamps[1]).count() >= 40);
}

TEST_CASE("http transport against a local server", "[sar][remote][http]") {
  httplib::Server server;
  nlohmann::json received;
  server.Post("/generate", [&](const httplib::Request& req, httplib::Response& res) {
    received = nlohmann::json::parse(req.body);
    res.set_content(R"({"text": "served"})", "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread th([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  RemoteOptions opt;
  opt.url = "http://127.0.0.1:" + std::to_string(port) + "/generate";
  opt.backoff_ms = 0;
  RemoteClient client(opt, http_transport(opt));
  Profile p;
  p.id = "h";
  CHECK(client.analyze(p, "hello", {}) == "served");
  CHECK(received["prompt"] == "hello");
  CHECK(received["top_k"] == 40);
  server.stop();
  th.join();

  RemoteClient gone(opt, http_transport(opt));
  CHECK_THROWS_AS(gone.analyze(p, "hello", {}), AnalysisError);

  opt.url = "https://example.invalid/x";
  CHECK_THROWS_AS(http_transport(opt), UsageError);
  opt.url.clear();
  CHECK_THROWS_AS(http_transport(opt), UsageError);
}

TEST_CASE("shortlist threshold is strict", "[sar][gating]") {
  auto f = make_fixture(20);
  zero_head(*f.shortlister);
  MockClient mock;
  WorkflowConfig wc;
  for (const auto& p : f.profiles) {
    const auto o = run_sar(p, f.models, mock, wc);
    CHECK(o.p_s == 0.5);
    CHECK(!o.shortlisted);
    CHECK(o.decision == 0);
    CHECK(!o.analysis);
    CHECK(!o.p_r);
    REQUIRE(o.trace.size() == 1);
    CHECK(o.trace[0].stage == "shortlist");
  }
  wc.tau = 0.4999;
  const auto o = run_sar(f.profiles[0], f.models, mock, wc);
  CHECK(o.shortlisted);
  REQUIRE(o.p_r);

  zero_head(*f.recommender);
  const auto r = run_sar(f.profiles[0], f.models, mock, wc);
  CHECK(*r.p_r == 0.5);
  CHECK(r.decision == 0);
  CHECK(r.analysis);
  wc.delta = 0.4999;
  CHECK(run_sar(f.profiles[0], f.models, mock, wc).decision == 1);
}

TEST_CASE("gating truth table and stage order", "[sar][gating][property]") {
  auto f = make_fixture(120, 4);
  MockClient mock;
  for (const double tau : {0.2, 0.5, 0.8}) {
    for (const double delta : {0.2, 0.5, 0.8}) {
      WorkflowConfig wc;
      wc.tau = tau;
      wc.delta = delta;
      const auto r = run_batch(f.profiles, f.models, mock, wc);
      for (const auto& o : r.outcomes) {
        REQUIRE(!gating_violation(o, tau, delta));
        REQUIRE(o.p_s > 0.0);
        REQUIRE(o.p_s < 1.0);
        if (o.p_r) {
          REQUIRE(*o.p_r > 0.0);
          REQUIRE(*o.p_r < 1.0);
        }
        std::vector<std::string> stages;
        for (const auto& t : o.trace) stages.push_back(t.stage);
        REQUIRE(stages == (o.shortlisted ? std::vector<std::string>{"shortlist", "analyze", "recommend"}
                                         : std::vector<std::string>{"shortlist"}));
        REQUIRE(!o.trace[0].millis);
      }
    }
  }
}

TEST_CASE("raising a threshold never adds offers", "[sar][gating][property]") {
  auto f = make_fixture(50, 5);
  MockClient mock;
  std::map<std::pair<int, int>, std::set<std::string>> cache;
  auto offers = [&](int a, int b) {
    auto& out = cache[{a, b}];
    if (!out.empty()) return out;
    WorkflowConfig wc;
    wc.tau = a / 10.0;
    wc.delta = b / 10.0;
    for (const auto& o : run_batch(f.profiles, f.models, mock, wc).outcomes)
      if (o.decision == 1) out.insert(o.id);
    return out;
  };
  std::size_t nonempty = 0;
  for (int a = 1; a <= 9; ++a) {
    for (int b = 1; b <= 9; ++b) {
      const auto base = offers(a, b);
      nonempty += base.empty() ? 0 : 1;
      if (a < 9) {
        const auto up = offers(a + 1, b);
        REQUIRE(std::includes(base.begin(), base.end(), up.begin(), up.end()));
      }
      if (b < 9) {
        const auto up = offers(a, b + 1);
        REQUIRE(std::includes(base.begin(), base.end(), up.begin(), up.end()));
      }
    }
  }
  CHECK(nonempty > 0);
}

TEST_CASE("the analysis never influences shortlisting", "[sar][isolation]") {
  auto f = make_fixture(40, 6);
  MockClient mock;
  WorkflowConfig wc;
  wc.tau = 0.01;
  std::size_t changed = 0;
  for (const auto& p : f.profiles) {
    const auto before = shortlist_probability(p, f.models);
    const auto o = run_sar(p, f.models, mock, wc);
    REQUIRE(o.p_s == before);
    REQUIRE(shortlist_probability(p, f.models) == before);
    if (!o.shortlisted) continue;
    auto q = p;
    q.analysis = "Academic strength is limited. Senior responsibility is not evident. Overall motivation appears "
                 "concerning.";
    const auto o2 = run_sar(q, f.models, mock, wc);
    REQUIRE(o2.p_s == before);
    REQUIRE(o2.trace[1].output["source"] == "precomputed");
    changed += *o2.p_r != *o.p_r ? 1 : 0;
  }
  CHECK(changed > 0);
}

TEST_CASE("batch plumbing", "[sar][batch]") {
  auto f = make_fixture(80, 7);
  MockClient mock;
  WorkflowConfig wc;
  wc.tau = 0.3;

  const auto empty = run_batch(std::vector<Profile>{}, f.models, mock, wc);
  CHECK(empty.outcomes.empty());
  CHECK(empty.summary.shortlist_rate == 0.0);
  CHECK(empty.summary.offer_rate == 0.0);
  CHECK(!empty.summary.report);

  const auto serial = run_batch(f.profiles, f.models, mock, wc);
  wc.threads = 4;
  const auto parallel = run_batch(f.profiles, f.models, mock, wc);
  REQUIRE(serial.outcomes.size() == f.profiles.size());
  for (std::size_t i = 0; i < f.profiles.size(); ++i) {
    CHECK(serial.outcomes[i].id == f.profiles[i].id);
    CHECK(to_json(serial.outcomes[i]) == to_json(parallel.outcomes[i]));
  }

  std::vector<int> preds, labels;
  for (std::size_t i = 0; i < f.profiles.size(); ++i) {
    preds.push_back(serial.outcomes[i].decision);
    labels.push_back(*f.profiles[i].label);
  }
  REQUIRE(serial.summary.report);
  CHECK(*serial.summary.report == metrics(preds, labels));
  CHECK(serial.summary.n == f.profiles.size());

  auto unlabeled = f.profiles;
  unlabeled[3].label.reset();
  CHECK(!run_batch(unlabeled, f.models, mock, wc).summary.report);

  std::ostringstream out;
  write_outcomes(out, serial.outcomes);
  std::istringstream in(out.str());
  const auto back = read_outcomes(in);
  REQUIRE(back.size() == serial.outcomes.size());
  for (std::size_t i = 0; i < back.size(); ++i) CHECK(to_json(back[i]) == to_json(serial.outcomes[i]));

  wc.record_timing = true;
  const auto timed = run_sar(f.profiles[0], f.models, mock, wc);
  CHECK(timed.trace[0].millis.has_value());
}

TEST_CASE("analysis failures are isolated", "[sar][batch]") {
  auto f = make_fixture(30, 8);
  FailingClient failing;
  WorkflowConfig wc;
  wc.tau = 0.01;
  const auto r = run_batch(f.profiles, f.models, failing, wc);
  REQUIRE(r.outcomes.size() == f.profiles.size());
  CHECK(r.summary.failed == r.summary.shortlisted);
  CHECK(r.summary.failed > 0);
  for (const auto& o : r.outcomes) {
    if (!o.shortlisted) continue;
    CHECK(o.error);
    CHECK(o.error->find(o.id) != std::string::npos);
    CHECK(o.shortlisted);
    CHECK(o.decision == 0);
    CHECK(!o.p_r);
    REQUIRE(o.trace.size() == 2);
    CHECK(o.trace[1].output.contains("error"));
    CHECK(!gating_violation(o, wc.tau, wc.delta));
  }

  SarModels<float> swapped{f.recommender.get(), f.shortlister.get(), &f.vocab};
  MockClient mock;
  CHECK_THROWS_AS(run_batch(f.profiles, swapped, mock, wc), UsageError);
}
