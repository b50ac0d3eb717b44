#pragma once

// Applicant profiles, decision records and dataset splitting.
//
// Two encodings of a profile are supported:
//  * tagged text, one "[TAG] content" line per field:
//        [ID] p001
//        [GCEA]: School:HCI, UAS:90.0; Grades:H2 ECONOMICS A, ...
//        [GCEO] HIGHER CHINESE B3, ENGLISH A1, ...
//        [Leadership] Mind Sports Club, Level:Captain, Year:2023, ...   (repeatable)
//        [PIQ1] ... [PIQ5] ...
//        [OfferType] Offered | Not Offered
//        [Analysis] ...
//    Lines without a tag continue the previous field.
//  * JSON lines: {id, gcea, gceo, leadership:[...], piq:[5], offer, analysis?}
//    where the text fields keep their tag prefix verbatim.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "bgmhan/error.hpp"
#include "bgmhan/random.hpp"

namespace bgmhan {

inline constexpr std::size_t kPiqSlots = 5;
inline constexpr std::string_view kMissingText = "NaN";

struct Profile {
  std::string id;
  std::string gcea;
  std::string gceo;
  std::vector<std::string> leadership;
  std::array<std::string, kPiqSlots> piq;
  std::optional<int> label;  // 1 offered, 0 not offered
  std::optional<std::string> analysis;

  bool operator==(const Profile&) const = default;
};

enum class Field { kGcea = 0, kGceo = 1, kLeadership = 2, kPiq = 3, kAnalysis = 4 };
inline constexpr std::array<Field, 4> kProfileFields{Field::kGcea, Field::kGceo, Field::kLeadership, Field::kPiq};

inline std::string_view field_name(Field f) {
  switch (f) {
    case Field::kGcea: return "GCEA";
    case Field::kGceo: return "GCEO";
    case Field::kLeadership: return "Leadership";
    case Field::kPiq: return "PIQ";
    case Field::kAnalysis: return "Analysis";
  }
  return "?";
}

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline bool blank(std::string_view s) { return s.find_first_not_of(" \t\r\n") == std::string_view::npos; }

inline std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

// Splits "[TAG]<sep>content" into (TAG, content); sep is an optional ':'
// followed by spaces.
inline std::optional<std::pair<std::string, std::string>> split_tag(std::string_view line) {
  if (line.empty() || line.front() != '[') return std::nullopt;
  const auto close = line.find(']');
  if (close == std::string_view::npos) return std::pair<std::string, std::string>{"", ""};
  std::string tag(line.substr(1, close - 1));
  std::string_view rest = line.substr(close + 1);
  if (!rest.empty() && rest.front() == ':') rest.remove_prefix(1);
  while (!rest.empty() && (rest.front() == ' ' || rest.front() == '\t')) rest.remove_prefix(1);
  return std::pair<std::string, std::string>{std::move(tag), std::string(rest)};
}

}  // namespace detail

// Field text as consumed by the embedder: leadership entries joined with "; ",
// PIQ answers joined with a space.
inline std::string field_text(const Profile& p, Field f) {
  switch (f) {
    case Field::kGcea: return p.gcea;
    case Field::kGceo: return p.gceo;
    case Field::kLeadership: return detail::join(p.leadership, "; ");
    case Field::kPiq: {
      std::vector<std::string> present;
      for (const auto& s : p.piq)
        if (!s.empty()) present.push_back(s);
      return detail::join(present, " ");
    }
    case Field::kAnalysis: return p.analysis.value_or("");
  }
  return {};
}

inline std::optional<int> parse_offer(std::string_view v) {
  if (v == "Offered") return 1;
  if (v == "Not Offered") return 0;
  return std::nullopt;
}

inline std::string_view offer_string(int label) { return label ? "Offered" : "Not Offered"; }

// Parses one tagged-text record.
inline Profile parse_profile(std::string_view record) {
  Profile p;
  bool have_id = false, have_gcea = false, have_gceo = false, have_offer = false, have_analysis = false;
  std::array<bool, kPiqSlots> have_piq{};
  std::string* current = nullptr;
  std::size_t lineno = 0;
  std::istringstream in{std::string(record)};
  std::string raw;
  while (std::getline(in, raw)) {
    ++lineno;
    if (!raw.empty() && raw.back() == '\r') raw.pop_back();
    const auto tagged = detail::split_tag(raw);
    if (!tagged) {
      if (detail::blank(raw)) continue;
      if (!current) throw ParseError(lineno, "", "text before the first tag");
      *current += '\n';
      *current += raw;
      continue;
    }
    const auto& [tag, content] = *tagged;
    if (tag.empty()) throw ParseError(lineno, raw.substr(0, 16), "malformed tag");
    auto once = [&](bool& seen) {
      if (seen) throw ParseError(lineno, tag, "duplicate tag");
      seen = true;
    };
    if (tag == "ID") {
      once(have_id);
      p.id = detail::trim(content);
      current = &p.id;
    } else if (tag == "GCEA") {
      once(have_gcea);
      p.gcea = content;
      current = &p.gcea;
    } else if (tag == "GCEO") {
      once(have_gceo);
      p.gceo = content;
      current = &p.gceo;
    } else if (tag == "Leadership") {
      p.leadership.push_back(content);
      current = &p.leadership.back();
    } else if (tag.size() == 4 && tag.rfind("PIQ", 0) == 0 && tag[3] >= '1' && tag[3] <= '5') {
      const std::size_t slot = static_cast<std::size_t>(tag[3] - '1');
      once(have_piq[slot]);
      p.piq[slot] = content;
      current = &p.piq[slot];
    } else if (tag == "OfferType") {
      once(have_offer);
      const auto offer = parse_offer(detail::trim(content));
      if (!offer) throw ParseError(lineno, tag, "expected 'Offered' or 'Not Offered'");
      p.label = offer;
      current = nullptr;
    } else if (tag == "Analysis") {
      once(have_analysis);
      p.analysis = content;
      current = &*p.analysis;
    } else {
      throw ParseError(lineno, tag, "unknown tag");
    }
  }
  if (!have_id || p.id.empty()) throw ParseError(lineno, "ID", "record has no id");
  return p;
}

inline std::string serialize_profile(const Profile& p) {
  std::ostringstream os;
  os << "[ID] " << p.id << '\n';
  if (!p.gcea.empty()) os << "[GCEA] " << p.gcea << '\n';
  if (!p.gceo.empty()) os << "[GCEO] " << p.gceo << '\n';
  for (const auto& l : p.leadership) os << "[Leadership] " << l << '\n';
  for (std::size_t i = 0; i < kPiqSlots; ++i)
    if (!p.piq[i].empty()) os << "[PIQ" << (i + 1) << "] " << p.piq[i] << '\n';
  if (p.label) os << "[OfferType] " << offer_string(*p.label) << '\n';
  if (p.analysis) os << "[Analysis] " << *p.analysis << '\n';
  return os.str();
}

namespace detail {

inline std::string untag(const nlohmann::json& v, std::string_view tag, std::size_t line, const char* key) {
  if (v.is_null()) return {};
  if (!v.is_string()) throw ParseError(line, key, "expected a string");
  const auto s = v.get<std::string>();
  const auto tagged = split_tag(s);
  if (!tagged) return s;
  if (tagged->first != tag) throw ParseError(line, key, "expected tag [" + std::string(tag) + "]");
  return tagged->second;
}

inline std::string with_tag(std::string_view tag, const std::string& content) {
  return "[" + std::string(tag) + "] " + content;
}

}  // namespace detail

inline Profile profile_from_json(const nlohmann::json& j, std::size_t line = 1) {
  if (!j.is_object()) throw ParseError(line, "", "record is not a JSON object");
  static const std::array<std::string_view, 7> known{"id", "gcea", "gceo", "leadership", "piq", "offer", "analysis"};
  for (const auto& [k, _] : j.items()) {
    if (std::find(known.begin(), known.end(), k) == known.end()) throw ParseError(line, k, "unknown field");
  }
  Profile p;
  if (!j.contains("id") || !j["id"].is_string() || j["id"].get<std::string>().empty()) {
    throw ParseError(line, "id", "record has no id");
  }
  p.id = j["id"].get<std::string>();
  if (j.contains("gcea")) p.gcea = detail::untag(j["gcea"], "GCEA", line, "gcea");
  if (j.contains("gceo")) p.gceo = detail::untag(j["gceo"], "GCEO", line, "gceo");
  if (j.contains("leadership") && !j["leadership"].is_null()) {
    if (!j["leadership"].is_array()) throw ParseError(line, "leadership", "expected an array");
    for (const auto& e : j["leadership"]) p.leadership.push_back(detail::untag(e, "Leadership", line, "leadership"));
  }
  if (j.contains("piq") && !j["piq"].is_null()) {
    const auto& piq = j["piq"];
    if (!piq.is_array() || piq.size() != kPiqSlots) throw ParseError(line, "piq", "expected an array of 5 entries");
    for (std::size_t i = 0; i < kPiqSlots; ++i) {
      p.piq[i] = detail::untag(piq[i], "PIQ" + std::to_string(i + 1), line, "piq");
    }
  }
  if (j.contains("offer") && !j["offer"].is_null()) {
    if (!j["offer"].is_string()) throw ParseError(line, "offer", "expected 'Offered' or 'Not Offered'");
    p.label = parse_offer(j["offer"].get<std::string>());
    if (!p.label) throw ParseError(line, "offer", "expected 'Offered' or 'Not Offered'");
  }
  if (j.contains("analysis") && !j["analysis"].is_null()) {
    if (!j["analysis"].is_string()) throw ParseError(line, "analysis", "expected a string");
    p.analysis = j["analysis"].get<std::string>();
  }
  return p;
}

inline nlohmann::json profile_to_json(const Profile& p) {
  nlohmann::json j;
  j["id"] = p.id;
  j["gcea"] = p.gcea.empty() ? nlohmann::json(nullptr) : nlohmann::json(detail::with_tag("GCEA", p.gcea));
  j["gceo"] = p.gceo.empty() ? nlohmann::json(nullptr) : nlohmann::json(detail::with_tag("GCEO", p.gceo));
  auto lead = nlohmann::json::array();
  for (const auto& l : p.leadership) lead.push_back(detail::with_tag("Leadership", l));
  j["leadership"] = std::move(lead);
  auto piq = nlohmann::json::array();
  for (std::size_t i = 0; i < kPiqSlots; ++i) {
    piq.push_back(p.piq[i].empty() ? nlohmann::json(nullptr)
                                   : nlohmann::json(detail::with_tag("PIQ" + std::to_string(i + 1), p.piq[i])));
  }
  j["piq"] = std::move(piq);
  j["offer"] = p.label ? nlohmann::json(std::string(offer_string(*p.label))) : nlohmann::json(nullptr);
  if (p.analysis) j["analysis"] = *p.analysis;
  return j;
}

inline std::vector<Profile> read_profiles(std::istream& in) {
  std::vector<Profile> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::blank(line)) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError(lineno, "", std::string("invalid JSON: ") + e.what());
    }
    out.push_back(profile_from_json(j, lineno));
  }
  return out;
}

inline std::vector<Profile> load_profiles(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read profiles file " + path);
  return read_profiles(f);
}

inline void write_profiles(std::ostream& out, const std::vector<Profile>& profiles) {
  for (const auto& p : profiles) out << profile_to_json(p).dump() << '\n';
}

inline void save_profiles(const std::string& path, const std::vector<Profile>& profiles) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write profiles file " + path);
  write_profiles(f, profiles);
}

// Every absent text field becomes the literal "NaN"; an empty leadership list
// becomes a single "NaN" entry.
inline Profile impute_missing(Profile p) {
  auto fill = [](std::string& s) {
    if (detail::blank(s)) s = std::string(kMissingText);
  };
  fill(p.gcea);
  fill(p.gceo);
  if (p.leadership.empty()) p.leadership.push_back(std::string(kMissingText));
  for (auto& l : p.leadership) fill(l);
  for (auto& q : p.piq) fill(q);
  return p;
}

// ---------------------------------------------------------------------------
// Decision records

inline constexpr std::array<std::string_view, 6> kDecisionPoints{"SL", "AR", "SR", "DO", "SO", "Adm"};

struct DecisionRecord {
  std::string id;
  std::array<double, 6> scores{};

  bool operator==(const DecisionRecord&) const = default;
};

namespace detail {
inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (const char c : line) {
    if (c == ',') {
      out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(trim(cur));
  return out;
}
}  // namespace detail

// CSV with a header naming id and the six decision points (any column order).
// Lines starting with '#' are comments.
inline std::vector<DecisionRecord> read_decision_records(std::istream& in) {
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::blank(line) || line[0] == '#') continue;
    header = detail::split_csv(line);
    break;
  }
  if (header.empty()) throw UsageError("decision records: missing header");
  std::array<std::size_t, 6> col{};
  std::size_t id_col = header.size();
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == "id") id_col = i;
  if (id_col == header.size()) throw UsageError("decision records: header has no 'id' column");
  for (std::size_t k = 0; k < kDecisionPoints.size(); ++k) {
    const auto it = std::find(header.begin(), header.end(), kDecisionPoints[k]);
    if (it == header.end()) {
      throw UsageError("decision records: header must name SL, AR, SR, DO, SO, Adm; missing " +
                       std::string(kDecisionPoints[k]));
    }
    col[k] = static_cast<std::size_t>(it - header.begin());
  }
  if (header.size() != 7) throw UsageError("decision records: expected exactly id + 6 decision columns");

  std::vector<DecisionRecord> out;
  while (std::getline(in, line)) {
    ++lineno;
    if (detail::blank(line) || line[0] == '#') continue;
    const auto cells = detail::split_csv(line);
    if (cells.size() != header.size()) throw ParseError(lineno, "", "wrong number of columns");
    DecisionRecord r;
    r.id = cells[id_col];
    for (std::size_t k = 0; k < 6; ++k) {
      try {
        std::size_t used = 0;
        r.scores[k] = std::stod(cells[col[k]], &used);
        if (used != cells[col[k]].size()) throw std::invalid_argument("trailing characters");
      } catch (const std::exception&) {
        throw ParseError(lineno, std::string(kDecisionPoints[k]), "not a number: '" + cells[col[k]] + "'");
      }
    }
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<DecisionRecord> load_decision_records(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read decision records " + path);
  return read_decision_records(f);
}

inline void write_decision_records(std::ostream& out, const std::vector<DecisionRecord>& records) {
  out << "id";
  for (const auto k : kDecisionPoints) out << ',' << k;
  out << '\n';
  out.precision(17);
  for (const auto& r : records) {
    out << r.id;
    for (const double v : r.scores) out << ',' << v;
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Splitting

struct SplitRatios {
  double train = 0.90;
  double val = 0.05;
  double test = 0.05;
};

struct DatasetSplit {
  std::vector<Profile> train, val, test;
  std::uint64_t seed = 0;
};

// Per class: seeded shuffle, then round(n_c * ratio) items to val and test and
// the rest to train. Parts keep the input order.
inline DatasetSplit stratified_split(const std::vector<Profile>& profiles, SplitRatios ratios, std::uint64_t seed) {
  if (ratios.train < 0 || ratios.val < 0 || ratios.test < 0 ||
      std::abs(ratios.train + ratios.val + ratios.test - 1.0) > 1e-9) {
    throw UsageError("stratified_split: ratios must be nonnegative and sum to 1");
  }
  std::array<std::vector<std::size_t>, 2> by_class;
  for (std::size_t i = 0; i < profiles.size(); ++i) {
    if (!profiles[i].label) throw UsageError("stratified_split: profile '" + profiles[i].id + "' has no label");
    by_class[*profiles[i].label].push_back(i);
  }
  for (int c = 0; c < 2; ++c) {
    if (by_class[c].size() < 3) {
      throw UsageError("stratified_split: class " + std::to_string(c) + " has fewer than 3 members");
    }
  }
  std::vector<int> part(profiles.size(), 0);
  for (int c = 0; c < 2; ++c) {
    auto idx = by_class[c];
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(c)));
    shuffle(idx, rng);
    const auto n = static_cast<double>(idx.size());
    const auto n_val = static_cast<std::size_t>(std::llround(n * ratios.val));
    const auto n_test = std::min(idx.size() - n_val, static_cast<std::size_t>(std::llround(n * ratios.test)));
    for (std::size_t k = 0; k < idx.size(); ++k) part[idx[k]] = k < n_val ? 1 : (k < n_val + n_test ? 2 : 0);
  }
  DatasetSplit s;
  s.seed = seed;
  for (std::size_t i = 0; i < profiles.size(); ++i) {
    (part[i] == 0 ? s.train : part[i] == 1 ? s.val : s.test).push_back(profiles[i]);
  }
  return s;
}

}  // namespace bgmhan
