#pragma once

// Synthetic admission-style profiles with a planted decision rule.
//
// Three binary features are planted, and the clean label is their majority:
//   academic    at least 3 of the 4 H2 grades in GCEA are "A"
//               (weak profiles get at most one H2 "A")
//   leadership  some [Leadership] entry has Level in {Captain, President,
//               Chairperson, Vice-President}; weak profiles only hold
//               Member/Participant/Volunteer roles or none
//   piq         PIQ text has more positive than negative sentiment keywords
//               (keywords appear only in PIQ1..PIQ3)
//   clean label = academic + leadership + piq >= 2
// GCEO, school, UAS, years and PIQ4/PIQ5 are distractors. planted_label()
// recomputes the clean label from the text alone, so it is the oracle for
// noiseless data. Label noise flips the clean label with probability `noise`;
// `missing` blanks GCEO, PIQ4 and PIQ5 independently (never rule-bearing text).

#include <array>
#include <cstdint>
#include <cstdio>
#include <regex>
#include <string>
#include <vector>

#include "bgmhan/error.hpp"
#include "bgmhan/profile.hpp"
#include "bgmhan/random.hpp"

namespace bgmhan {

struct SignalSpec {
  double balance = 0.5;  // P(label = 1) before noise
  double noise = 0.0;    // label flip probability
  double missing = 0.0;  // per-slot blanking probability for distractor fields
};

namespace synth {

inline const std::vector<std::string> kSchools{"HCI", "RI", "NJC", "VJC", "TJC", "ACJC", "DHS", "EJC", "SAJC", "CJC"};
inline const std::vector<std::string> kH2Subjects{"MATHEMATICS", "PHYSICS", "CHEMISTRY", "BIOLOGY", "ECONOMICS",
                                                  "HISTORY", "GEOGRAPHY", "LITERATURE", "COMPUTING"};
inline const std::vector<std::string> kH1Subjects{"GENERAL PAPER", "PROJECT WORK"};
inline const std::vector<std::string> kGceoSubjects{"ENGLISH", "HIGHER CHINESE", "ELEMENTARY MATHEMATICS",
                                                    "ADDITIONAL MATHEMATICS", "PHYSICS", "CHEMISTRY",
                                                    "BIOLOGY", "GEOGRAPHY", "HISTORY", "MALAY", "TAMIL"};
inline const std::vector<std::string> kGceoGrades{"A1", "A2", "B3", "B4", "C5", "C6"};
inline const std::vector<std::string> kClubs{"Mind Sports Club", "Robotics Club", "Debate Society", "Student Council",
                                             "Chess Club", "Football Team", "Choir", "Astronomy Club",
                                             "Red Cross Youth", "Drama Club"};
inline const std::vector<std::string> kCategories{"Sports", "Arts", "Service", "Academic", "Uniformed Group"};
inline const std::vector<std::string> kStrongRoles{"Captain", "President", "Chairperson", "Vice-President"};
inline const std::vector<std::string> kWeakRoles{"Member", "Participant", "Volunteer"};
inline const std::vector<std::string> kPositive{"passionate", "resilient", "curious", "determined", "inspired"};
inline const std::vector<std::string> kNegative{"bored", "reluctant", "indifferent", "careless", "discouraged"};
inline const std::vector<std::string> kTopics{"robotics", "coding", "chemistry", "community service", "debate",
                                              "music", "mathematics", "sports", "history", "design"};
inline const std::vector<std::string> kFrames{"I became {} while exploring {}.", "Working on {} left me {}.",
                                              "Friends describe me as {} about {}."};
inline const std::vector<std::string> kFillers{"I hope to contribute to {} at university.",
                                               "My favourite subject in school was {}.",
                                               "I spent my holidays reading about {}."};

inline std::string fill2(const std::string& frame, const std::string& a, const std::string& b) {
  std::string out = frame;
  out.replace(out.find("{}"), 2, a);
  out.replace(out.find("{}"), 2, b);
  return out;
}

inline std::string fill1(const std::string& frame, const std::string& a) {
  std::string out = frame;
  out.replace(out.find("{}"), 2, a);
  return out;
}

inline double h2_points(char g) { return 20.0 - 2.5 * (g - 'A'); }
inline double h1_points(char g) { return 10.0 - 1.25 * (g - 'A'); }

inline std::string format_score(double v) {
  char buf[32];
  if (v == static_cast<double>(static_cast<long>(v))) {
    std::snprintf(buf, sizeof buf, "%.1f", v);
  } else {
    std::snprintf(buf, sizeof buf, "%.2f", v);
  }
  return buf;
}

inline std::string make_gcea(bool strong, Rng& rng) {
  auto subjects = kH2Subjects;
  shuffle(subjects, rng);
  subjects.resize(4);
  const std::size_t n_a = strong ? 3 + uniform_index(rng, 2) : uniform_index(rng, 2);
  std::vector<char> grades(4, 'B');
  for (std::size_t i = 0; i < 4; ++i) grades[i] = i < n_a ? 'A' : static_cast<char>('B' + uniform_index(rng, 4));
  shuffle(grades, rng);
  const std::string h1 = pick(kH1Subjects, rng);
  const char h1_grade = static_cast<char>('A' + uniform_index(rng, 3));
  double uas = h1_points(h1_grade);
  for (const char g : grades) uas += h2_points(g);
  std::string out = "School:" + pick(kSchools, rng) + ", UAS:" + format_score(uas) + "; Grades:H1 " + h1 + " " +
                    h1_grade;
  for (std::size_t i = 0; i < 4; ++i) out += ", H2 " + subjects[i] + " " + grades[i];
  return out;
}

inline std::string make_gceo(Rng& rng) {
  auto subjects = kGceoSubjects;
  shuffle(subjects, rng);
  const std::size_t n = 4 + uniform_index(rng, 3);
  std::string out;
  for (std::size_t i = 0; i < n; ++i) {
    if (i) out += ", ";
    out += subjects[i] + " " + pick(kGceoGrades, rng);
  }
  return out;
}

inline std::string make_leadership_entry(const std::string& role, Rng& rng) {
  return pick(kClubs, rng) + ", Level:" + role + ", Year:" + std::to_string(2021 + uniform_index(rng, 4)) +
         ", Category:" + pick(kCategories, rng) + ", Participation:" +
         (uniform_index(rng, 2) ? "Executive Committee" : "Regular");
}

inline std::vector<std::string> make_leadership(bool strong, Rng& rng) {
  std::vector<std::string> out;
  if (strong) {
    out.push_back(make_leadership_entry(pick(kStrongRoles, rng), rng));
    if (bernoulli(rng, 0.5)) out.push_back(make_leadership_entry(pick(kWeakRoles, rng), rng));
    shuffle(out, rng);
  } else {
    const std::size_t n = uniform_index(rng, 3);
    for (std::size_t i = 0; i < n; ++i) out.push_back(make_leadership_entry(pick(kWeakRoles, rng), rng));
  }
  return out;
}

inline std::array<std::string, kPiqSlots> make_piq(bool positive, Rng& rng) {
  // 3 keyword sentences: positive profiles carry 2 or 3 positive ones.
  const std::size_t n_pos = positive ? 2 + uniform_index(rng, 2) : uniform_index(rng, 2);
  std::vector<bool> tone(3, false);
  for (std::size_t i = 0; i < n_pos; ++i) tone[i] = true;
  shuffle(tone, rng);
  std::array<std::string, kPiqSlots> piq;
  for (std::size_t i = 0; i < 3; ++i) {
    const auto& frame = pick(kFrames, rng);
    const auto& kw = pick(tone[i] ? kPositive : kNegative, rng);
    const auto& topic = pick(kTopics, rng);
    // Frame 2 takes (topic, keyword); the others take (keyword, topic).
    piq[i] = frame == kFrames[1] ? fill2(frame, topic, kw) : fill2(frame, kw, topic);
  }
  for (std::size_t i = 3; i < kPiqSlots; ++i) piq[i] = fill1(pick(kFillers, rng), pick(kTopics, rng));
  return piq;
}

inline std::size_t count_words(const std::string& text, const std::vector<std::string>& words) {
  std::size_t n = 0;
  for (const auto& w : words) {
    const std::regex re("\\b" + w + "\\b");
    n += static_cast<std::size_t>(std::distance(std::sregex_iterator(text.begin(), text.end(), re),
                                                std::sregex_iterator()));
  }
  return n;
}

}  // namespace synth

struct PlantedFeatures {
  bool academic = false;
  bool leadership = false;
  bool piq = false;
};

// Recovers the planted features from profile text.
inline PlantedFeatures planted_features(const Profile& p) {
  PlantedFeatures f;
  static const std::regex h2(R"(H2 [A-Z ]+ ([A-E])\b)");
  std::size_t n_a = 0;
  for (auto it = std::sregex_iterator(p.gcea.begin(), p.gcea.end(), h2); it != std::sregex_iterator(); ++it) {
    if ((*it)[1] == "A") ++n_a;
  }
  f.academic = n_a >= 3;
  for (const auto& entry : p.leadership) {
    for (const auto& role : synth::kStrongRoles) {
      if (entry.find("Level:" + role + ",") != std::string::npos) f.leadership = true;
    }
  }
  const auto piq = field_text(p, Field::kPiq);
  f.piq = synth::count_words(piq, synth::kPositive) > synth::count_words(piq, synth::kNegative);
  return f;
}

inline int planted_label(const Profile& p) {
  const auto f = planted_features(p);
  return (int(f.academic) + int(f.leadership) + int(f.piq)) >= 2 ? 1 : 0;
}

inline std::vector<Profile> generate_synthetic(std::size_t n, std::uint64_t seed, const SignalSpec& spec = {}) {
  if (n < 10) throw UsageError("generate_synthetic: n must be at least 10");
  if (spec.balance < 0 || spec.balance > 1 || spec.noise < 0 || spec.noise > 1 || spec.missing < 0 ||
      spec.missing > 1) {
    throw UsageError("generate_synthetic: balance, noise and missing must lie in [0, 1]");
  }
  // Feature triples grouped by the majority they produce.
  static const std::array<std::array<bool, 3>, 4> positives{{{1, 1, 1}, {1, 1, 0}, {1, 0, 1}, {0, 1, 1}}};
  static const std::array<std::array<bool, 3>, 4> negatives{{{0, 0, 0}, {0, 0, 1}, {0, 1, 0}, {1, 0, 0}}};

  Rng rng(seed);
  std::vector<Profile> out;
  out.reserve(n);
  char id[32];
  for (std::size_t i = 0; i < n; ++i) {
    const int clean = bernoulli(rng, spec.balance) ? 1 : 0;
    const auto& feat = (clean ? positives : negatives)[uniform_index(rng, 4)];
    Profile p;
    std::snprintf(id, sizeof id, "S%06zu", i);
    p.id = id;
    p.gcea = synth::make_gcea(feat[0], rng);
    p.gceo = synth::make_gceo(rng);
    p.leadership = synth::make_leadership(feat[1], rng);
    p.piq = synth::make_piq(feat[2], rng);
    if (bernoulli(rng, spec.missing)) p.gceo.clear();
    for (std::size_t k = 3; k < kPiqSlots; ++k)
      if (bernoulli(rng, spec.missing)) p.piq[k].clear();
    p.label = bernoulli(rng, spec.noise) ? 1 - clean : clean;
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace bgmhan
