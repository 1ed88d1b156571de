#pragma once

// Transcribed sample data for the four canonical prompt layouts, shared by the
// unit tests and the acceptance runner.

#include <string>
#include <vector>

#include "prophet/prompt.hpp"
#include "test_support.hpp"

namespace golden_cases {

using namespace prophet;

struct Scored {
  const char* answer;
  double score;
};

inline std::vector<AnswerCandidate> cands(std::initializer_list<Scored> list) {
  std::vector<AnswerCandidate> out;
  for (const auto& s : list) out.push_back({s.answer, s.score});
  return out;
}

inline Sample make_sample(std::string id, std::string caption, std::string question, std::vector<std::string> answers) {
  Sample s;
  s.id = std::move(id);
  s.caption = std::move(caption);
  s.question = std::move(question);
  s.answers = std::move(answers);
  return s;
}

inline std::vector<std::string> ten(const std::string& modal, std::size_t count, const std::string& other = "other") {
  std::vector<std::string> a(count, modal);
  for (std::size_t i = count; i < 10; ++i) a.push_back(other + std::to_string(i));
  return a;
}

// One example plus the test sample, N=1 T=1.
inline std::string render_pair(const Sample& ex, const std::vector<AnswerCandidate>& ex_c, const Sample& test,
                               const std::vector<AnswerCandidate>& test_c, PromptConfig cfg) {
  cfg.N = 1;
  cfg.T = 1;
  ExampleLookup lookup{[&](const std::string&) -> const Sample& { return ex; },
                       [&](const std::string&) { return ex_c; }};
  const ExampleSelection sel{test.id, {ex.id}, {0.9}};
  return build_prompts(test, test_c, sel, lookup, cfg).prompts.at(0);
}


inline std::string standard() {
  const auto ex = make_sample("ex", "The motorcycle racers are getting ready for a race.",
                              "What sport are these guys doing?", ten("motorcross", 6));
  const auto test = make_sample("te", "a black motorcycle parked in a parking lot.", "What sport can you use this for?",
                                ten("race", 3));
  const auto ex_c = cands({{"motorcross", 0.94}, {"motocross", 0.79}, {"bike", 0.35}, {"dirt bike", 0.28},
                           {"motorcycle", 0.03}, {"bmx", 0.03}, {"cycling", 0.02}, {"motorbike", 0.02},
                           {"race", 0.02}, {"bicycle", 0.02}});
  const auto te_c = cands({{"race", 0.53}, {"motorcycle", 0.41}, {"motocross", 0.19}, {"bike", 0.17},
                           {"motorcross", 0.15}, {"cycling", 0.11}, {"dirt bike", 0.10}, {"ride", 0.08},
                           {"bicycling", 0.01}, {"bicycle", 0.01}});
  return render_pair(ex, ex_c, test, te_c, PromptConfig{});
}

inline std::string multiple_choice() {
  auto ex = make_sample("ex", "A young man riding a skateboard on a sidewalk.",
                        "What part of his body will be most harmed by the item in his mouth?", ten("lungs", 7));
  ex.choices = std::vector<std::string>{"back", "lungs", "feet", "eyes"};
  auto test = make_sample("te", "a young boy kneeling on a skateboard on the street.",
                          "What did this lad likely injure here?", ten("knee", 5));
  test.choices = std::vector<std::string>{"knee", "elbow", "rear", "board"};
  const auto ex_c = cands({{"skateboard", 0.02}, {"nothing", 0.02}, {"table", 0.01}, {"leg", 0.01},
                           {"helmet", 0.001}, {"knees", 0.001}, {"skateboarding", 0.001}, {"head", 0.001},
                           {"teeth", 0.001}, {"falling", 0.001}});
  const auto te_c = cands({{"skateboard", 0.18}, {"shoes", 0.02}, {"shoe", 0.02}, {"skateboarding", 0.01},
                           {"street", 0.01}, {"flowers", 0.01}, {"skating", 0.01}, {"boy", 0.01},
                           {"head", 0.001}, {"skateboarder", 0.001}});
  PromptConfig cfg;
  cfg.task_format = TaskFormat::multiple_choice;
  return render_pair(ex, ex_c, test, te_c, cfg);
}

inline std::string science_hint() {
  auto ex = make_sample("ex", "A picture of a black and white model of a molecule.", "Complete the statement. Graphite is ().",
                        ten("an elementary substance", 10));
  ex.hint = "The model below represents graphite. Graphite is used to make pencil lead.";
  ex.choices = std::vector<std::string>{"a compound", "an elementary substance"};
  auto test = make_sample("te", "A pair of eye glasses with the word h on them.", "Complete the statement. Hydrogen is ().",
                          ten("an elementary substance", 10));
  test.hint =
      "The model below represents a molecule of hydrogen. Hydrogen gas was once used to make large airships, such as "
      "blimps, float. It is no longer used in airships because it catches fire easily.";
  test.choices = std::vector<std::string>{"an elementary substance", "a compound"};
  const auto ex_c = cands({{"an elementary substance", 1.0}, {"a compound", 0.02}, {"an adult substance", 0.01},
                           {"an an elementary substance", 0.01}});
  const auto te_c = cands({{"a compound", 0.68}, {"an elementary substance", 0.32}, {"the same substance", 0.001},
                           {"the same amount", 0.001}});
  PromptConfig cfg;
  cfg.task_format = TaskFormat::science_hint;
  cfg.K = 4;
  return render_pair(ex, ex_c, test, te_c, cfg);
}

inline std::string ocr() {
  auto ex = make_sample("ex", "A close up of a cell phone with a keyboard.", "How many apps are on this page excluding market?",
                        ten("7", 4));
  ex.ocr_tokens = std::vector<std::string>{"Market", "3", "Facebook", "Browser", "5", "4", "6", "1", "8", "30"};
  auto test = make_sample("te", "A screenshot of a yahoo mail page.", "What is free on this page?", ten("camera", 4));
  test.ocr_tokens = std::vector<std::string>{"Free",    "Page",    "Nake WT My Page", "ADVERTISEMENT", "YAHOO!",
                                             "FREE Camera Phone", "Notepad", "MAIL", "Yaboo! Mail"};
  const auto ex_c = cands({{"6", 0.20}, {"5", 0.19}, {"8", 0.18}, {"9", 0.12}, {"7", 0.08}, {"answering does", 0.05},
                           {"10", 0.05}, {"13", 0.05}, {"12", 0.04}, {"4", 0.04}});
  const auto te_c = cands({{"amera", 0.40}, {"video camera", 0.29}, {"video", 0.13}, {"photos", 0.04},
                           {"video call", 0.04}, {"webcam", 0.03}, {"videos", 0.03}, {"photography", 0.01},
                           {"photoshop", 0.01}, {"internet explorer", 0.01}});
  PromptConfig cfg;
  cfg.task_format = TaskFormat::ocr;
  return render_pair(ex, ex_c, test, te_c, cfg);
}

struct Case {
  const char* file;
  std::string rendered;
};

inline std::vector<Case> all() {
  return {{"standard.txt", standard()},
          {"multiple_choice.txt", multiple_choice()},
          {"science_hint.txt", science_hint()},
          {"ocr.txt", ocr()}};
}

inline std::string expected(const std::string& file) {
  return testing_support::slurp(std::string(PROPHET_GOLDEN_DIR) + "/" + file);
}

}  // namespace golden_cases
