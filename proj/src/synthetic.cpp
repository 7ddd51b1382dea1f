#include "selfteach/synthetic.hpp"

#include <algorithm>
#include <random>
#include <variant>

#include "selfteach/context_forge.hpp"
#include "selfteach/errors.hpp"
#include "selfteach/unicode.hpp"

namespace selfteach::synthetic {
namespace {

// Disjoint blocks: markers and fillers in CJK Extension A, entities in the
// unified ideographs block.
constexpr char32_t kMarkerBase = 0x3400;
constexpr char32_t kFillerBase = 0x3500;
constexpr char32_t kFillerEnd = 0x4DC0;
constexpr char32_t kEntityBase = 0x4E00;
constexpr char32_t kEntityEnd = 0xA000;

class Generator {
 public:
  explicit Generator(const CorpusConfig& config) : config_(config), rng_(config.seed) {
    if (config.n_options < 2 || config.n_options > config.n_categories) {
      throw ConfigError("synthetic: need 2 <= n_options <= n_categories");
    }
    const std::size_t n_entity_chars = config.n_categories * config.chars_per_category;
    if (config.n_categories > kFillerBase - kMarkerBase || config.n_filler < 1 ||
        config.n_filler > kFillerEnd - kFillerBase || n_entity_chars > kEntityEnd - kEntityBase ||
        config.chars_per_category < 1 || config.entity_len < 1) {
      throw ConfigError("synthetic: character budget exceeded");
    }
    std::vector<std::size_t> order(n_entity_chars);
    for (std::size_t i = 0; i < n_entity_chars; ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng_);
    category_chars_.resize(config.n_categories);
    for (std::size_t i = 0; i < n_entity_chars; ++i) {
      category_chars_[i % config.n_categories].push_back(kEntityBase + static_cast<char32_t>(order[i]));
    }
  }

  WeakMCInstance instance(const std::string& id, bool weak) {
    const std::size_t category = uniform(config_.n_categories);
    std::vector<std::size_t> others;
    for (std::size_t c = 0; c < config_.n_categories; ++c) {
      if (c != category) others.push_back(c);
    }
    std::shuffle(others.begin(), others.end(), rng_);

    std::vector<std::u32string> options;
    options.push_back(entity(category));
    for (std::size_t k = 1; k < config_.n_options; ++k) {
      std::u32string e;
      do {
        e = entity(others[k - 1]);
      } while (std::find(options.begin(), options.end(), e) != options.end());
      options.push_back(std::move(e));
    }
    // Place the answer at a random index.
    const std::size_t answer = uniform(config_.n_options);
    std::swap(options[0], options[answer]);

    std::vector<std::u32string> mentions;
    const double answer_rate = weak ? config_.weak_answer_rate : 1.0;
    const double distractor_rate = weak ? config_.weak_distractor_rate : config_.clean_distractor_rate;
    for (std::size_t k = 0; k < options.size(); ++k) {
      const double rate = k == answer ? answer_rate : distractor_rate;
      if (bernoulli(rate)) mentions.push_back(options[k]);
    }
    std::shuffle(mentions.begin(), mentions.end(), rng_);

    std::u32string question = filler(3);
    question.push_back(kMarkerBase + static_cast<char32_t>(category));
    question += filler(2);

    std::u32string context;
    const std::size_t gap = config_.context_filler / (mentions.size() + 1);
    for (const auto& m : mentions) {
      context += filler(gap);
      context += m;
    }
    context += filler(std::max<std::size_t>(gap, 1));

    WeakMCInstance mc;
    mc.id = id;
    mc.question = text::encode(question);
    for (const auto& o : options) mc.options.push_back(text::encode(o));
    mc.answer_index = static_cast<int>(answer);
    mc.context = text::encode(context);
    mc.provenance = weak ? Provenance::kWeak : Provenance::kClean;
    return mc;
  }

 private:
  std::size_t uniform(std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng_); }
  bool bernoulli(double p) { return std::bernoulli_distribution(p)(rng_); }

  std::u32string entity(std::size_t category) {
    std::u32string e;
    const auto& chars = category_chars_[category];
    for (std::size_t i = 0; i < config_.entity_len; ++i) e.push_back(chars[uniform(chars.size())]);
    return e;
  }

  std::u32string filler(std::size_t n) {
    std::u32string f;
    for (std::size_t i = 0; i < n; ++i) f.push_back(kFillerBase + static_cast<char32_t>(uniform(config_.n_filler)));
    return f;
  }

  CorpusConfig config_;
  std::mt19937_64 rng_;
  std::vector<std::vector<char32_t>> category_chars_;
};

std::string numbered(const char* prefix, std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s-%05zu", prefix, i);
  return buf;
}

}  // namespace

Corpus generate(const CorpusConfig& config) {
  Generator gen(config);
  Corpus corpus;
  for (std::size_t i = 0; i < config.n_train; ++i) corpus.train.push_back(gen.instance(numbered("v", i), false));
  for (std::size_t i = 0; i < config.n_test; ++i) corpus.test.push_back(gen.instance(numbered("t", i), false));
  for (std::size_t i = 0; i < config.n_weak; ++i) corpus.weak.push_back(gen.instance(numbered("w", i), true));
  return corpus;
}

std::vector<ExtractiveInstance> to_extractive(const std::vector<WeakMCInstance>& instances) {
  std::vector<ExtractiveInstance> out;
  for (const auto& mc : instances) {
    auto converted = selfteach::to_extractive(mc);
    if (auto* ex = std::get_if<ExtractiveInstance>(&converted)) out.push_back(std::move(*ex));
  }
  return out;
}

ForgeFixture forge_fixture(std::size_t n_instances, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto pick = [&](std::size_t n) { return std::uniform_int_distribution<std::size_t>(0, n - 1)(rng); };
  const auto cjk = [&](std::size_t n, char32_t base, std::size_t range) {
    std::u32string s;
    for (std::size_t i = 0; i < n; ++i) s.push_back(base + static_cast<char32_t>(pick(range)));
    return text::encode(s);
  };
  ForgeFixture fx;
  std::size_t doc_id = 0;
  const auto add_doc = [&](std::string body) {
    fx.documents.push_back({"d" + std::to_string(doc_id++), std::move(body)});
  };
  for (std::size_t i = 0; i < n_instances; ++i) {
    QAInstance qa;
    qa.id = "fx-" + std::to_string(i);
    // Question characters come from a block of their own so retrieval keys on them.
    qa.question = cjk(6, 0x5000, 400) + "？";
    for (int k = 0; k < 4; ++k) qa.options.push_back(cjk(2, 0x8000, 300));
    if (i % 7 == 3) qa.options = {"6", "6.000000", "7", "8"};
    qa.answer_index = static_cast<int>(pick(4));
    qa.exam_title = "fixture exam " + std::to_string(i % 5);
    const std::string& answer = qa.answer();
    const std::string& wrong = qa.options[static_cast<std::size_t>((qa.answer_index + 1) % 4)];
    const std::string noise = cjk(20, 0x9000, 200);
    switch (i % 5) {
      case 0:  // a clean supporting document
        add_doc(noise + qa.question + answer + noise);
        break;
      case 1:  // a leaking copy of the QA record plus a supporting one
        add_doc(qa.question + answer + " " + wrong + noise);
        add_doc(noise + answer + qa.question.substr(0, 6));
        break;
      case 2:  // only leaking documents: every snippet is filtered
        add_doc(qa.question + qa.options[0] + qa.options[1] + qa.options[2] + qa.options[3]);
        break;
      case 3:  // supporting document that mentions a wrong option only
        add_doc(noise + qa.question + wrong + noise);
        break;
      default:  // question terms only
        add_doc(noise + qa.question);
        break;
    }
    fx.qa.push_back(std::move(qa));
  }
  // Unrelated documents.
  for (int j = 0; j < 10; ++j) add_doc(cjk(40, 0xA000, 100));
  return fx;
}

}  // namespace selfteach::synthetic
