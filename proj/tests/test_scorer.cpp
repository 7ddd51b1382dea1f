#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>

#include "selfteach/checkpoint.hpp"
#include "selfteach/errors.hpp"
#include "selfteach/optimizer.hpp"
#include "selfteach/scorer.hpp"
#include "test_util.hpp"

using namespace selfteach;

namespace {

Vocabulary small_vocab() {
  Vocabulary v;
  v.add_utf8("abcdefghxyz 问题答案");
  return v;
}

WeakMCInstance mc_instance(std::string id, std::string context, int answer) {
  WeakMCInstance w;
  w.id = std::move(id);
  w.question = "ab问";
  w.options = {"cd", "ef", "gh"};
  w.answer_index = answer;
  w.context = std::move(context);
  return w;
}

// Relative error with an absolute floor for near-zero components.
bool close(double analytic, double numeric) {
  return std::abs(analytic - numeric) <= 1e-7 + 1e-4 * std::max(std::abs(analytic), std::abs(numeric));
}

template <class Batch>
void check_gradients(ParamGradients params, const Batch& batch) {
  using Example = typename Batch::value_type;
  const auto loss_at = [&](const ParamGradients& p) {
    return gradients(p, std::span<const Example>(batch)).loss;
  };
  const auto analytic = gradients(params, std::span<const Example>(batch));
  CHECK(std::abs(analytic.loss - loss_at(params)) < 1e-12);
  auto arrays = params.arrays();
  const auto grads = analytic.grads.arrays();
  const double h = 1e-4;
  std::size_t checked = 0, bad = 0;
  for (std::size_t a = 0; a < arrays.size(); ++a) {
    for (std::size_t i = 0; i < arrays[a].data.size(); ++i) {
      const double saved = arrays[a].data[i];
      arrays[a].data[i] = saved + h;
      const double up = loss_at(params);
      arrays[a].data[i] = saved - h;
      const double down = loss_at(params);
      arrays[a].data[i] = saved;
      const double numeric = (up - down) / (2 * h);
      ++checked;
      if (!close(grads[a].data[i], numeric)) {
        ++bad;
        MESSAGE(arrays[a].name << "[" << i << "] analytic " << grads[a].data[i] << " numeric " << numeric);
      }
    }
  }
  CHECK(checked > 0);
  CHECK(bad == 0);
}

}  // namespace

TEST_CASE("encode_mc layout") {
  const auto vocab = small_vocab();
  const auto enc = encode_mc(mc_instance("1", "xcdyef", 0), vocab, 64);
  REQUIRE(enc.options.size() == 3);
  const auto& seq = enc.options[1];
  // "ab问" SEP "ef" SEP "xcdyef"
  REQUIRE(seq.size() == 3 + 1 + 2 + 1 + 6);
  CHECK(seq.ids[3] == Vocabulary::kSeparator);
  CHECK(seq.segments[0] == Segment::kQuestion);
  CHECK(seq.segments[4] == Segment::kOption);
  CHECK(seq.segments[7] == Segment::kContext);
  CHECK(seq.ids[4] == vocab.id(U'e'));
  CHECK(seq.ids[2] == vocab.id(U'问'));

  SUBCASE("unknown characters map to the reserved id") {
    const auto unk = encode_mc(mc_instance("2", "Q", 0), vocab, 64);
    CHECK(unk.options[0].ids.back() == Vocabulary::kUnknown);
  }
  SUBCASE("context is truncated from the tail") {
    const auto cut = encode_mc(mc_instance("3", "xyzxyzxyzxyz", 0), vocab, 10);
    for (const auto& s : cut.options) {
      CHECK(s.size() == 10);
      CHECK(s.ids.back() == vocab.id(U'z'));
    }
  }
  CHECK_THROWS_AS(encode_mc(mc_instance("4", "x", 0), vocab, 2), ConfigError);
}

TEST_CASE("encode_span offsets and truncation") {
  const auto vocab = small_vocab();
  const auto enc = encode_span("问题", "xx答案yy", vocab, 64);
  CHECK(enc.context_begin == 3);
  CHECK(enc.tokens.size() == 9);
  CHECK(enc.char_offsets == std::vector<int>{0, 1, 2, 3, 4, 5});
  const auto gold = answer_tokens(enc, 2, 4);
  REQUIRE(gold);
  CHECK(gold->first == 5);
  CHECK(gold->second == 6);

  const auto cut = encode_span("问题", "xx答案yy", vocab, 6);
  CHECK(cut.tokens.size() == 6);
  CHECK_FALSE(answer_tokens(cut, 2, 4));
  CHECK(answer_tokens(cut, 0, 3));
  CHECK_FALSE(answer_tokens(enc, 3, 3));
}

TEST_CASE("forward passes produce distributions") {
  const auto vocab = small_vocab();
  const auto mc = ScorerParams::initialize(Task::kMultipleChoice, vocab.size(), 16, 5);
  const auto p = forward_mc(mc, encode_mc(mc_instance("1", "xcdyef", 0), vocab, 64));
  CHECK(p.probs.size() == 3);
  CHECK(is_distribution(p.probs));

  const auto sp = ScorerParams::initialize(Task::kExtractive, vocab.size(), 16, 5);
  const auto enc = encode_span("问题", "xx答案yy", vocab, 64);
  const auto q = forward_span(sp, enc);
  CHECK(q.start_probs.size() == enc.tokens.size());
  CHECK(is_distribution(q.start_probs));
  CHECK(is_distribution(q.end_probs));

  CHECK_THROWS_AS(forward_span(mc, enc), ContractError);
  CHECK_THROWS_AS(forward_mc(sp, encode_mc(mc_instance("1", "x", 0), vocab, 64)), ContractError);

  // Initialization is a pure function of its arguments.
  CHECK(ScorerParams::initialize(Task::kMultipleChoice, vocab.size(), 16, 5) == mc);
  CHECK_FALSE(ScorerParams::initialize(Task::kMultipleChoice, vocab.size(), 16, 6) == mc);
}

TEST_CASE("analytic gradients match central differences") {
  const auto vocab = small_vocab();
  SUBCASE("multiple choice, hard and soft") {
    auto params = ParamGradients::initialize(Task::kMultipleChoice, vocab.size(), 16, 9);
    std::vector<McExample> batch;
    batch.push_back({"a", encode_mc(mc_instance("a", "xcdyefzgh", 0), vocab, 64), {1.0, 0.0, 0.0}, false});
    batch.push_back({"b", encode_mc(mc_instance("b", "efcdxx问", 1), vocab, 64), {0.2, 0.7, 0.1}, true});
    check_gradients(params, batch);
  }
  SUBCASE("extractive, hard and soft") {
    auto params = ParamGradients::initialize(Task::kExtractive, vocab.size(), 16, 9);
    std::vector<SpanExample> batch(2);
    batch[0].id = "a";
    batch[0].input = encode_span("问题", "xx答案yy", vocab, 64);
    batch[0].gold_start = 5;
    batch[0].gold_end = 6;
    batch[1].id = "b";
    batch[1].input = encode_span("ab", "cd答efgh", vocab, 64);
    const std::size_t n = batch[1].input.tokens.size();
    batch[1].target_start.assign(n, 0.0);
    batch[1].target_end.assign(n, 0.0);
    batch[1].target_start[4] = 0.7;
    batch[1].target_start[5] = 0.3;
    batch[1].target_end[6] = 1.0;
    batch[1].soft = true;
    check_gradients(params, batch);
  }
}

TEST_CASE("one-hot soft span labels give half the hard gradient") {
  const auto vocab = small_vocab();
  const auto params = ParamGradients::initialize(Task::kExtractive, vocab.size(), 8, 2);
  SpanExample hard;
  hard.id = "x";
  hard.input = encode_span("问题", "xx答案yy", vocab, 64);
  hard.gold_start = 5;
  hard.gold_end = 6;
  SpanExample soft = hard;
  soft.soft = true;
  soft.target_start.assign(hard.input.tokens.size(), 0.0);
  soft.target_end.assign(hard.input.tokens.size(), 0.0);
  soft.target_start[5] = 1.0;
  soft.target_end[6] = 1.0;
  const auto gh = gradients(params, std::span<const SpanExample>(&hard, 1));
  const auto gs = gradients(params, std::span<const SpanExample>(&soft, 1));
  CHECK(gs.loss == doctest::Approx(0.5 * gh.loss).epsilon(1e-12));
  const auto a = gh.grads.arrays();
  const auto b = gs.grads.arrays();
  for (std::size_t k = 0; k < a.size(); ++k) {
    for (std::size_t i = 0; i < a[k].data.size(); ++i) CHECK(b[k].data[i] == doctest::Approx(0.5 * a[k].data[i]));
  }
}

TEST_CASE("loss errors name the instance") {
  const auto vocab = small_vocab();
  const auto params = ScorerParams::initialize(Task::kMultipleChoice, vocab.size(), 8, 1);
  std::vector<McExample> batch{{"bad-id", encode_mc(mc_instance("bad-id", "x", 0), vocab, 64), {1.0, 0.0}, false}};
  try {
    gradients(params, std::span<const McExample>(batch));
    FAIL("expected ContractError");
  } catch (const ContractError& e) {
    CHECK(std::string(e.what()).find("bad-id") != std::string::npos);
  }
}

TEST_CASE("decode_span picks the best span inside the context") {
  const auto vocab = small_vocab();
  const auto enc = encode_span("问题", "xx答案yy", vocab, 64);
  SpanDistributions p{std::vector<double>(enc.tokens.size(), 0.01), std::vector<double>(enc.tokens.size(), 0.01)};
  p.start_probs[0] = 0.9;  // question token: never chosen
  p.start_probs[5] = 0.5;
  p.end_probs[6] = 0.5;
  CHECK(decode_span(enc, p) == std::pair{2, 4});
  p.end_probs[4] = 0.9;  // end before start is not allowed
  CHECK(decode_span(enc, p) == std::pair{2, 4});
}

TEST_CASE("Adam update with bias correction") {
  auto params = ParamGradients::zeros(Task::kMultipleChoice, 1, 1);
  for (auto& a : params.arrays()) std::fill(a.data.begin(), a.data.end(), 1.0);
  auto grads = ParamGradients::zeros(Task::kMultipleChoice, 1, 1);
  for (auto& a : grads.arrays()) std::fill(a.data.begin(), a.data.end(), 1.0);
  auto state = AdamState::zeros_like(Task::kMultipleChoice, 1, 1);
  const double expected[] = {0.9900000001, 0.9800000002000001, 0.9700000003000001};
  for (double e : expected) {
    opt_step(params, grads, state, 0.01);
    CHECK(std::abs(params.embedding[0] - e) < 1e-15);
    CHECK(std::abs(params.mc_head[2] - e) < 1e-15);
  }
  CHECK(state.step == 3);

  auto wrong = ParamGradients::zeros(Task::kExtractive, 1, 1);
  CHECK_THROWS_AS(opt_step(params, wrong, state, 0.01), ContractError);
}

TEST_CASE("checkpoint round trip") {
  testing::TempDir dir;
  const auto vocab = small_vocab();
  Checkpoint ckpt;
  ckpt.params = ScorerParams::initialize(Task::kExtractive, vocab.size(), 8, 77);
  ckpt.id = "teacher-s1-abc";
  ckpt.vocab = vocab;
  ckpt.max_len = 64;
  ckpt.lineage = {"teacher", "deadbeef", "parent-1", {"soft-1", "soft-2"}};
  save_checkpoint(dir / "t.ckpt", ckpt);

  const auto back = load_checkpoint(dir / "t.ckpt");
  CHECK(back.params == ckpt.params);
  CHECK(back.id == ckpt.id);
  CHECK(back.vocab == ckpt.vocab);
  CHECK(back.max_len == 64);
  CHECK(back.lineage.parent_id == "parent-1");
  CHECK(back.lineage.soft_file_ids == ckpt.lineage.soft_file_ids);
  CHECK(params_digest(back.params) == params_digest(ckpt.params));

  CHECK_THROWS_AS(load_checkpoint(dir / "t.ckpt", Task::kMultipleChoice), ContractError);
  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), DataError);

  SUBCASE("corruption is detected") {
    auto bytes = read_file(dir / "t.ckpt");
    dir.write("short.ckpt", bytes.substr(0, bytes.size() - 5));
    CHECK_THROWS_AS(load_checkpoint(dir / "short.ckpt"), CheckpointError);
    bytes[0] = 'X';
    dir.write("magic.ckpt", bytes);
    CHECK_THROWS_AS(load_checkpoint(dir / "magic.ckpt"), CheckpointError);
  }
  SUBCASE("bare parameters") {
    save_params(dir / "p.bin", ckpt.params);
    CHECK(load_params(dir / "p.bin") == ckpt.params);
  }
}
