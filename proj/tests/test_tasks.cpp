#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "oracles.hpp"
#include "peftlab/tasks.hpp"

using namespace peftlab;

namespace {

Tensor uniform_log_probs(Index t_len, Index vocab) {
  return Tensor::full({t_len, vocab}, std::log(1.0 / static_cast<double>(vocab)));
}

Tensor normalized_rows(const Tensor& raw) {
  Tensor out(raw.shape());
  for (Index r = 0; r < raw.rows(); ++r) {
    std::vector<double> row(static_cast<std::size_t>(raw.cols()));
    for (Index c = 0; c < raw.cols(); ++c) row[static_cast<std::size_t>(c)] = raw.at(r, c);
    const std::vector<double> soft = oracles::softmax_ref(row);
    for (Index c = 0; c < raw.cols(); ++c) {
      out.at(r, c) = std::log(soft[static_cast<std::size_t>(c)]);
    }
  }
  return out;
}

double ctc_value(const Tensor& log_probs, const std::vector<int>& labels) {
  Graph g;
  return g.scalar_value(ctc_loss(g, g.input(log_probs), labels));
}

double pit_value(const Tensor& logits, const Tensor& activity) {
  Graph g;
  return g.scalar_value(pit_loss(g, g.input(logits), activity));
}

}  // namespace

TEST_SUITE("tasks") {

TEST_CASE("task and metric naming") {
  TaskSpec cls;
  CHECK(cls.name() == "utterance_cls");
  CHECK(cls.metric() == MetricKind::Accuracy);
  CHECK(cls.head_width() == cls.n_classes);

  TaskSpec ctc;
  ctc.kind = TaskKind::FrameCtc;
  CHECK(ctc.name() == "frame_ctc");
  CHECK(ctc.metric() == MetricKind::TokenErrorRate);
  CHECK(ctc.head_width() == ctc.vocab_size);

  TaskSpec diar;
  diar.kind = TaskKind::Diarization;
  CHECK(diar.name() == "diarization");
  CHECK(diar.metric() == MetricKind::FrameError);
  CHECK(diar.head_width() == 2);

  CHECK(task_from_name("utterance_cls") == TaskKind::UtteranceCls);
  CHECK(task_from_name("frame_ctc") == TaskKind::FrameCtc);
  CHECK(task_from_name("diarization") == TaskKind::Diarization);
  CHECK_THROWS_AS(task_from_name("asr"), ConfigError);

  CHECK(metric_name(MetricKind::Accuracy) == "accuracy");
  CHECK(metric_name(MetricKind::TokenErrorRate) == "ter");
  CHECK(metric_name(MetricKind::FrameError) == "frame_error");
  CHECK(metric_higher_better(MetricKind::Accuracy));
  CHECK_FALSE(metric_higher_better(MetricKind::TokenErrorRate));
  CHECK_FALSE(metric_higher_better(MetricKind::FrameError));
  CHECK(metric_worst(MetricKind::Accuracy) == 0.0);
  CHECK(metric_worst(MetricKind::TokenErrorRate) == 1.0);
  CHECK(metric_worst(MetricKind::FrameError) == 1.0);

  TaskSpec bad;
  bad.n_classes = 1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = TaskSpec{};
  bad.kind = TaskKind::FrameCtc;
  bad.vocab_size = 1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad.vocab_size = 3;
  bad.max_label_len = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("classification loss closed forms") {
  Graph g;
  const double uniform = g.scalar_value(cross_entropy(g, g.input(Tensor({1, 3})), 0));
  CHECK(uniform == doctest::Approx(std::log(3.0)).epsilon(1e-12));

  Graph g2;
  Tensor peaked = Tensor::row_matrix({{0.0, 40.0, 0.0}});
  CHECK(g2.scalar_value(cross_entropy(g2, g2.input(peaked), 1)) < 1e-12);

  Graph g3;
  Tensor two = Tensor::row_matrix({{0.0, std::log(3.0)}});
  const double skewed = g3.scalar_value(cross_entropy(g3, g3.input(two), 1));
  CHECK(skewed == doctest::Approx(-std::log(0.75)).epsilon(1e-12));

  Graph g4;
  CHECK_THROWS_AS(cross_entropy(g4, g4.input(two), 2), LabelError);
  CHECK_THROWS_AS(cross_entropy(g4, g4.input(two), -1), LabelError);

  Rng rng(3);
  Tensor logits = oracles::random_tensor({1, 4}, rng);
  const double err = grad_check(
      [&](Graph& gg) {
        Binder bind = Binder::all_trainable(gg);
        return cross_entropy(gg, bind(logits), 2);
      },
      {&logits});
  CHECK(err < 1e-6);
}

TEST_CASE("alignment-marginalized loss exact values") {
  CHECK(ctc_value(uniform_log_probs(2, 3), {1}) ==
        doctest::Approx(std::log(3.0)).epsilon(1e-12));

  Tensor confident = normalized_rows(Tensor::row_matrix({{-20.0, 20.0}}));
  CHECK(ctc_value(confident, {1}) < 1e-6);
}

TEST_CASE("alignment-marginalized loss matches path enumeration") {
  Rng rng(17);
  for (int vocab = 2; vocab <= 3; ++vocab) {
    for (int t_len = 1; t_len <= 4; ++t_len) {
      const Tensor lp = normalized_rows(oracles::random_tensor({t_len, vocab}, rng));
      for (int len = 1; len <= 3; ++len) {
        const int syms = vocab - 1;
        int combos = 1;
        for (int i = 0; i < len; ++i) combos *= syms;
        for (int code = 0; code < combos; ++code) {
          std::vector<int> labels(static_cast<std::size_t>(len));
          int rest = code;
          for (int i = 0; i < len; ++i) {
            labels[static_cast<std::size_t>(i)] = 1 + rest % syms;
            rest /= syms;
          }
          if (ctc_min_frames(labels) > t_len) {
            CHECK_THROWS_AS(ctc_value(lp, labels), LabelError);
            continue;
          }
          const double expected = -std::log(oracles::ctc_brute_force(lp, labels));
          CHECK(std::abs(ctc_value(lp, labels) - expected) < 1e-9);
        }
      }
    }
  }
}

TEST_CASE("alignment-marginalized loss input validation") {
  CHECK_THROWS_AS(ctc_value(uniform_log_probs(2, 3), {0}), LabelError);
  CHECK_THROWS_AS(ctc_value(uniform_log_probs(2, 3), {3}), LabelError);
  CHECK_THROWS_AS(ctc_value(uniform_log_probs(2, 3), {1, 1}), LabelError);
  Graph g;
  CHECK_THROWS_AS(ctc_loss(g, g.input(Tensor::vector({0.0, 0.0})), {1}), ShapeError);
  CHECK_THROWS_AS(ctc_value(uniform_log_probs(2, 1), {1}), ShapeError);
}

TEST_CASE("alignment-marginalized loss gradient") {
  Rng rng(29);
  Tensor raw = oracles::random_tensor({4, 3}, rng);
  const double err = grad_check(
      [&](Graph& gg) {
        Binder bind = Binder::all_trainable(gg);
        return ctc_loss(gg, log_softmax_rows(gg, bind(raw)), {1, 2, 1});
      },
      {&raw});
  CHECK(err < 1e-6);
}

TEST_CASE("greedy decoding collapses repeats and drops blanks") {
  Tensor lp = Tensor::row_matrix({{0.1, 0.9, 0.2},
                                  {0.0, 0.8, 0.1},
                                  {0.9, 0.1, 0.0},
                                  {0.1, 0.2, 0.9}});
  CHECK(ctc_greedy_decode(lp) == std::vector<int>{1, 2});

  Tensor blanks = Tensor::row_matrix({{0.9, 0.1, 0.0}, {0.8, 0.0, 0.1}});
  CHECK(ctc_greedy_decode(blanks).empty());

  Tensor split = Tensor::row_matrix({{0.1, 0.9}, {0.9, 0.1}, {0.1, 0.9}});
  CHECK(ctc_greedy_decode(split) == std::vector<int>{1, 1});

  Tensor tie = Tensor::row_matrix({{0.5, 0.5, 0.5}});
  CHECK(ctc_greedy_decode(tie).empty());  // tie resolves to the blank id
  Tensor tie2 = Tensor::row_matrix({{0.1, 0.7, 0.7}});
  CHECK(ctc_greedy_decode(tie2) == std::vector<int>{1});
}

TEST_CASE("token error rate against a reference implementation") {
  CHECK(token_error_rate({1, 2, 3}, {1, 2, 3}) == 0.0);
  CHECK(token_error_rate({1, 2}, {2}) == 1.0);
  CHECK(token_error_rate({}, {1, 2, 3}) == 1.0);
  CHECK_THROWS_AS(token_error_rate({1}, {}), LabelError);

  Rng rng(37);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<int> hyp(rng.below(6));
    std::vector<int> ref(1 + rng.below(5));
    for (int& v : hyp) v = 1 + static_cast<int>(rng.below(3));
    for (int& v : ref) v = 1 + static_cast<int>(rng.below(3));
    const double expected = static_cast<double>(oracles::edit_distance_ref(hyp, ref)) /
                            static_cast<double>(ref.size());
    CHECK(token_error_rate(hyp, ref) == expected);
  }
}

TEST_CASE("minimum alignment length") {
  CHECK(ctc_min_frames({}) == 0);
  CHECK(ctc_min_frames({1}) == 1);
  CHECK(ctc_min_frames({1, 2}) == 2);
  CHECK(ctc_min_frames({1, 1}) == 3);
  CHECK(ctc_min_frames({1, 1, 1}) == 5);
  CHECK(ctc_min_frames({1, 2, 2, 3}) == 5);
}

TEST_CASE("speaker-permutation loss") {
  Tensor activity = Tensor::row_matrix({{1.0, 0.0}, {0.0, 1.0}, {1.0, 1.0}});

  Tensor matched = Tensor::row_matrix({{30.0, -30.0}, {-30.0, 30.0}, {30.0, 30.0}});
  CHECK(pit_value(matched, activity) < 1e-12);

  Tensor swapped = Tensor::row_matrix({{-30.0, 30.0}, {30.0, -30.0}, {30.0, 30.0}});
  CHECK(pit_value(swapped, activity) < 1e-12);

  Rng rng(41);
  for (int trial = 0; trial < 50; ++trial) {
    const Index t_len = 1 + static_cast<Index>(rng.below(6));
    Tensor logits = oracles::random_tensor({t_len, 2}, rng, 2.0);
    Tensor act({t_len, 2});
    for (Index i = 0; i < act.size(); ++i) act[i] = rng.uniform() < 0.5 ? 1.0 : 0.0;
    const double got = pit_value(logits, act);
    CHECK(std::abs(got - oracles::pit_ref(logits, act)) < 1e-12);

    Tensor flipped({t_len, 2});
    for (Index t = 0; t < t_len; ++t) {
      flipped.at(t, 0) = act.at(t, 1);
      flipped.at(t, 1) = act.at(t, 0);
    }
    CHECK(std::abs(got - pit_value(logits, flipped)) < 1e-15);

    double identity = 0.0;
    for (Index t = 0; t < t_len; ++t) {
      identity += oracles::bce_with_logits(logits.at(t, 0), act.at(t, 0)) +
                  oracles::bce_with_logits(logits.at(t, 1), act.at(t, 1));
    }
    identity /= static_cast<double>(2 * t_len);
    CHECK(got <= identity + 1e-15);
  }

  Graph g;
  CHECK_THROWS_AS(pit_loss(g, g.input(Tensor({3, 3})), activity), ShapeError);
  CHECK_THROWS_AS(pit_loss(g, g.input(Tensor({2, 2})), activity), ShapeError);
  Tensor soft = Tensor::row_matrix({{0.5, 0.0}, {0.0, 1.0}, {1.0, 1.0}});
  CHECK_THROWS_AS(pit_loss(g, g.input(Tensor({3, 2})), soft), LabelError);

  Tensor raw = oracles::random_tensor({3, 2}, rng);
  const double err = grad_check(
      [&](Graph& gg) {
        Binder bind = Binder::all_trainable(gg);
        return pit_loss(gg, bind(raw), activity);
      },
      {&raw});
  CHECK(err < 1e-6);
}

TEST_CASE("synthetic data generation is deterministic") {
  GenSizes sizes;
  sizes.n_train = 6;
  sizes.n_test = 4;
  sizes.frames = 5;
  sizes.d_input = 3;

  for (TaskKind kind : {TaskKind::UtteranceCls, TaskKind::FrameCtc, TaskKind::Diarization}) {
    TaskSpec spec;
    spec.kind = kind;
    const Dataset a = gen_task(spec, sizes, 9);
    const Dataset b = gen_task(spec, sizes, 9);
    const Dataset c = gen_task(spec, sizes, 10);
    REQUIRE(a.train.size() == 6);
    REQUIRE(a.test.size() == 4);
    bool any_difference = false;
    for (std::size_t i = 0; i < a.train.size(); ++i) {
      CHECK(oracles::bitwise_equal(a.train[i].features, b.train[i].features));
      CHECK(a.train[i].label == b.train[i].label);
      CHECK(a.train[i].seq == b.train[i].seq);
      any_difference |= !oracles::bitwise_equal(a.train[i].features, c.train[i].features);
    }
    CHECK(any_difference);
  }
}

TEST_CASE("generated labels are consistent with the task contracts") {
  GenSizes sizes;
  sizes.n_train = 24;
  sizes.n_test = 8;
  sizes.frames = 6;
  sizes.d_input = 3;

  TaskSpec cls;
  const Dataset dc = gen_task(cls, sizes, 21);
  for (std::size_t i = 0; i < dc.train.size(); ++i) {
    CHECK(dc.train[i].label == static_cast<int>(i) % cls.n_classes);
  }

  TaskSpec ctc;
  ctc.kind = TaskKind::FrameCtc;
  const Dataset ds = gen_task(ctc, sizes, 22);
  for (const auto& split : {ds.train, ds.test}) {
    for (const DataItem& item : split) {
      REQUIRE(!item.seq.empty());
      CHECK(static_cast<int>(item.seq.size()) <= std::min(ctc.max_label_len, sizes.frames));
      for (std::size_t s = 0; s < item.seq.size(); ++s) {
        CHECK(item.seq[s] >= 1);
        CHECK(item.seq[s] < ctc.vocab_size);
        if (s > 0) CHECK(item.seq[s] != item.seq[s - 1]);
      }
      CHECK(ctc_min_frames(item.seq) <= sizes.frames);
    }
  }

  TaskSpec diar;
  diar.kind = TaskKind::Diarization;
  const Dataset dd = gen_task(diar, sizes, 23);
  for (const DataItem& item : dd.train) {
    REQUIRE(item.activity.rows() == sizes.frames);
    REQUIRE(item.activity.cols() == 2);
    for (Index i = 0; i < item.activity.size(); ++i) {
      CHECK((item.activity[i] == 0.0 || item.activity[i] == 1.0));
    }
  }
}

TEST_CASE("noise-free classes are exactly separable") {
  TaskSpec spec;
  spec.n_classes = 3;
  GenSizes sizes;
  sizes.n_train = 6;
  sizes.n_test = 6;
  sizes.frames = 4;
  sizes.d_input = 5;
  sizes.noise = 0.0;
  const Dataset data = gen_task(spec, sizes, 31);
  for (const DataItem& item : data.test) {
    const DataItem& representative = data.train[static_cast<std::size_t>(item.label)];
    CHECK(representative.label == item.label);
    CHECK(oracles::bitwise_equal(item.features, representative.features));
  }
}

TEST_CASE("training subsets keep order and leave the test split alone") {
  Dataset data;
  data.frames = 1;
  data.d_input = 1;
  for (int i = 0; i < 10; ++i) {
    DataItem item;
    item.features = Tensor::row_matrix({{static_cast<double>(i)}});
    item.label = i;
    data.train.push_back(item);
  }
  for (int i = 100; i < 102; ++i) {
    DataItem item;
    item.features = Tensor::row_matrix({{static_cast<double>(i)}});
    item.label = i;
    data.test.push_back(item);
  }

  const Dataset full = low_resource_split(data, 1.0, 1);
  REQUIRE(full.train.size() == 10);
  for (int i = 0; i < 10; ++i) CHECK(full.train[static_cast<std::size_t>(i)].label == i);

  const Dataset third = low_resource_split(data, 0.25, 1);
  REQUIRE(third.train.size() == 3);  // ceil(0.25 * 10)
  CHECK(third.train[0].label < third.train[1].label);
  CHECK(third.train[1].label < third.train[2].label);
  REQUIRE(third.test.size() == 2);
  CHECK(third.test[0].label == 100);
  CHECK(oracles::bitwise_equal(third.test[0].features, data.test[0].features));

  std::set<std::vector<int>> seen;
  for (std::uint64_t seed = 1; seed <= 8; ++seed) {
    const Dataset sub = low_resource_split(data, 0.25, seed);
    std::vector<int> labels;
    for (const DataItem& item : sub.train) labels.push_back(item.label);
    seen.insert(labels);
  }
  CHECK(seen.size() > 1);

  CHECK(oracles::bitwise_equal(low_resource_split(data, 0.25, 3).train[0].features,
                               low_resource_split(data, 0.25, 3).train[0].features));

  CHECK_THROWS_AS(low_resource_split(data, 0.0, 1), ConfigError);
  CHECK_THROWS_AS(low_resource_split(data, 1.5, 1), ConfigError);
}

TEST_CASE("pretraining corpus generation") {
  const auto corpus = gen_pretrain_corpus(5, 7, 3, 0.5, 13);
  REQUIRE(corpus.size() == 5);
  for (const Tensor& seq : corpus) {
    CHECK(seq.rows() == 7);
    CHECK(seq.cols() == 3);
  }
  const auto again = gen_pretrain_corpus(5, 7, 3, 0.5, 13);
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    CHECK(oracles::bitwise_equal(corpus[i], again[i]));
  }
  CHECK_THROWS_AS(gen_pretrain_corpus(0, 7, 3, 0.5, 13), ConfigError);
}

TEST_CASE("task heads and per-item losses") {
  EncoderConfig enc;
  enc.d_model = 8;
  enc.d_input = 4;
  Rng rng(43);
  Tensor rep = oracles::random_tensor({5, enc.d_model}, rng);

  TaskSpec cls;
  const auto cls_shapes = head_param_shapes(cls, enc);
  REQUIRE(cls_shapes.size() == 2);
  CHECK(cls_shapes[0].name == "head.w");
  CHECK(cls_shapes[0].shape == Shape{8, 4});
  CHECK(cls_shapes[1].name == "head.b");
  CHECK(cls_shapes[1].shape == Shape{4});

  HeadParams cls_head = HeadParams::init(cls, enc, rng);
  {
    Graph g;
    Binder bind = Binder::all_frozen(g);
    const Tensor& logits = g.value(head_logits(g, bind, cls, cls_head, g.input(rep)));
    CHECK(logits.rows() == 1);
    CHECK(logits.cols() == 4);
    DataItem item;
    item.label = 2;
    Graph g2;
    Binder bind2 = Binder::all_frozen(g2);
    const double loss =
        g2.scalar_value(item_loss(g2, bind2, cls, cls_head, g2.input(rep), item));
    CHECK(std::isfinite(loss));
    CHECK(loss >= 0.0);
  }

  TaskSpec ctc;
  ctc.kind = TaskKind::FrameCtc;
  HeadParams ctc_head = HeadParams::init(ctc, enc, rng);
  {
    Graph g;
    Binder bind = Binder::all_frozen(g);
    const Tensor& logits = g.value(head_logits(g, bind, ctc, ctc_head, g.input(rep)));
    CHECK(logits.rows() == 5);
    CHECK(logits.cols() == ctc.vocab_size);
    DataItem item;
    item.seq = {2, 1};
    Graph g2;
    Binder bind2 = Binder::all_frozen(g2);
    const double loss =
        g2.scalar_value(item_loss(g2, bind2, ctc, ctc_head, g2.input(rep), item));
    CHECK(std::isfinite(loss));
    CHECK(loss >= 0.0);
  }

  TaskSpec diar;
  diar.kind = TaskKind::Diarization;
  HeadParams diar_head = HeadParams::init(diar, enc, rng);
  {
    DataItem item;
    item.activity = Tensor({5, 2});
    for (Index t = 0; t < 5; ++t) item.activity.at(t, 0) = 1.0;
    Graph g;
    Binder bind = Binder::all_frozen(g);
    const double loss =
        g.scalar_value(item_loss(g, bind, diar, diar_head, g.input(rep), item));
    CHECK(std::isfinite(loss));
    CHECK(loss >= 0.0);
  }
}

}  // TEST_SUITE
