#include <doctest.h>

#include <cmath>
#include <fstream>
#include <set>

#include "instyle/error.hpp"
#include "instyle/parallel.hpp"
#include "instyle/styler.hpp"
#include "instyle/trainer.hpp"
#include "support.hpp"

using namespace instyle;
using testing::from_rows;
using testing::random_unit_set;

namespace {

AdapterModel random_model(std::size_t proj, std::size_t dim, double tau, std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> nd;
  AdapterModel m;
  m.proj_dim = proj;
  m.text_dim = m.video_dim = dim;
  m.tau = tau;
  m.text_head.resize(proj * dim);
  m.video_head.resize(proj * dim);
  for (auto& w : m.text_head) w = nd(gen);
  for (auto& w : m.video_head) w = nd(gen);
  return m;
}

BatchView view_of(const EmbeddingSet& t, const EmbeddingSet& v) {
  BatchView b;
  for (std::size_t i = 0; i < t.size(); ++i) {
    b.texts.push_back(t.row(i));
    b.videos.push_back(v.row(i));
  }
  return b;
}

// A two-style toy corpus: clips plus a styled caption set per style.
struct Toy {
  EmbeddingSet clips;
  std::vector<EmbeddingSet> styled;
  std::vector<GeneratedPairSet> sets;

  std::vector<StyleData> data() const {
    std::vector<StyleData> d;
    for (std::size_t s = 0; s < sets.size(); ++s) d.push_back({&sets[s], &styled[s], &clips});
    return d;
  }
};

Toy make_toy(std::size_t n, std::size_t dim, std::uint64_t seed) {
  Toy toy;
  toy.clips = random_unit_set(n, dim, seed);
  std::mt19937_64 gen(seed + 1);
  std::normal_distribution<double> nd;
  for (std::size_t s = 0; s < 2; ++s) {
    StyleTransform st = StyleTransform::identity(dim, "style" + std::to_string(s));
    for (auto& w : st.weight) w += 0.3 * nd(gen);
    st.noise_sigma = 0.1;
    toy.styled.push_back(generate_styled(toy.clips, st, seed + 10 + s));
    toy.sets.push_back(filter_pairs(toy.styled.back(), toy.clips, -1.0, st.style_tag));
  }
  return toy;
}

double mean_loss(const std::vector<LossLogEntry>& log, std::size_t from, std::size_t to) {
  double s = 0;
  for (std::size_t i = from; i < to; ++i) s += log[i].loss;
  return s / static_cast<double>(to - from);
}

}  // namespace

TEST_CASE("single pair has zero loss") {
  const auto t = random_unit_set(1, 5, 1), v = random_unit_set(1, 5, 2);
  const auto r = info_nce_loss(random_model(3, 5, 0.05, 3), view_of(t, v));
  CHECK(r.loss == 0.0);
}

TEST_CASE("equal similarities give ln B") {
  const auto t = from_rows({{1, 0, 0}, {1, 0, 0}, {1, 0, 0}, {1, 0, 0}});
  const auto v = from_rows({{0, 1, 0}, {0, 1, 0}, {0, 1, 0}, {0, 1, 0}});
  const auto r = info_nce_loss(AdapterModel::identity(3), view_of(t, v));
  CHECK(std::abs(r.loss - std::log(4.0)) < 1e-9);
}

TEST_CASE("two orthogonal pairs at unit temperature") {
  const auto e = from_rows({{1, 0}, {0, 1}});
  const auto r = info_nce_loss(AdapterModel::identity(2, 1.0), view_of(e, e));
  CHECK(std::abs(r.loss - std::log(1.0 + std::exp(-1.0))) < 1e-9);
  CHECK(r.loss == doctest::Approx(0.313262).epsilon(1e-6));
}

TEST_CASE("loss is positive when an off-diagonal similarity ties the diagonal") {
  const auto t = from_rows({{1, 0}, {0, 1}, {1, 0}});
  const auto v = from_rows({{1, 0}, {0, 1}, {0.6f, 0.8f}});
  const auto r = info_nce_loss(AdapterModel::identity(2), view_of(t, v));
  CHECK(r.loss > 0.0);
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto a = random_unit_set(5, 4, s), b = random_unit_set(5, 4, s + 100);
    CHECK(info_nce_loss(random_model(3, 4, 0.1, s), view_of(a, b)).loss >= 0.0);
  }
}

TEST_CASE("gradient matches central differences") {
  const auto t = random_unit_set(4, 6, 11), v = random_unit_set(4, 6, 12);
  const auto model = random_model(4, 6, 0.5, 13);
  const auto a = grad_check(model, view_of(t, v), 1e-4);
  const auto b = grad_check(model, view_of(t, v), 1e-5);
  CHECK(a.weights_checked == 48);
  CHECK(a.max_rel_error < 1e-5);
  CHECK((b.max_rel_error < 1e-5 || b.max_rel_error <= a.max_rel_error));

  NegativeQueue queue("q", 8, 4);
  const auto qt = random_unit_set(6, 6, 14), qv = random_unit_set(6, 6, 15);
  for (std::size_t i = 0; i < 6; ++i)
    queue.push(project(model.text_head, 4, qt.row(i)), project(model.video_head, 4, qv.row(i)));
  CHECK(grad_check(model, view_of(t, v), 1e-4, &queue).max_rel_error < 1e-5);
}

TEST_CASE("weights on an input coordinate that is always zero get no gradient") {
  // the last coordinate is zero for every text, so W_t[:, 3] cannot matter
  const auto t = from_rows({{0.6f, 0.8f, 0.f, 0.f}, {0.f, 0.6f, 0.8f, 0.f}, {0.8f, 0.f, 0.6f, 0.f}});
  const auto v = random_unit_set(3, 4, 21);
  auto model = random_model(3, 4, 0.2, 22);
  const auto r = info_nce_loss(model, view_of(t, v));
  for (std::size_t row = 0; row < 3; ++row) {
    const std::size_t k = row * 4 + 3;
    CHECK(r.grad_text_head[k] == 0.0);
    const double eps = 1e-5, w = model.text_head[k];
    model.text_head[k] = w + eps;
    const double up = info_nce_loss(model, view_of(t, v)).loss;
    model.text_head[k] = w - eps;
    const double down = info_nce_loss(model, view_of(t, v)).loss;
    model.text_head[k] = w;
    CHECK(std::abs((up - down) / (2 * eps)) < 1e-8);
  }
}

TEST_CASE("loss rejects mismatched batches") {
  BatchView b;
  const auto t = random_unit_set(2, 3, 1);
  b.texts = {t.row(0), t.row(1)};
  b.videos = {t.row(0)};
  CHECK_THROWS_AS(info_nce_loss(AdapterModel::identity(3), b), Error);
}

TEST_CASE("queue keeps the newest entries in order") {
  NegativeQueue q("a", 3, 1);
  for (double x : {1.0, 2.0, 3.0, 4.0, 5.0}) {
    const std::vector<double> e{x};
    q.push(e, e);
  }
  CHECK(q.size() == 3);
  CHECK(q.text(0)[0] == 3.0);
  CHECK(q.video(2)[0] == 5.0);
}

TEST_CASE("in_style plans with two sets of four") {
  const std::vector<GeneratedPairSet> sets{testing::dummy_pairs(4, "a"), testing::dummy_pairs(4, "b")};
  const auto plan = plan_epoch(sets, 2, ScheduleMode::InStyle, 3);
  REQUIRE(plan.batches.size() == 4);
  std::set<PairRef> seen;
  for (const auto& b : plan.batches) {
    CHECK(b.items.size() == 2);
    CHECK(b.items[0].set == b.items[1].set);
    CHECK(b.style_tag == sets[b.items[0].set].style_tag);
    for (const auto& r : b.items) CHECK(seen.insert(r).second);
  }
  // round-robin alternates equal-sized sets
  CHECK(plan.batches[0].style_tag == "a");
  CHECK(plan.batches[1].style_tag == "b");
}

TEST_CASE("a single set plans the same either way") {
  const std::vector<GeneratedPairSet> sets{testing::dummy_pairs(11, "only")};
  const auto a = plan_epoch(sets, 3, ScheduleMode::InStyle, 8);
  const auto b = plan_epoch(sets, 3, ScheduleMode::Mixed, 8);
  CHECK(a.batches == b.batches);
  CHECK(a.batches.size() == 3);
}

TEST_CASE("plans match a reference scheduler") {
  const std::vector<GeneratedPairSet> sets{testing::dummy_pairs(10, "a"), testing::dummy_pairs(6, "b")};
  for (std::uint64_t seed : {0ull, 1ull, 42ull, 1234567ull}) {
    for (auto mode : {ScheduleMode::InStyle, ScheduleMode::Mixed}) {
      CHECK(plan_epoch(sets, 2, mode, seed) == testing::reference_plan(sets, 2, mode, seed));
    }
  }
  const std::vector<GeneratedPairSet> three{testing::dummy_pairs(37, "a"), testing::dummy_pairs(5, "b"),
                                           testing::dummy_pairs(20, "c")};
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto plan = plan_epoch(three, 4, ScheduleMode::InStyle, seed);
    CHECK(plan == testing::reference_plan(three, 4, ScheduleMode::InStyle, seed));
    CHECK(plan.batches.size() == 9 + 1 + 5);
    for (const auto& b : plan.batches)
      for (const auto& r : b.items) CHECK(r.set == b.items[0].set);
  }
}

TEST_CASE("plan errors") {
  auto code = [](auto&& fn) {
    try {
      fn();
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::IoError;
  };
  const auto empty = testing::dummy_pairs(0, "e");
  CHECK(code([&] { plan_epoch({testing::dummy_pairs(4, "a"), empty}, 2, ScheduleMode::InStyle, 1); }) ==
        ErrorCode::EmptyStyleSet);
  CHECK(code([&] { plan_epoch({}, 2, ScheduleMode::Mixed, 1); }) == ErrorCode::EmptyStyleSet);
  CHECK(code([&] { plan_epoch({testing::dummy_pairs(4, "a"), testing::dummy_pairs(2, "b")}, 3,
                              ScheduleMode::InStyle, 1); }) == ErrorCode::BatchTooLarge);
  CHECK(code([&] { plan_epoch({testing::dummy_pairs(2, "a")}, 3, ScheduleMode::Mixed, 1); }) ==
        ErrorCode::BatchTooLarge);
}

TEST_CASE("zero learning rate leaves the weights untouched") {
  const auto toy = make_toy(64, 6, 1);
  const auto init = random_model(6, 6, 0.05, 2);
  const auto data = toy.data();
  const auto plan = plan_epoch(toy.sets, 8, ScheduleMode::InStyle, 3);
  const auto r = train(init, plan, data, {0.0, 0.9, 32});
  CHECK(r.model.text_head == init.text_head);
  CHECK(r.model.video_head == init.video_head);
  CHECK(r.log.size() == plan.batches.size());
}

TEST_CASE("fifty steps reduce the loss at both temperatures") {
  const auto toy = make_toy(200, 8, 5);
  const auto data = toy.data();
  std::vector<double> finals;
  for (double tau : {0.05, 1.0}) {
    // no queue: a filling queue raises the loss floor and hides the trend
    Trainer trainer(AdapterModel::identity(8, tau), {tau < 0.5 ? 0.5 : 5.0, 0.9, 0});
    std::vector<LossLogEntry> log;
    for (std::uint64_t e = 0; log.size() < 50; ++e) {
      const auto steps = trainer.run(plan_epoch(toy.sets, 16, ScheduleMode::InStyle, e), data);
      log.insert(log.end(), steps.begin(), steps.end());
    }
    log.resize(50);
    const double first = mean_loss(log, 0, 10), last = mean_loss(log, 40, 50);
    MESSAGE("tau=", tau, " first=", first, " last=", last);
    CHECK(last < first);
    finals.push_back(last);
  }
  // seeded regression values
  CHECK(finals[0] == doctest::Approx(0.128280842992).epsilon(1e-9));
  CHECK(finals[1] == doctest::Approx(2.016293171006).epsilon(1e-9));
}

TEST_CASE("queues stay with their style") {
  const auto toy = make_toy(64, 6, 7);
  const auto data = toy.data();
  const auto full = plan_epoch(toy.sets, 8, ScheduleMode::InStyle, 1);
  // first two batches of style a, then the first batch of style b
  StyleBatchPlan plan = full;
  plan.batches.clear();
  for (const auto& b : full.batches)
    if (b.style_tag == "style0" && plan.batches.size() < 2) plan.batches.push_back(b);
  StyleBatchPlan head = plan;
  for (const auto& b : full.batches)
    if (b.style_tag == "style1") {
      plan.batches.push_back(b);
      break;
    }

  Trainer trainer(AdapterModel::identity(6), {0.5, 0.9, 100});
  const auto log = trainer.run(plan, data);
  CHECK(trainer.queues().at("style0").size() == 16);
  CHECK(trainer.queues().at("style1").size() == 8);

  // the style-b step must have seen an empty queue
  Trainer before(AdapterModel::identity(6), {0.5, 0.9, 100});
  before.run(head, data);
  BatchView view;
  for (const auto& r : plan.batches[2].items) {
    const auto& pair = toy.sets[r.set].pairs[r.pair];
    view.texts.push_back(toy.styled[r.set].row(pair.row));
    view.videos.push_back(toy.clips.row(pair.row));
  }
  CHECK(log[2].loss == info_nce_loss(before.model(), view).loss);
}

TEST_CASE("training is bit-identical across runs and worker counts") {
  const auto toy = make_toy(128, 8, 9);
  const auto data = toy.data();
  const auto plan = plan_epoch(toy.sets, 16, ScheduleMode::Mixed, 4);
  set_thread_count(1);
  const auto a = train(AdapterModel::identity(8), plan, data, {});
  set_thread_count(6);
  const auto b = train(AdapterModel::identity(8), plan, data, {});
  set_thread_count(0);
  CHECK(a.log == b.log);
  CHECK(a.model == b.model);
}

TEST_CASE("a vanishing projection aborts with the step") {
  const auto toy = make_toy(32, 4, 11);
  const auto data = toy.data();
  auto model = AdapterModel::identity(4);
  std::fill(model.text_head.begin(), model.text_head.end(), 0.0);
  try {
    train(model, plan_epoch(toy.sets, 4, ScheduleMode::InStyle, 1), data, {});
    FAIL("expected NonFiniteLoss");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::NonFiniteLoss);
    CHECK(std::string(e.what()).find("step 0") != std::string::npos);
  }
}

TEST_CASE("adapter file and loss log") {
  const auto dir = testing::scratch_dir("adapter");
  auto m = random_model(3, 5, 0.07, 31);
  for (auto& w : m.text_head) w = static_cast<float>(w);
  for (auto& w : m.video_head) w = static_cast<float>(w);
  m.step_count = 17;
  save_adapter(dir / "a.adpt", m);
  CHECK(load_adapter(dir / "a.adpt") == m);

  const std::vector<LossLogEntry> log{{0, "a", 1.5}, {1, "b", 0.25}};
  save_loss_log(dir / "l.csv", log);
  std::ifstream in(dir / "l.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "step,style_tag,loss");
  std::getline(in, line);
  CHECK(line == "0,a,1.5");
}
