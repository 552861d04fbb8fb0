#include <catch2/catch_amalgamated.hpp>

#include <iwfqi/core.hpp>

#include "oracles.hpp"

using namespace iwfqi;

namespace {

// Q-function backed by a table; the state's first component is the row index.
class TableQ : public QFunction {
public:
    explicit TableQ(Mat table) : table_(std::move(table)) {}
    int action_count() const override { return static_cast<int>(table_.cols()); }
    double value(const Vec& state, int action) const override {
        return table_(static_cast<Eigen::Index>(state[0]), action);
    }

private:
    Mat table_;
};

Vec vec1(double x) {
    Vec v(1);
    v[0] = x;
    return v;
}

Vec vec2(double x, double y) {
    Vec v(2);
    v[0] = x;
    v[1] = y;
    return v;
}

TransitionSample make_sample(int task, double s, int a, double r, double s2, bool term = false) {
    TransitionSample t;
    t.task_id = task;
    t.state = vec1(s);
    t.action = a;
    t.reward = r;
    t.next_state = vec1(s2);
    t.terminal = term;
    return t;
}

}  // namespace

TEST_CASE("task spec validates its fields", "[core]") {
    TaskSpec spec{2, 4, 0.99, 50, 20.0};
    REQUIRE_NOTHROW(spec.validate());
    CHECK(spec.q_max() == Catch::Approx(2000.0));

    TaskSpec bad = spec;
    bad.gamma = 1.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = spec;
    bad.action_count = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = spec;
    bad.r_max = 0.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = spec;
    bad.horizon = -1;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("greedy action breaks ties toward the lowest index", "[core]") {
    Mat t(1, 3);
    t << 1.0, 3.0, 3.0;
    TableQ q(t);
    CHECK(greedy_action(q, vec1(0)) == 1);
}

TEST_CASE("greedy action is invariant under constant shifts", "[core]") {
    Rng rng = make_rng(20240801);
    std::uniform_real_distribution<double> u(-5.0, 5.0);
    for (int rep = 0; rep < 200; ++rep) {
        int n_actions = 2 + static_cast<int>(rng() % 5);
        Mat t(4, n_actions);
        for (Eigen::Index i = 0; i < t.size(); ++i) t(i / n_actions, i % n_actions) = u(rng);
        double shift = u(rng);
        TableQ q(t);
        TableQ q_shifted(t.array() + shift);
        for (int s = 0; s < 4; ++s)
            CHECK(greedy_action(q, vec1(s)) == greedy_action(q_shifted, vec1(s)));
    }
}

TEST_CASE("epsilon greedy frequencies match the mixture", "[core]") {
    // Two actions, Q favors action 0; epsilon 0.3 gives P(a=0) = 0.7 + 0.15.
    Mat t(1, 2);
    t << 1.0, 0.0;
    TableQ q(t);
    Rng rng = make_rng(7);
    const int n = 100000;
    int count0 = 0;
    for (int i = 0; i < n; ++i)
        if (epsilon_greedy_action(q, vec1(0), 0.3, rng) == 0) ++count0;
    double freq = static_cast<double>(count0) / n;
    CHECK(freq == Catch::Approx(0.85).margin(0.01));

    SECTION("epsilon 0 is greedy, epsilon 1 is uniform") {
        for (int i = 0; i < 100; ++i) CHECK(epsilon_greedy_action(q, vec1(0), 0.0, rng) == 0);
        int c0 = 0;
        for (int i = 0; i < n; ++i)
            if (epsilon_greedy_action(q, vec1(0), 1.0, rng) == 0) ++c0;
        CHECK(static_cast<double>(c0) / n == Catch::Approx(0.5).margin(0.01));
    }

    SECTION("epsilon outside [0,1] is rejected") {
        CHECK_THROWS_AS(epsilon_greedy_action(q, vec1(0), 1.5, rng), std::invalid_argument);
        CHECK_THROWS_AS(epsilon_greedy_action(q, vec1(0), -0.1, rng), std::invalid_argument);
    }
}

TEST_CASE("dataset enforces dimension and ordering invariants", "[core]") {
    Dataset d;
    d.push_back(make_sample(0, 1.0, 0, -1.0, 2.0));
    d.push_back(make_sample(0, 2.0, 1, -1.0, 3.0));
    d.push_back(make_sample(1, 5.0, 0, -2.0, 6.0));
    CHECK(d.size() == 3);
    CHECK(d.task_range(0) == std::pair<std::size_t, std::size_t>{0, 2});
    CHECK(d.task_range(1) == std::pair<std::size_t, std::size_t>{2, 3});
    CHECK(d.task_range(9) == std::pair<std::size_t, std::size_t>{0, 0});

    TransitionSample wrong_dim;
    wrong_dim.task_id = 1;
    wrong_dim.state = vec2(0.0, 0.0);
    wrong_dim.next_state = vec2(0.0, 0.0);
    CHECK_THROWS_AS(d.push_back(wrong_dim), std::invalid_argument);

    CHECK_THROWS_AS(d.push_back(make_sample(0, 1.0, 0, 0.0, 1.0)), std::invalid_argument);

    TransitionSample ragged;
    ragged.task_id = 2;
    ragged.state = vec1(0.0);
    ragged.next_state = vec2(0.0, 0.0);
    CHECK_THROWS_AS(d.push_back(ragged), std::invalid_argument);
}

TEST_CASE("pooling retags task ids positionally and keeps fields bit-exact", "[core]") {
    Dataset target;  // empty
    Dataset src;
    for (int i = 0; i < 5; ++i) src.push_back(make_sample(3, i, i % 2, -0.5 * i, i + 1, i == 4));

    Dataset pooled = pool_datasets(target, {src});
    REQUIRE(pooled.size() == 5);
    for (std::size_t i = 0; i < pooled.size(); ++i) {
        CHECK(pooled[i].task_id == 1);
        CHECK(pooled[i].state[0] == src[i].state[0]);
        CHECK(pooled[i].reward == src[i].reward);
        CHECK(pooled[i].terminal == src[i].terminal);
    }

    SECTION("partition covers the array in order") {
        Dataset tgt;
        tgt.push_back(make_sample(0, 9.0, 0, 1.0, 9.5));
        Dataset src2;
        src2.push_back(make_sample(7, 4.0, 1, -1.0, 4.5));
        Dataset p = pool_datasets(tgt, {src, src2});
        CHECK(p.size() == 7);
        CHECK(p.task_range(0) == std::pair<std::size_t, std::size_t>{0, 1});
        CHECK(p.task_range(1) == std::pair<std::size_t, std::size_t>{1, 6});
        CHECK(p.task_range(2) == std::pair<std::size_t, std::size_t>{6, 7});
        CHECK(p.task_ids() == std::vector<int>{0, 1, 2});
    }
}

TEST_CASE("seed derivation is deterministic and stream-separated", "[core]") {
    CHECK(derive_seed(42, {1, 2, 3}) == derive_seed(42, {1, 2, 3}));
    CHECK(derive_seed(42, {1, 2, 3}) != derive_seed(42, {1, 2, 4}));
    CHECK(derive_seed(42, {1, 2, 3}) != derive_seed(43, {1, 2, 3}));
    CHECK(derive_seed(42, {stream::collect, 0}) != derive_seed(42, {stream::eval, 0}));

    Rng a = make_rng(5, {stream::fqi, 3});
    Rng b = make_rng(5, {stream::fqi, 3});
    for (int i = 0; i < 16; ++i) CHECK(a() == b());
}

TEST_CASE("policies draw from their stated distributions", "[core]") {
    Mat t(1, 3);
    t << 0.0, 2.0, 1.0;
    auto q = std::make_shared<TableQ>(t);

    Rng rng = make_rng(11);
    Policy g = Policy::greedy(q);
    for (int i = 0; i < 10; ++i) CHECK(g.act(vec1(0), rng) == 1);

    Policy u = Policy::uniform(3);
    std::vector<int> counts(3, 0);
    for (int i = 0; i < 30000; ++i) ++counts[u.act(vec1(0), rng)];
    for (int a = 0; a < 3; ++a)
        CHECK(static_cast<double>(counts[a]) / 30000 == Catch::Approx(1.0 / 3).margin(0.02));

    Policy f = Policy::fixed(3, [](const Vec& s) { return s[0] > 0 ? 2 : 0; });
    CHECK(f.act(vec1(1.0), rng) == 2);
    CHECK(f.act(vec1(-1.0), rng) == 0);

    CHECK_THROWS_AS(Policy::epsilon_greedy(q, 2.0), std::invalid_argument);
}
