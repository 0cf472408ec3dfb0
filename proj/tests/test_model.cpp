#include <doctest.h>

#include <cmath>
#include <map>
#include <set>

#include "tabret/model.hpp"

using namespace tabret;

namespace {

TableSchema tiny_schema() {
    TableSchema s;
    s.columns = {{"n0", ColumnKind::Numerical, 0},
                 {"c0", ColumnKind::Categorical, 3},
                 {"n1", ColumnKind::Numerical, 0},
                 {"y", ColumnKind::Categorical, 2}};
    s.target = "y";
    return s;
}

TabRetConfig tiny_config() {
    TabRetConfig cfg;
    cfg.n_blocks = 1;
    cfg.d_token = 8;
    cfg.n_heads = 8;
    cfg.attn_dropout = 0.0;
    cfg.ffn_dropout = 0.0;
    cfg.residual_dropout = 0.0;
    return cfg;
}

Batch tiny_batch(int n) {
    Batch b;
    b.row_count = n;
    for (int r = 0; r < n; ++r) {
        b.numerical["n0"].push_back(0.1 * r);
        b.numerical["n1"].push_back(1.0 - 0.2 * r);
        b.categorical["c0"].push_back(r % 3);
        b.categorical["y"].push_back(r % 2);
    }
    return b;
}

std::map<std::string, Matrix> snapshot(const ParamStore& store) {
    std::map<std::string, Matrix> out;
    for (const auto& [name, p] : store) out.emplace(name, p.value);
    return out;
}

size_t scalar_count(const TabRetModel& m, const std::vector<std::string>& names) {
    size_t n = 0;
    for (const auto& name : names) n += m.params().get(name).value.size();
    return n;
}

}  // namespace

TEST_CASE("token size table and config validation") {
    CHECK(TabRetConfig::token_size_for(1) == 96);
    CHECK(TabRetConfig::token_size_for(2) == 128);
    CHECK(TabRetConfig::token_size_for(3) == 192);
    CHECK(TabRetConfig::token_size_for(4) == 256);
    CHECK(TabRetConfig::token_size_for(5) == 320);
    CHECK(TabRetConfig::token_size_for(6) == 384);
    CHECK_THROWS_AS(TabRetConfig::token_size_for(0), ValidationError);
    CHECK_THROWS_AS(TabRetConfig::token_size_for(7), ValidationError);

    TabRetConfig cfg;
    CHECK(cfg.token_dim() == 384);
    CHECK(cfg.pe_dim() == 384);
    cfg.validate();

    cfg.d_token = 10;  // not divisible by 8 heads
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
    cfg = TabRetConfig{};
    cfg.attn_dropout = 1.0;
    CHECK_THROWS_AS(cfg.validate(), ValidationError);
}

TEST_CASE("phase names round-trip") {
    for (Phase p : {Phase::Pretrain, Phase::Retokenize, Phase::Finetune})
        CHECK(phase_from_name(phase_name(p)) == p);
    CHECK_THROWS_AS(phase_from_name("warmup"), ValidationError);
}

TEST_CASE("mask plan counts and override") {
    RngState rng(1);
    MaskPlan plan = sample_mask_plan(21, 0.7, 32, rng);
    CHECK(plan.k == 21);
    for (int r = 0; r < 32; ++r) {
        CHECK(plan.masked[r].size() == 14);  // floor(0.7*21)
        CHECK(plan.kept[r].size() == 7);
        std::set<int> all(plan.masked[r].begin(), plan.masked[r].end());
        all.insert(plan.kept[r].begin(), plan.kept[r].end());
        CHECK(all.size() == 21);
        CHECK(std::is_sorted(plan.masked[r].begin(), plan.masked[r].end()));
        CHECK(std::is_sorted(plan.kept[r].begin(), plan.kept[r].end()));
        for (int j : plan.masked[r]) CHECK(plan.is_masked(r, j));
        for (int j : plan.kept[r]) CHECK(!plan.is_masked(r, j));
    }

    // m' = 0 is overridden to 1
    RngState rng2(2);
    CHECK(sample_mask_plan(1, 0.5, 4, rng2).masked_per_row() == 1);
    RngState rng3(3);
    CHECK(sample_mask_plan(5, 0.0, 4, rng3).masked_per_row() == 1);

    RngState a(9), b(9);
    MaskPlan p1 = sample_mask_plan(10, 0.7, 16, a);
    MaskPlan p2 = sample_mask_plan(10, 0.7, 16, b);
    CHECK(p1.masked == p2.masked);

    MaskPlan none = empty_mask_plan(4, 3);
    CHECK(none.masked_per_row() == 0);
    CHECK(none.kept[0] == std::vector<int>{0, 1, 2, 3});
}

TEST_CASE("model registers one tokenizer, position, and projector per column") {
    RngState rng(4);
    TabRetModel model(tiny_schema(), tiny_config(), rng);

    for (const std::string& c : {"n0", "c0", "n1"}) {
        CHECK(model.params().contains("ft." + c + ".W"));
        CHECK(model.params().contains("ft." + c + ".b"));
        CHECK(model.params().contains("post.pos." + c));
        CHECK(model.params().contains("proj." + c + ".W"));
        CHECK(model.params().contains("proj." + c + ".b"));
    }
    // target: no tokenizer, but position + projector
    CHECK(!model.params().contains("ft.y.W"));
    CHECK(model.params().contains("post.pos.y"));
    CHECK(model.params().get("proj.y.W").value.cols == 2);
    CHECK(model.params().get("post.mask").value.rows == 1);
    CHECK(model.params().get("post.mask").value.cols == 8);
    CHECK(model.params().get("ft.n0.W").value.rows == 1);
    CHECK(model.params().get("ft.c0.W").value.rows == 3);

    CHECK(model.slot_columns() ==
          std::vector<std::string>{"n0", "c0", "n1", "y"});
}

TEST_CASE("extend_for_columns adds exactly the per-column parameters") {
    RngState rng(5);
    TabRetModel model(tiny_schema(), tiny_config(), rng);
    auto before = snapshot(model.params());

    model.extend_for_columns({}, rng);
    CHECK(model.params().size() == before.size());

    ColumnSpec num{"extra_num", ColumnKind::Numerical, 0};
    ColumnSpec cat{"extra_cat", ColumnKind::Categorical, 4};
    model.extend_for_columns({num, cat}, rng);

    // pre-existing values bit-unchanged
    for (const auto& [name, value] : before)
        CHECK(model.params().get(name).value == value);

    // one numerical column at d=8: (1x8 + 1x8) + 1x8 + (8x1 + 1x1) = 33 scalars
    CHECK(scalar_count(model, TabRetModel::column_param_names(num, true)) == 33);
    // categorical C=4: (4x8 + 1x8) + 1x8 + (8x4 + 1x4) = 84 scalars
    CHECK(scalar_count(model, TabRetModel::column_param_names(cat, true)) == 84);

    CHECK_THROWS_AS(model.extend_for_columns({num}, rng), ValidationError);
}

TEST_CASE("extend_for_target adds position and projector only") {
    TableSchema s = tiny_schema();
    s.columns.pop_back();  // drop y
    s.target.reset();
    RngState rng(6);
    TabRetModel model(s, tiny_config(), rng);
    CHECK(!model.params().contains("post.pos.y"));

    ColumnSpec target{"y", ColumnKind::Categorical, 2};
    model.extend_for_target(target, rng);
    CHECK(model.params().contains("post.pos.y"));
    CHECK(model.params().contains("proj.y.W"));
    CHECK(!model.params().contains("ft.y.W"));
    CHECK_THROWS_AS(model.extend_for_target(target, rng), ValidationError);

    TableSchema bound = tiny_schema();
    model.bind_schema(bound);
    CHECK(model.schema().target == std::string("y"));

    TableSchema unknown = bound;
    unknown.columns.push_back({"mystery", ColumnKind::Numerical, 0});
    CHECK_THROWS_AS(model.bind_schema(unknown), ValidationError);
}

TEST_CASE("set_trainable freezes per phase") {
    RngState rng(7);
    TabRetModel model(tiny_schema(), tiny_config(), rng);

    model.set_trainable(Phase::Pretrain);
    for (const auto& [name, p] : model.params()) CHECK(p.trainable);

    ColumnSpec extra{"extra", ColumnKind::Numerical, 0};
    model.extend_for_columns({extra}, rng);
    TableSchema wider = tiny_schema();
    wider.columns.insert(wider.columns.end() - 1, extra);
    model.bind_schema(wider);

    model.set_trainable(Phase::Retokenize, {"extra"});
    size_t trainable_scalars = 0;
    for (const auto& [name, p] : model.params())
        if (p.trainable) trainable_scalars += p.value.size();
    CHECK(trainable_scalars == 33);
    CHECK(model.params().get("ft.extra.W").trainable);
    CHECK(!model.params().get("ft.n0.W").trainable);
    CHECK(!model.params().get("post.mask").trainable);
    CHECK_THROWS_AS(model.set_trainable(Phase::Retokenize, {"ghost"}), ValidationError);

    model.set_trainable(Phase::Finetune);
    trainable_scalars = 0;
    size_t trainable_params = 0;
    for (const auto& [name, p] : model.params()) {
        if (!p.trainable) continue;
        trainable_scalars += p.value.size();
        ++trainable_params;
    }
    // d_pe + d_pe*C_t + C_t with d_pe=8, C_t=2
    CHECK(trainable_scalars == 8 + 8 * 2 + 2);
    CHECK(trainable_params == 3);
    CHECK(model.params().get("post.pos.y").trainable);
    CHECK(model.params().get("proj.y.W").trainable);
}

TEST_CASE("forward_reconstruct prediction shapes and determinism") {
    RngState rng(8);
    TabRetModel model(tiny_schema(), tiny_config(), rng);
    Batch batch = tiny_batch(6);

    Tape t;
    RngState fr(11);
    ReconForward fwd = model.forward_reconstruct(t, batch, 0.7, fr, false);
    CHECK(fwd.plan.masked_per_row() == 2);  // floor(0.7*3)
    // with 6 rows and 2 of 3 masked per row, every column is masked somewhere
    REQUIRE(fwd.predictions.count("n0") == 1);
    REQUIRE(fwd.predictions.count("c0") == 1);
    CHECK(t.value(fwd.predictions.at("n0")).rows == 6);
    CHECK(t.value(fwd.predictions.at("n0")).cols == 1);
    CHECK(t.value(fwd.predictions.at("c0")).cols == 3);

    Tape t2;
    RngState fr2(11);
    ReconForward fwd2 = model.forward_reconstruct(t2, batch, 0.7, fr2, false);
    CHECK(fwd2.plan.masked == fwd.plan.masked);
    for (const auto& [name, var] : fwd.predictions)
        CHECK(t2.value(fwd2.predictions.at(name)) == t.value(var));

    Tape t3;
    RngState fr3(12);
    ReconForward fwd3 = model.forward_reconstruct(t3, batch, 0.7, fr3, false);
    CHECK(fwd3.plan.masked != fwd.plan.masked);
}

TEST_CASE("forward_target shape and rebuild_views stability") {
    RngState rng(9);
    TabRetModel model(tiny_schema(), tiny_config(), rng);
    Batch batch = tiny_batch(4);

    Matrix logits = model.predict_target(batch);
    CHECK(logits.rows == 4);
    CHECK(logits.cols == 2);

    model.rebuild_views();
    CHECK(model.predict_target(batch) == logits);

    TabRetModel moved = std::move(model);
    CHECK(moved.predict_target(batch) == logits);
}

TEST_CASE("zeroed attention values isolate slots from other columns") {
    RngState rng(10);
    TabRetModel model(tiny_schema(), tiny_config(), rng);
    for (auto& [name, p] : model.params()) {
        if (name.find("attn.v.") != std::string::npos)
            std::fill(p.value.data.begin(), p.value.data.end(), 0.0);
    }
    // the target slot reads [MASK]+[POS]_y only, so with no attention mixing
    // its logits cannot depend on the feature values
    Batch a = tiny_batch(3);
    Batch b = tiny_batch(3);
    for (double& v : b.numerical["n0"]) v += 5.0;
    b.categorical["c0"] = {2, 2, 2};
    CHECK(model.predict_target(a) == model.predict_target(b));

    // with real attention weights the dependence is restored
    RngState rng2(10);
    TabRetModel mixed(tiny_schema(), tiny_config(), rng2);
    CHECK(!(mixed.predict_target(a) == mixed.predict_target(b)));
}

TEST_CASE("category index outside cardinality is rejected in forward") {
    RngState rng(13);
    TabRetModel model(tiny_schema(), tiny_config(), rng);
    Batch bad = tiny_batch(2);
    bad.categorical["c0"] = {0, 3};
    CHECK_THROWS_AS(model.predict_target(bad), DataError);
}
