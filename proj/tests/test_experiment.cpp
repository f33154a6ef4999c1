// Copyright 2026 The qnc Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "qnc/error.hpp"
#include "qnc/experiment.hpp"

namespace qnc::experiment {
namespace {

namespace fs = std::filesystem;

dataset::PresetOptions small(dataset::Task task, size_t n, uint64_t seed, size_t steps = 3) {
    dataset::PresetOptions o;
    o.task = task;
    o.t_total = 0.1;
    o.steps = steps;
    o.nodes = 6;
    o.n_samples = n;
    o.master_seed = seed;
    return o;
}

dataset::Dataset small_dataset(size_t n, uint64_t seed, size_t steps = 3) {
    return dataset::generate(dataset::make_task_spec(small(dataset::Task::iid, n, seed, steps)), 1);
}

class TempDir {
   public:
    TempDir() {
        path_ = fs::temp_directory_path() /
                ("qnc-exp-" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~TempDir() { fs::remove_all(path_); }
    const fs::path &path() const { return path_; }

   private:
    fs::path path_;
};

TrainSettings quick(size_t epochs = 2) {
    TrainSettings s;
    s.epochs = epochs;
    s.seed = 5;
    s.threads = 1;
    return s;
}

TEST(Roster, TwelveModelsInTableOrder) {
    ASSERT_EQ(roster().size(), 12u);
    EXPECT_EQ(roster().front().display, "m-SVM-single");
    EXPECT_EQ(roster().back().display, "m-biLSTM-max");
    EXPECT_EQ(find_model("m-biGRU-max").name, "m-bigru-max");
    EXPECT_EQ(find_model("M-SVM-SINGLE").features, dataset::FeatureMode::final_step);
    EXPECT_EQ(find_model("m-mlp").features, dataset::FeatureMode::full);
    EXPECT_TRUE(find_model("m-bilstm-att").bidirectional);
    EXPECT_FALSE(find_model("m-gru").bidirectional);
    EXPECT_THROW(find_model("nonsense"), ValidationError);
}

TEST(Presets, SixPaperDatasets) {
    std::vector<std::string> names;
    for (const auto &p : presets()) {
        names.push_back(p.name);
        EXPECT_EQ(p.options.steps, 15u);
        EXPECT_EQ(p.options.nodes, 40u);
        EXPECT_EQ(p.options.n_samples, 20000u);
    }
    EXPECT_EQ(names, (std::vector<std::string>{"iid-0.1", "iid-1", "nm-0.1", "nm-1", "vs-0.1", "vs-1"}));
    EXPECT_EQ(find_preset("NM-1").options.task, dataset::Task::nm);
    EXPECT_THROW(find_preset("iid-2"), ValidationError);
}

TEST(Naming, TaskKeysAndIdentity) {
    auto o = find_preset("nm-1").options;
    EXPECT_EQ(task_key(dataset::make_task_spec(o)), "nm-1");
    o.steps = 30;
    EXPECT_EQ(task_key(dataset::make_task_spec(o)), "nm-1-M30");

    const auto a = dataset::make_task_spec(small(dataset::Task::iid, 20, 1));
    auto b = a;
    b.n_samples = 400;
    EXPECT_EQ(dataset_identity(a), dataset_identity(b));
    b.master_seed = 2;
    EXPECT_NE(dataset_identity(a), dataset_identity(b));
    EXPECT_NE(cache_file_name(a), cache_file_name(dataset::make_task_spec(small(dataset::Task::iid, 22, 1))));
}

TEST(InputScaling, StandardizesColumnsAndKeepsConstantOnes) {
    Eigen::MatrixXd x(4, 3);
    x << 0, 5, 1, 2, 5, 3, 4, 5, 5, 6, 5, 7;
    const auto s = InputScaling::fit(x);
    const Eigen::MatrixXd z = s.apply(x);
    EXPECT_NEAR(z.col(0).mean(), 0.0, 1e-12);
    EXPECT_NEAR(z.col(0).squaredNorm() / 4.0, 1.0, 1e-12);
    EXPECT_DOUBLE_EQ(s.scale(1), 1.0);
    EXPECT_TRUE(z.col(1).isZero());
    EXPECT_TRUE(InputScaling{}.apply(x) == x);
    EXPECT_THROW(s.apply(Eigen::MatrixXd(2, 2)), ValidationError);
}

TEST(Train, SvmRoundTripsThroughJson) {
    TempDir dir;
    const auto ds = small_dataset(60, 3);
    const auto out = train_model(ds, "m-svm-single", quick());
    EXPECT_GE(out.test_accuracy, 0.0);
    EXPECT_LE(out.test_accuracy, 100.0);
    EXPECT_EQ(out.task, "iid-0.1-M3-d6");
    const fs::path path = dir.path() / "svm.json";
    out.model.save(path);
    const auto back = Classifier::load(path);
    EXPECT_TRUE(back.is_svm());
    EXPECT_EQ(back.info().name, "m-svm-single");
    const auto parts = dataset::split(ds);
    const auto fsel = dataset::feature_view(parts[2], dataset::FeatureMode::final_step);
    EXPECT_EQ(back.predict(fsel.x), out.model.predict(fsel.x));
    EXPECT_DOUBLE_EQ(evaluate(back, ds, dataset::SplitPart::test).accuracy, out.test_accuracy);

    std::ifstream in(path);
    const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    for (const char *key : {"\"kernel\"", "\"c\"", "\"bias\"", "\"duals\"", "\"support_vectors\"", "\"feature_mode\"",
                            "\"training_meta\""}) {
        EXPECT_NE(text.find(key), std::string::npos) << key;
    }
}

TEST(Train, NetworkRoundTripsAndReports) {
    TempDir dir;
    const auto ds = small_dataset(40, 3);
    const auto out = train_model(ds, "m-bigru-max", quick(3));
    EXPECT_NE(out.report_json.find("\"test_accuracy\""), std::string::npos);
    EXPECT_NE(out.report_json.find("\"generator_version\""), std::string::npos);
    EXPECT_NE(out.report_json.find("\"trainer_version\""), std::string::npos);
    EXPECT_EQ(std::count(out.curve_csv.begin(), out.curve_csv.end(), '\n'), 4);
    const fs::path path = dir.path() / "net.qncm";
    out.model.save(path);
    const auto back = Classifier::load(path);
    EXPECT_FALSE(back.is_svm());
    EXPECT_EQ(back.network().config().rnn.hidden_dim, 64u);
    EXPECT_TRUE(back.network().parameters() == out.model.network().parameters());
    ASSERT_FALSE(back.input_scaling().empty());
    EXPECT_TRUE(back.input_scaling().mean == out.model.input_scaling().mean);
    EXPECT_TRUE(back.input_scaling().scale == out.model.input_scaling().scale);
    EXPECT_DOUBLE_EQ(evaluate(back, ds, dataset::SplitPart::test).accuracy, out.test_accuracy);
}

TEST(Train, SameSeedSameReport) {
    const auto ds = small_dataset(40, 3);
    auto a = train_model(ds, "m-mlp", quick(3));
    auto b = train_model(ds, "m-mlp", quick(3));
    EXPECT_EQ(a.curve_csv, b.curve_csv);
    EXPECT_TRUE(a.model.network().parameters() == b.model.network().parameters());
}

TEST(Train, SubsampleIsBalancedAndRecorded) {
    const auto ds = small_dataset(60, 3);
    auto s = quick();
    s.subsample = 10;
    const auto out = train_model(ds, "m-svm-single", s);
    EXPECT_NE(out.report_json.find("\"train_rows\": 10"), std::string::npos);
    s.subsample = 7;
    EXPECT_THROW(train_model(ds, "m-svm-single", s), ValidationError);
}

TEST(Train, BudgetRunsTheSearch) {
    const auto ds = small_dataset(40, 3);
    auto s = quick(2);
    s.budget = 3;
    const auto out = train_model(ds, "m-mlp-single", s);
    EXPECT_NE(out.report_json.find("\"search\""), std::string::npos);
    EXPECT_THROW(train_model(ds, "m-nothing", s), ValidationError);
}

TEST(Evaluate, ConstantPredictorScoresHalf) {
    svm::SvmModel m;
    m.bias = 1.0;
    m.support_vectors = Eigen::MatrixXd(0, 6);
    const auto ds = small_dataset(40, 3);
    Classifier c(m, "m-svm-single",
                 R"({"dataset":{"identity":"none","n_samples":0},"split":{"train":0.6,"validation":0.2,"test":0.2}})");
    for (auto part : {dataset::SplitPart::validation, dataset::SplitPart::test}) {
        EXPECT_DOUBLE_EQ(evaluate(c, ds, part).accuracy, 50.0);
    }
}

TEST(Evaluate, LeakageIsAHardError) {
    const auto ds = small_dataset(40, 3);
    const auto out = train_model(ds, "m-svm-single", quick());
    // Same stream, more samples: its test split reuses training samples.
    const auto bigger = small_dataset(200, 3);
    EXPECT_THROW(evaluate(out.model, bigger, dataset::SplitPart::test), DataError);
    // Independent seed: no shared samples.
    const auto other = small_dataset(200, 4);
    const auto r = evaluate(out.model, other, dataset::SplitPart::test);
    EXPECT_TRUE(r.warnings.empty());
    EXPECT_EQ(r.n, 40u);
}

TEST(Evaluate, TrainingSplitWarns) {
    const auto ds = small_dataset(60, 3);
    const auto out = train_model(ds, "m-svm-single", quick());
    const auto r = evaluate(out.model, ds, dataset::SplitPart::train);
    ASSERT_EQ(r.warnings.size(), 1u);
    EXPECT_NE(r.warnings[0].find("overfit"), std::string::npos);
}

TEST(Evaluate, LayoutMismatchIsADataError) {
    const auto out = train_model(small_dataset(40, 3), "m-gru", quick(1));
    EXPECT_THROW(evaluate(out.model, small_dataset(40, 9, 4), dataset::SplitPart::test), DataError);
}

TEST(Sweep, DuplicatesDroppedAndRowsMatchEvaluation) {
    TempDir dir;
    SweepSettings s;
    s.base = small(dataset::Task::nm, 40, 2);
    s.base.t_total = 1.0;
    s.m_list = {3, 3};
    s.model = "m-svm-single";
    s.train = quick();
    s.tree.root = dir.path();
    std::vector<std::string> warnings;
    const auto rows = sweep_m(s, &warnings);
    ASSERT_EQ(rows.size(), 1u);
    EXPECT_EQ(warnings.size(), 1u);
    const auto model = Classifier::load(rows[0].model_path);
    std::vector<std::string> logs;
    const auto ds = cached_dataset(s.tree, dataset::make_task_spec([&] {
                                       auto o = s.base;
                                       o.steps = 3;
                                       return o;
                                   }()),
                                   1, [&](const std::string &l) { logs.push_back(l); });
    ASSERT_FALSE(logs.empty());
    EXPECT_NE(logs[0].find("cached"), std::string::npos);
    EXPECT_DOUBLE_EQ(evaluate(model, ds, dataset::SplitPart::test).accuracy, rows[0].accuracy);
    EXPECT_EQ(sweep_csv(rows).substr(0, 25), "M,gamma,validation_gamma\n");
    s.m_list.clear();
    EXPECT_THROW(sweep_m(s), ValidationError);
}

TEST(Scaling, PlanHasTwoResolutions) {
    const auto plan = scaling_plan(find_preset("iid-1").options);
    ASSERT_EQ(plan.size(), 2u);
    EXPECT_EQ(plan[0].steps, 15u);
    EXPECT_EQ(plan[1].steps, 30u);
    for (const auto &s : plan) {
        EXPECT_EQ(s.task, dataset::Task::iid);
        EXPECT_DOUBLE_EQ(s.t_total, 2.0);
    }
    EXPECT_DOUBLE_EQ(plan[1].delta() * 2.0, plan[0].delta());
}

TEST(Report, EmptyDirectoryGivesAllMissing) {
    TempDir dir;
    const auto t = collect_reports(dir.path() / "absent");
    EXPECT_EQ(t.models.size(), 12u);
    EXPECT_EQ(t.columns.size(), 6u);
    for (const auto &row : t.cells) {
        for (const auto &c : row) EXPECT_FALSE(c.has_value());
    }
    const auto csv = t.csv();
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 13);
    EXPECT_NE(t.text().find("0 of 72 cells filled"), std::string::npos);
}

TEST(Report, OneRunFillsOneCell) {
    TempDir dir;
    OutputTree tree{dir.path()};
    auto o = small(dataset::Task::iid, 40, 2);
    o.nodes = 40;
    o.steps = 15;
    const auto row = run_experiment(tree, dataset::make_task_spec(o), "m-svm-single", quick());
    const auto t = collect_reports(tree.reports());
    size_t filled = 0;
    for (size_t r = 0; r < t.models.size(); ++r) {
        for (size_t c = 0; c < t.columns.size(); ++c) {
            if (!t.cells[r][c]) continue;
            ++filled;
            EXPECT_EQ(t.models[r], "m-SVM-single");
            EXPECT_EQ(t.columns[c], "iid-0.1");
            EXPECT_DOUBLE_EQ(*t.cells[r][c], row.accuracy);
            EXPECT_FALSE(t.sources[r][c].empty());
        }
    }
    EXPECT_EQ(filled, 1u);
}

}  // namespace
}  // namespace qnc::experiment
