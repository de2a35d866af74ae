#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>

#include <gtest/gtest.h>

#include "fixtures.hpp"
#include "softds/io.hpp"
#include "softds/metrics.hpp"
#include "softds/sds.hpp"

namespace softds {
namespace {

namespace fs = std::filesystem;

struct RunResult {
    int exit_code = -1;
    std::string out;
    std::string err;
};

class CliTest : public ::testing::Test {
protected:
    void SetUp() override {
        const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
        dir_ = fs::temp_directory_path() / ("softds_cli_" + std::string(info->name()));
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }

    fs::path path(const std::string& name) const { return dir_ / name; }

    RunResult run(const std::string& args, const std::string& stdin_file = "") const {
        const auto out = dir_ / "stdout.txt";
        const auto err = dir_ / "stderr.txt";
        std::string cmd = std::string(SOFTDS_CLI_PATH) + " " + args;
        if (!stdin_file.empty()) {
            cmd += " < '" + stdin_file + "'";
        }
        cmd += " > '" + out.string() + "' 2> '" + err.string() + "'";
        const int status = std::system(cmd.c_str());
        RunResult r;
        r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
        r.out = read_text(out);
        r.err = read_text(err);
        return r;
    }

    // Writes a spec file and simulates it into `name`/.
    fs::path simulate(const GenerativeSpec& spec, const std::string& name) const {
        write_text(path(name + ".spec.json"), spec_to_json(spec).dump(2));
        const auto r = run("simulate --spec " + path(name + ".spec.json").string() + " --out " +
                           path(name).string());
        EXPECT_EQ(r.exit_code, 0) << r.err;
        return path(name) / "manifest.json";
    }

    fs::path dir_;
};

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

TEST_F(CliTest, AggregateBaselinesWriteOneRowPerItem) {
    const auto manifest = simulate(testing::recovery_spec(60, 1), "data");
    for (const std::string method : {"ea", "mv", "ds"}) {
        const auto out = path(method + ".csv");
        const auto r = run("aggregate --method " + method + " --manifest " + q(manifest) + " --out " + q(out));
        ASSERT_EQ(r.exit_code, 0) << method << ": " << r.err;
        const auto post = load_posterior(out);
        EXPECT_EQ(post.n_items(), 60u);
        EXPECT_EQ(post.n_classes(), 5u);
    }
    const auto preds = load_predictions(manifest);
    EXPECT_EQ(load_posterior(path("ea.csv")), ensemble_average(preds));
}

TEST_F(CliTest, AggregateSdsEmitsModelTraceAndPosterior) {
    const auto manifest = simulate(testing::recovery_spec(100, 2), "data");
    SdsConfig cfg;
    cfg.em_iterations = 7;
    write_text(path("cfg.json"), config_to_json(cfg).dump(2));
    const auto r = run("aggregate --method sds --config " + q(path("cfg.json")) + " --manifest " +
                       q(manifest) + " --out " + q(path("post.csv")) + " --model-out " +
                       q(path("model.json")) + " --trace-out " + q(path("trace.csv")) + " --threads 2");
    ASSERT_EQ(r.exit_code, 0) << r.err;
    const auto post = load_posterior(path("post.csv"));
    const auto model = load_model(path("model.json"));
    const auto trace = read_lines(path("trace.csv"));
    EXPECT_EQ(post.n_items(), 100u);
    EXPECT_EQ(model.pi.n_members(), 3u);
    EXPECT_EQ(trace.size(), 8u);
    EXPECT_EQ(trace.front(), "iteration,q,alpha,millis");

    const auto fitted = fit(load_predictions(manifest), cfg);
    EXPECT_EQ(post, fitted.posterior);
    EXPECT_EQ(model.pi, fitted.model.pi);
}

TEST_F(CliTest, MissingMemberFileIsNamed) {
    const auto manifest = simulate(testing::recovery_spec(20, 3), "data");
    fs::remove(path("data") / "member_1.csv");
    const auto r = run("aggregate --method ea --manifest " + q(manifest) + " --out " + q(path("p.csv")));
    EXPECT_NE(r.exit_code, 0);
    EXPECT_NE(r.err.find("member_1.csv"), std::string::npos) << r.err;
}

TEST_F(CliTest, MissingManifestIsAnIoError) {
    const auto r = run("aggregate --method ea --manifest " + q(path("none.json")) + " --out " + q(path("p.csv")));
    EXPECT_EQ(r.exit_code, 2);
}

TEST_F(CliTest, BadRowSumIsAValidationErrorNamingTheRow) {
    write_text(path("m0.csv"), "item_id,p_0,p_1\na,0.5,0.5\nb,0.5,0.4\n");
    write_text(path("manifest.json"), R"({"n_classes": 2, "members": ["m0.csv"]})");
    const auto r = run("aggregate --method ea --manifest " + q(path("manifest.json")) + " --out " + q(path("p.csv")));
    EXPECT_EQ(r.exit_code, 1);
    EXPECT_NE(r.err.find("m0.csv row 2"), std::string::npos) << r.err;
}

TEST_F(CliTest, EvaluatePerfectPosterior) {
    write_text(path("post.csv"), "item_id,p_0,p_1,p_2\na,1,0,0\nb,0,0,1\nc,0,1,0\n");
    write_text(path("truth.csv"), "item_id,label\nc,1\na,0\nb,2\n");
    const auto r = run("evaluate --posterior " + q(path("post.csv")) + " --truth " + q(path("truth.csv")));
    ASSERT_EQ(r.exit_code, 0) << r.err;
    const auto report = json::parse(r.out);
    EXPECT_EQ(report.at("accuracy").get<double>(), 1.0);
    EXPECT_EQ(report.at("ece").get<double>(), 0.0);
    EXPECT_EQ(report.at("brier").get<double>(), 0.0);
    EXPECT_EQ(report.at("nll").get<double>(), 0.0);
}

TEST_F(CliTest, EvaluateUniformThousandClasses) {
    const std::size_t N = 50, J = 1000;
    PosteriorMatrix post(default_item_ids(N), J, std::vector<double>(N * J, 1.0 / J));
    GroundTruth truth{default_item_ids(N), {}};
    for (std::size_t i = 0; i < N; ++i) {
        truth.labels.push_back(static_cast<ClassIndex>((i * 37) % J));
    }
    save_posterior(post, path("post.csv"));
    save_truth(truth, path("truth.csv"));
    const auto r = run("evaluate --posterior " + q(path("post.csv")) + " --truth " + q(path("truth.csv")) +
                       " --out " + q(path("report.json")));
    ASSERT_EQ(r.exit_code, 0) << r.err;
    const auto report = read_json(path("report.json"));
    EXPECT_NEAR(report.at("brier").get<double>(), 0.999, 1e-12);
    EXPECT_NEAR(report.at("nll").get<double>(), std::log(1000.0), 1e-9);
}

TEST_F(CliTest, EvaluateRejectsItemMismatch) {
    write_text(path("post.csv"), "item_id,p_0,p_1\na,1,0\nb,0,1\n");
    write_text(path("truth.csv"), "item_id,label\na,0\nz,1\n");
    const auto r = run("evaluate --posterior " + q(path("post.csv")) + " --truth " + q(path("truth.csv")));
    EXPECT_NE(r.exit_code, 0);
}

TEST_F(CliTest, EvaluateWritesBinsConfusionAndAuroc) {
    write_text(path("post.csv"), "item_id,p_0,p_1\na,0.9,0.1\nb,0.2,0.8\n");
    write_text(path("ood.csv"), "item_id,p_0,p_1\nx,0.5,0.5\ny,0.6,0.4\n");
    write_text(path("truth.csv"), "item_id,label\na,0\nb,1\n");
    const auto r = run("evaluate --posterior " + q(path("post.csv")) + " --truth " + q(path("truth.csv")) +
                       " --bins 10 --bins-out " + q(path("bins.csv")) + " --confusion-out " +
                       q(path("conf.json")) + " --ood-posterior " + q(path("ood.csv")));
    ASSERT_EQ(r.exit_code, 0) << r.err;
    EXPECT_EQ(json::parse(r.out).at("auroc").get<double>(), 1.0);
    EXPECT_EQ(read_lines(path("bins.csv")).size(), 11u);
    EXPECT_TRUE(fs::exists(path("conf.json")));
}

TEST_F(CliTest, SimulateIsByteReproducible) {
    auto spec = testing::recovery_spec(80, 7);
    simulate(spec, "one");
    simulate(spec, "two");
    for (const std::string f : {"member_0.csv", "member_1.csv", "member_2.csv", "truth.csv", "manifest.json"}) {
        EXPECT_EQ(read_text(path("one") / f), read_text(path("two") / f)) << f;
    }
    const auto preds = load_predictions(path("one") / "manifest.json");
    EXPECT_EQ(preds.n_items(), 80u);
    const auto reference = sample(spec);
    EXPECT_EQ(load_truth(path("one") / "truth.csv").labels, reference.truth.labels);
}

TEST_F(CliTest, SimulateRejectsEmptySpec) {
    auto spec = spec_to_json(testing::recovery_spec(10, 1));
    spec["n_items"] = 0;
    write_text(path("bad.json"), spec.dump());
    const auto r = run("simulate --spec " + q(path("bad.json")) + " --out " + q(path("out")));
    EXPECT_EQ(r.exit_code, 1);
}

class CliOnlineTest : public CliTest {
protected:
    void SetUp() override {
        CliTest::SetUp();
        manifest_ = simulate(testing::recovery_spec(40, 9), "data");
        SdsConfig cfg;
        cfg.em_iterations = 5;
        write_text(path("cfg.json"), config_to_json(cfg).dump(2));
        const auto r = run("aggregate --method sds --config " + q(path("cfg.json")) + " --manifest " +
                           q(manifest_) + " --out " + q(path("post.csv")) + " --model-out " +
                           q(path("model.json")));
        ASSERT_EQ(r.exit_code, 0) << r.err;
    }

    // One stream row per item, built from the member files' own text.
    std::string stream_text() const {
        const auto m = load_manifest(manifest_);
        std::vector<std::vector<std::string>> members;
        for (const auto& f : m.members) {
            members.push_back(read_lines(f));
        }
        std::string text = "item_id";
        for (std::size_t k = 0; k < members.size(); ++k) {
            for (std::size_t l = 0; l < m.n_classes; ++l) {
                text += ",m" + std::to_string(k) + "_p_" + std::to_string(l);
            }
        }
        text += "\n";
        for (std::size_t r = 1; r < members[0].size(); ++r) {
            text += members[0][r];
            for (std::size_t k = 1; k < members.size(); ++k) {
                text += members[k][r].substr(members[k][r].find(','));
            }
            text += "\n";
        }
        return text;
    }

    fs::path manifest_;
};

TEST_F(CliOnlineTest, StreamMatchesBatchEStep) {
    write_text(path("stream.csv"), stream_text());
    const auto r = run("online --model " + q(path("model.json")), path("stream.csv").string());
    ASSERT_EQ(r.exit_code, 0) << r.err;
    write_text(path("online.csv"), r.out);
    const auto online = load_posterior(path("online.csv"));
    const auto batch = e_step_raw(load_predictions(manifest_), load_model(path("model.json")));
    EXPECT_EQ(online, batch);

    const auto from_manifest = run("online --model " + q(path("model.json")) + " --manifest " + q(manifest_));
    ASSERT_EQ(from_manifest.exit_code, 0) << from_manifest.err;
    EXPECT_EQ(from_manifest.out, r.out);
}

TEST_F(CliOnlineTest, EmptyStreamProducesOnlyHeader) {
    write_text(path("empty.csv"), "");
    const auto r = run("online --model " + q(path("model.json")) + " --input " + q(path("empty.csv")));
    EXPECT_EQ(r.exit_code, 0) << r.err;
    EXPECT_EQ(r.out, probability_header(5) + "\n");
}

TEST_F(CliOnlineTest, MalformedRowIsReportedAndSkipped) {
    auto text = stream_text();
    // second data row loses one column; third row gets a non-number
    std::istringstream lines(text);
    std::vector<std::string> rows;
    for (std::string line; std::getline(lines, line);) {
        rows.push_back(line);
    }
    rows[2] = rows[2].substr(0, rows[2].rfind(','));
    rows[3] = rows[3].substr(0, rows[3].rfind(',')) + ",abc";
    std::string broken;
    for (const auto& row : rows) {
        broken += row + "\n";
    }
    write_text(path("broken.csv"), broken);
    const auto r = run("online --model " + q(path("model.json")) + " --input " + q(path("broken.csv")));
    EXPECT_EQ(r.exit_code, 1);
    EXPECT_NE(r.err.find("input line 3"), std::string::npos) << r.err;
    EXPECT_NE(r.err.find("input line 4"), std::string::npos) << r.err;
    write_text(path("online.csv"), r.out);
    EXPECT_EQ(load_posterior(path("online.csv")).n_items(), 38u);
}

TEST_F(CliOnlineTest, ExplainReproducesPosteriorRow) {
    const auto r = run("explain --model " + q(path("model.json")) + " --manifest " + q(manifest_) +
                       " --item 17");
    ASSERT_EQ(r.exit_code, 0) << r.err;
    const auto j = json::parse(r.out);
    const std::size_t J = j.at("n_classes").get<std::size_t>();
    const auto prior = j.at("prior_term").get<std::vector<double>>();
    const auto member = j.at("member_term").get<std::vector<std::vector<double>>>();
    const auto norm = j.at("normalizer_term").get<std::vector<std::vector<double>>>();
    std::vector<double> w(J);
    for (std::size_t c = 0; c < J; ++c) {
        w[c] = prior[c];
        for (std::size_t k = 0; k < member.size(); ++k) {
            w[c] += member[k][c] + norm[k][c];
        }
    }
    const auto p = normalize_log(w);
    const auto batch = e_step_raw(load_predictions(manifest_), load_model(path("model.json")));
    for (std::size_t c = 0; c < J; ++c) {
        EXPECT_NEAR(p[c], batch.row(17)[c], 1e-10);
    }
}

TEST_F(CliOnlineTest, ExplainRejectsUnknownItem) {
    const auto r = run("explain --model " + q(path("model.json")) + " --manifest " + q(manifest_) +
                       " --item nope");
    EXPECT_NE(r.exit_code, 0);
}

} // namespace
} // namespace softds
