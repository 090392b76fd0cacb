#include <doctest.h>

#include <csignal>
#include <fstream>
#include <sstream>
#include <sys/wait.h>
#include <unistd.h>

#include <httplib.h>

#include "mieval/cli.hpp"
#include "mieval/composer.hpp"
#include "mieval/experiments.hpp"
#include "mieval/verdict.hpp"
#include "mieval/io.hpp"
#include "support.hpp"

using namespace mieval;
using testsupport::TempDir;
namespace fs = std::filesystem;

namespace {

struct Result {
    int code;
    std::string out;
    std::string err;
};

Result run_cli(std::vector<std::string> args) {
    std::ostringstream out;
    std::ostringstream err;
    const int code = cli::run(args, out, err);
    return {code, out.str(), err.str()};
}

void write_config(const fs::path& path, const json& extra = json::object()) {
    json j{{"kind", "mock"},
           {"unit_cost", 0.0002886},
           {"requests_per_minute", 100000},
           {"mock", {{"flip_pos", 0.1}, {"flip_neg", 0.05}, {"refuse", 0.02}, {"seed", 9}}}};
    j.update(extra);
    write_file_atomic(path, j.dump());
}

struct Workspace {
    TempDir tmp;
    testsupport::SynthCorpus c;
    fs::path config;

    Workspace() {
        c = testsupport::make_synthetic_corpus(tmp / "data");
        config = tmp / "mock.json";
        write_config(config);
    }

    std::vector<std::string> globals(const fs::path& out) const {
        return {"--images", c.images_path.string(), "--setups", c.setups_path.string(), "--config", config.string(),
                "--out", out.string()};
    }

    Result run(const fs::path& out, std::vector<std::string> rest) const {
        auto args = globals(out);
        args.insert(args.end(), rest.begin(), rest.end());
        return run_cli(args);
    }
};

std::string slurp(const fs::path& p) { return read_text_file(p); }

}  // namespace

TEST_SUITE("cli") {

TEST_CASE("usage errors exit 2, help exits 0") {
    CHECK(run_cli({}).code == 2);
    CHECK(run_cli({"frobnicate"}).code == 2);
    CHECK(run_cli({"--help"}).code == 0);
    CHECK(run_cli({"compose"}).code == 2);
}

TEST_CASE("compose, judge and score") {
    Workspace w;
    const auto out = w.tmp / "out";
    auto r = w.run(out, {"compose", "--setup", "synth-ppa", "--seed", "5", "--cell", "64"});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    CHECK(fs::exists(out / "queries.ndjson"));
    const auto qs = load_queries(out / "queries.ndjson");
    REQUIRE(qs.size() == 24);
    CHECK(fs::exists(out / "images" / (qs[0].query_id + ".png")));

    r = w.run(out, {"judge", "--queries", (out / "queries.ndjson").string(), "--truth", w.c.oracle_path.string()});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    CHECK(load_verdicts(out / "verdicts.ndjson").size() == 24);
    const auto summary = json::parse(slurp(out / "mllm_report.json"));
    CHECK(summary.at("cost").at("provider_calls") == 24);
    CHECK(summary.at("prompt_hash").get<std::string>().size() == 64);

    r = w.run(out, {"score", "--setup", "synth-ppa", "--predictions", w.c.predictions_path.string(), "--verdicts",
                    (out / "verdicts.ndjson").string(), "--queries", (out / "queries.ndjson").string()});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    CHECK(r.out.find("AttAcc_MLLM") != std::string::npos);
    const auto report = json::parse(slurp(out / "report.json"));
    CHECK(report.at("n") == 24);
    CHECK(report.at("check").at("pass") == true);
}

TEST_CASE("score against a published row") {
    Workspace w;
    const auto out = w.tmp / "out";
    auto r = w.run(out, {"score", "--setup", "synth-ppa", "--predictions", w.c.predictions_path.string(), "--oracle",
                         w.c.oracle_path.string()});
    REQUIRE(r.code == 0);
    const auto row = json::parse(slurp(out / "report.json")).at("row");

    r = w.run(out, {"score", "--setup", "synth-ppa", "--predictions", w.c.predictions_path.string(), "--oracle",
                    w.c.oracle_path.string(), "--check-row", row.dump()});
    CHECK(r.code == 0);
    CHECK(r.out.find("match") != std::string::npos);

    auto off = row;
    off["fpr"] = off["fpr"].get<double>() + 1.0;
    r = w.run(out, {"score", "--setup", "synth-ppa", "--predictions", w.c.predictions_path.string(), "--oracle",
                    w.c.oracle_path.string(), "--check-row", off.dump()});
    CHECK(r.code == 1);
    CHECK(r.out.find("MISMATCH") != std::string::npos);

    r = w.run(out, {"score", "--setup", "synth-ppa", "--predictions", w.c.predictions_path.string(), "--oracle",
                    w.c.oracle_path.string(), "--check-row", "{nope"});
    CHECK(r.code == 2);
}

TEST_CASE("validation and config failures") {
    Workspace w;
    const auto out = w.tmp / "out";
    CHECK(run_cli({"--out", out.string(), "compose", "--setup", "x"}).code == 2);
    CHECK(w.run(out, {"compose", "--setup", "unknown"}).code == 2);
    CHECK(w.run(out, {"compose", "--setup", "synth-ppa", "--refs", "9"}).code == 2);

    // missing oracle labels: coverage error lists ids
    write_file_atomic(w.tmp / "empty.ndjson", std::string_view(""));
    auto r = w.run(out, {"score", "--setup", "synth-ppa", "--predictions", w.c.predictions_path.string(), "--oracle",
                         (w.tmp / "empty.ndjson").string()});
    CHECK(r.code == 2);
    CHECK(r.err.find("missing oracle label: rec-000-0") != std::string::npos);

    // no config at all
    r = run_cli({"--images", w.c.images_path.string(), "--setups", w.c.setups_path.string(), "--out", out.string(),
                 "reassess", "--setup", "synth-ppa", "--predictions", w.c.predictions_path.string()});
    CHECK(r.code == 3);

    // a real provider without MLLM_API_KEY fails before any network call
    ::unsetenv("MLLM_API_KEY");
    write_file_atomic(w.tmp / "gemini.json",
                      json{{"kind", "gemini"}, {"model_id", "g"}, {"endpoint", "http://127.0.0.1:9"}}.dump());
    r = w.run(out, {"reassess", "--setup", "synth-ppa", "--predictions", w.c.predictions_path.string(), "--provider",
                    (w.tmp / "gemini.json").string()});
    CHECK(r.code == 3);
    CHECK(r.err.find("MLLM_API_KEY") != std::string::npos);

    // a key in the file is refused
    write_file_atomic(w.tmp / "keyed.json", json{{"kind", "mock"}, {"api_key", "sk-123"}}.dump());
    r = w.run(out, {"reassess", "--setup", "synth-ppa", "--predictions", w.c.predictions_path.string(), "--provider",
                    (w.tmp / "keyed.json").string(), "--truth", w.c.oracle_path.string()});
    CHECK(r.code == 3);
}

TEST_CASE("unreachable provider exits 4") {
    Workspace w;
    const auto out = w.tmp / "out";
    REQUIRE(w.run(out, {"compose", "--setup", "synth-ppa", "--cell", "64"}).code == 0);
    ::setenv("MLLM_API_KEY", "test-key", 1);
    write_file_atomic(w.tmp / "down.json", json{{"kind", "openai"},
                                                {"model_id", "m"},
                                                {"endpoint", "http://127.0.0.1:9/v1/chat/completions"},
                                                {"max_retries", 0},
                                                {"timeout_s", 1.0}}
                                               .dump());
    const auto r = w.run(out, {"judge", "--queries", (out / "queries.ndjson").string(), "--provider",
                               (w.tmp / "down.json").string()});
    ::unsetenv("MLLM_API_KEY");
    CHECK(r.code == 4);
    CHECK(fs::exists(out / "failures.ndjson"));
    CHECK(slurp(out / "failures.ndjson").find("sk-") == std::string::npos);
}

TEST_CASE("judge repeats write one file per round") {
    Workspace w;
    const auto out = w.tmp / "out";
    REQUIRE(w.run(out, {"compose", "--setup", "synth-ppa", "--cell", "64"}).code == 0);
    const auto r = w.run(out, {"judge", "--queries", (out / "queries.ndjson").string(), "--truth",
                               w.c.oracle_path.string(), "--repeats", "3"});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    for (int i = 1; i <= 3; ++i) CHECK(fs::exists(out / ("verdicts.r" + std::to_string(i) + ".ndjson")));
    CHECK(json::parse(slurp(out / "mllm_report.json")).contains("aggregate"));
    CHECK(r.out.find("over 3 rounds") != std::string::npos);
}

TEST_CASE("reassess runs and the report") {
    Workspace w;
    const auto out = w.tmp / "out";
    auto r = w.run(out, {"reassess", "--setup", "synth-ppa", "--predictions", w.c.predictions_path.string(),
                         "--truth", w.c.oracle_path.string(), "--repeats", "3", "--seed", "2"});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    CHECK(r.out.find("±") != std::string::npos);
    std::vector<fs::path> runs;
    for (const auto& e : fs::directory_iterator(out / "runs")) runs.push_back(e.path());
    REQUIRE(runs.size() == 1);
    const auto rec = parse_run_record(json::parse(slurp(runs[0] / "record.json")));
    CHECK(rec.kind == ExperimentKind::reassessment);
    CHECK(rec.input_hashes.count("images") == 1);
    CHECK(rec.artifacts.count("verdicts.r2") == 1);
    CHECK(rec.ledger.provider_calls == 72);
    CHECK(slurp(runs[0] / "record.json").find("api_key") == std::string::npos);

    r = w.run(out, {"report"});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("synth") == std::string::npos);  // attack column, not the setup id
    CHECK(r.out.find("PPA") != std::string::npos);
    CHECK(fs::exists(out / "report.txt"));
    r = w.run(out, {"report", "--format", "json"});
    CHECK(json::parse(r.out).at("rows").size() == 1);
}

TEST_CASE("select-bench writes a run") {
    Workspace w;
    const auto out = w.tmp / "out";
    const auto r = w.run(out, {"select-bench", "--dataset", "Synth", "--n-pairs", "20", "--seed", "1"});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    CHECK(r.out.find("eligible") != std::string::npos);
    CHECK(fs::exists(out / "runs"));
    CHECK(w.run(out, {"select-bench", "--dataset", "Synth", "--n-pairs", "500"}).code == 2);
}

TEST_CASE("transfer on the fixture manifests") {
    const auto dir = testsupport::fixtures_dir() / "transfer";
    TempDir tmp;
    const auto r = run_cli({"--images", (dir / "images.ndjson").string(), "--setups", (dir / "setups.ndjson").string(),
                            "--out", tmp.path().string(), "transfer", "--setup", "ppa-facescrub-inceptionv3",
                            "--predictions", (dir / "predictions.ndjson").string(), "--oracle",
                            (dir / "oracle.ndjson").string()});
    REQUIRE_MESSAGE(r.code == 0, r.err);
    CHECK(r.out.find("89.04% (666/748)") != std::string::npos);
    CHECK(r.out.find("0.94% (7/748)") != std::string::npos);
}

TEST_CASE("annotate-serve as a process") {
    Workspace w;
    const auto out = w.tmp / "out";
    REQUIRE(w.run(out, {"compose", "--setup", "synth-ppa", "--cell", "64"}).code == 0);

    int pipefd[2];
    REQUIRE(::pipe(pipefd) == 0);
    const pid_t pid = ::fork();
    REQUIRE(pid >= 0);
    if (pid == 0) {
        ::dup2(pipefd[1], STDOUT_FILENO);
        ::close(pipefd[0]);
        const std::string queries = (out / "queries.ndjson").string();
        const std::string votes = (w.tmp / "votes.ndjson").string();
        ::execl(MIEVAL_CLI_PATH, "mieval", "annotate-serve", "--queries", queries.c_str(), "--votes", votes.c_str(),
                "--port", "0", static_cast<char*>(nullptr));
        ::_exit(127);
    }
    ::close(pipefd[1]);
    std::string line;
    char ch;
    while (::read(pipefd[0], &ch, 1) == 1 && ch != '\n') line += ch;
    ::close(pipefd[0]);
    const auto colon = line.rfind(':');
    REQUIRE(colon != std::string::npos);
    const int port = std::stoi(line.substr(colon + 1));

    httplib::Client client("127.0.0.1", port);
    auto res = client.Get("/api/tasks?annotator=a");
    REQUIRE(res);
    CHECK(json::parse(res->body).at("total") == 24);
    res = client.Post("/api/votes", json{{"annotator_id", "a"}, {"query_id", json::parse(res->body).at("pending")[0]}, {"vote", "yes"}}.dump(),
                      "application/json");
    REQUIRE(res);
    CHECK(res->status == 200);

    ::kill(pid, SIGTERM);
    int status = 0;
    ::waitpid(pid, &status, 0);
    CHECK(WIFEXITED(status));
    CHECK(WEXITSTATUS(status) == 0);
    CHECK(slurp(w.tmp / "votes.ndjson").find("\"annotator_id\":\"a\"") != std::string::npos);
}

}
