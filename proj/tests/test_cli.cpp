#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "qple/em.hpp"
#include "qple/io.hpp"

using namespace qple;
namespace fs = std::filesystem;

namespace {

const std::string cli = QPLE_CLI_PATH;

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    REQUIRE(in.good());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int run(const std::string& args) {
    return std::system((cli + " " + args + " > /dev/null 2> cli_stderr.txt").c_str());
}

fs::path sandbox() {
    fs::path dir = fs::temp_directory_path() / "qple_cli_test";
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

void write_file(const fs::path& p, const std::string& text) {
    std::ofstream out(p);
    out << text;
}

}  // namespace

TEST_CASE("quad subcommand prints a normalized rule") {
    const fs::path dir = sandbox();
    const fs::path out = dir / "rule.csv";
    const int rc = std::system((cli + " quad --dist normal:0:1 --nodes 3 > " + out.string()).c_str());
    REQUIRE(rc == 0);
    const std::string text = slurp(out);
    CHECK(text.rfind("z1,weight", 0) == 0);
    // 3-node Hermite: nodes -sqrt(3), 0, sqrt(3); middle weight 2/3
    CHECK(text.find("0.66666666666666") != std::string::npos);
}

TEST_CASE("fit: ingestion, outputs, and model round trip") {
    const fs::path dir = sandbox();
    write_file(dir / "data.csv",
               "y,x1\n3,0.05\n1,0.15\n2,0.25\n4,0.35\n2,0.45\n1,0.55\n3,0.65\n2,0.75\n5,0.85\n2,0.95\n");
    write_file(dir / "spec.json", "{\"default\": {\"type\": \"exact\"}}");
    const std::string out = (dir / "out").string();
    const int rc = run("fit --data " + (dir / "data.csv").string() + " --spec " +
                       (dir / "spec.json").string() + " --family poisson --kernel cubic --lambda 1e-3 --out " +
                       out);
    REQUIRE(rc == 0);
    REQUIRE(fs::exists(out + "/model.json"));
    REQUIRE(fs::exists(out + "/fit_grid.csv"));

    // reload and compare to an in-process fit of the same data
    const RepresenterModel loaded = model_from_json_string(slurp(out + "/model.json"));
    IngestResult ing = ingest((dir / "data.csv").string(), (dir / "spec.json").string(),
                              ExpFamilySpec::poisson(), KernelSpec::cubic_spline());
    EmOptions opts;
    opts.quad.clamp_unit = true;
    const FitResult fit = qple_fit(ing.data, 1e-3, opts);
    const Vector reloaded_at_nodes = evaluate_unit(loaded, loaded.nodes);
    CHECK((reloaded_at_nodes - fit.fitted).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("ingestion errors are reported with the offending row") {
    const fs::path dir = sandbox();
    write_file(dir / "bad_header.csv", "y,foo\n1,0.5\n");
    write_file(dir / "spec.json", "{\"default\": {\"type\": \"exact\"}}");
    CHECK(run("fit --data " + (dir / "bad_header.csv").string() + " --spec " +
              (dir / "spec.json").string() + " --out " + (dir / "o1").string()) != 0);
    CHECK(slurp("cli_stderr.txt").find("error:") != std::string::npos);
    CHECK(slurp("cli_stderr.txt").find("header") != std::string::npos);

    write_file(dir / "na.csv", "y,x1,x2\n1,0.5,NA\n2,0.1,0.2\n");
    CHECK(run("fit --data " + (dir / "na.csv").string() + " --spec " + (dir / "spec.json").string() +
              " --kernel tps --out " + (dir / "o2").string()) != 0);
    CHECK(slurp("cli_stderr.txt").find("row 2") != std::string::npos);

    write_file(dir / "probs.csv", "y,x1\n1,0.5\n");
    write_file(dir / "badprobs.json",
               "{\"subjects\": {\"0\": {\"type\":\"discrete\",\"values\":[0.2,0.8],\"probs\":[0.5,0.6]}}}");
    CHECK(run("fit --data " + (dir / "probs.csv").string() + " --spec " + (dir / "badprobs.json").string() +
              " --out " + (dir / "o3").string()) != 0);
    CHECK(slurp("cli_stderr.txt").find("sum to 1") != std::string::npos);
}

TEST_CASE("missing coordinates need a missing_model spec; NA rows parse with one") {
    const fs::path dir = sandbox();
    write_file(dir / "mis.csv",
               "y,x1,x2\n5,0.4,NA\n2,0.1,0.2\n3,0.3,0.8\n1,0.7,0.1\n2,0.9,0.6\n4,0.5,0.5\n"
               "2,0.2,0.9\n3,0.6,0.3\n2,0.8,0.8\n1,0.15,0.55\n");
    write_file(dir / "misspec.json",
               "{\"default\": {\"type\": \"exact\"}, \"subjects\": {\"0\": {\"type\": \"missing_model\"}}}");
    const int rc = run("fit --data " + (dir / "mis.csv").string() + " --spec " +
                       (dir / "misspec.json").string() +
                       " --family poisson --kernel tps --lambda 1e-2 --nodes 5 --out " +
                       (dir / "om").string());
    CHECK(rc == 0);
    const std::string model = slurp((dir / "om" / "model.json").string());
    CHECK(model.find("covariate_model") != std::string::npos);
}

TEST_CASE("tune requires truth for tkl and writes the criterion curve") {
    const fs::path dir = sandbox();
    write_file(dir / "data.csv",
               "y,x1\n3,0.05\n1,0.15\n2,0.25\n4,0.35\n2,0.45\n1,0.55\n3,0.65\n2,0.75\n5,0.85\n2,0.95\n");
    write_file(dir / "spec.json", "{\"default\": {\"type\": \"exact\"}}");
    CHECK(run("tune --data " + (dir / "data.csv").string() + " --spec " + (dir / "spec.json").string() +
              " --criterion tkl --out " + (dir / "t0").string()) != 0);
    CHECK(slurp("cli_stderr.txt").find("--truth") != std::string::npos);

    const int rc = run("tune --data " + (dir / "data.csv").string() + " --spec " +
                       (dir / "spec.json").string() +
                       " --criterion gacv --lambda-grid -5:-1:6 --out " + (dir / "t1").string());
    REQUIRE(rc == 0);
    const std::string curve = slurp((dir / "t1" / "criterion.csv").string());
    CHECK(curve.rfind("lambda,gacv,ok", 0) == 0);
    CHECK(std::count(curve.begin(), curve.end(), '\n') == 7);  // header + 6 grid points
}

TEST_CASE("identical seeds give byte-identical simulate and tune outputs") {
    const fs::path dir = sandbox();
    const std::string base = "simulate --scenario case_i --n 30 --error normal:0.145 --replicates 2 "
                             "--lambda-grid -4:-2:3 --nodes 5 --seed 42 --jobs 2 --out ";
    REQUIRE(run(base + (dir / "s1").string()) == 0);
    REQUIRE(run(base + (dir / "s2").string()) == 0);
    CHECK(slurp(dir / "s1" / "comparison.csv") == slurp(dir / "s2" / "comparison.csv"));
    CHECK(slurp(dir / "s1" / "summary.csv") == slurp(dir / "s2" / "summary.csv"));
    CHECK(slurp(dir / "s1" / "comparison.csv").rfind("replicate,method,tuning,lambda_selected,tkl", 0) == 0);

    write_file(dir / "data.csv",
               "y,x1\n3,0.05\n1,0.15\n2,0.25\n4,0.35\n2,0.45\n1,0.55\n3,0.65\n2,0.75\n5,0.85\n2,0.95\n");
    write_file(dir / "spec.json", "{\"default\": {\"type\": \"exact\"}}");
    const std::string tbase = "tune --data " + (dir / "data.csv").string() + " --spec " +
                              (dir / "spec.json").string() +
                              " --criterion rangacv --replicates 3 --lambda-grid -4:-1:4 --seed 77 --out ";
    REQUIRE(run(tbase + (dir / "t1").string()) == 0);
    REQUIRE(run(tbase + (dir / "t2").string()) == 0);
    CHECK(slurp(dir / "t1" / "criterion.csv") == slurp(dir / "t2" / "criterion.csv"));
}

TEST_CASE("error-model specs thread through ingestion to the fit") {
    const fs::path dir = sandbox();
    std::string rows = "y,x1\n";
    for (int i = 0; i < 14; ++i)
        rows += std::to_string(1 + i % 4) + "," + std::to_string(0.05 + 0.065 * i) + "\n";
    write_file(dir / "noisy.csv", rows);
    write_file(dir / "espec.json",
               "{\"default\": {\"type\": \"normal_error\", \"sigma\": 0.05, \"known\": false},"
               " \"subjects\": {\"0\": {\"type\": \"exact\"}, \"1\": {\"type\": \"exact\"},"
               " \"2\": {\"type\": \"exact\"}}}");
    const int rc = run("fit --data " + (dir / "noisy.csv").string() + " --spec " +
                       (dir / "espec.json").string() +
                       " --family poisson --kernel cubic --lambda 1e-2 --nodes 5 --override-a1 --out " +
                       (dir / "oe").string());
    REQUIRE(rc == 0);
    const std::string model = slurp(dir / "oe" / "model.json");
    CHECK(model.find("error_model") != std::string::npos);
    CHECK(model.find("normal_iso") != std::string::npos);

    // inconsistent per-subject scales are rejected (theta is shared)
    write_file(dir / "bad.json",
               "{\"default\": {\"type\": \"normal_error\", \"sigma\": 0.05},"
               " \"subjects\": {\"3\": {\"type\": \"normal_error\", \"sigma\": 0.2}}}");
    CHECK(run("fit --data " + (dir / "noisy.csv").string() + " --spec " + (dir / "bad.json").string() +
              " --override-a1 --out " + (dir / "ob").string()) != 0);
    CHECK(slurp("cli_stderr.txt").find("shared") != std::string::npos);

    // uniform error parses and fits
    write_file(dir / "uspec.json",
               "{\"default\": {\"type\": \"uniform_error\", \"delta\": 0.06, \"known\": true},"
               " \"subjects\": {\"0\": {\"type\": \"exact\"}, \"1\": {\"type\": \"exact\"}}}");
    CHECK(run("fit --data " + (dir / "noisy.csv").string() + " --spec " + (dir / "uspec.json").string() +
              " --family poisson --kernel cubic --lambda 1e-2 --nodes 4 --override-a1 --out " +
              (dir / "ou").string()) == 0);
}

TEST_CASE("ssanova kernel spec round-trips through the model JSON") {
    const fs::path dir = sandbox();
    write_file(dir / "ss.json",
               "{\"type\":\"ssanova\",\"blocks\":["
               "{\"coords\":[0],\"theta\":1.5,\"kernel\":{\"type\":\"cubic_spline\"}},"
               "{\"coords\":[1],\"theta\":0.5,\"kernel\":{\"type\":\"cubic_spline\"}}]}");
    const KernelSpec k = parse_kernel("ssanova:" + (dir / "ss.json").string());
    REQUIRE(k.type == KernelSpec::Type::ssanova);
    REQUIRE(k.blocks.size() == 2);
    CHECK(k.blocks[0].theta == 1.5);
    CHECK(k.null_dim(2) == 3);

    write_file(dir / "d2.csv", "y,x1,x2\n2,0.1,0.9\n3,0.4,0.2\n1,0.8,0.6\n2,0.3,0.3\n4,0.6,0.8\n"
                               "2,0.2,0.5\n3,0.9,0.1\n1,0.5,0.7\n");
    write_file(dir / "spec.json", "{\"default\": {\"type\": \"exact\"}}");
    const int rc = run("fit --data " + (dir / "d2.csv").string() + " --spec " + (dir / "spec.json").string() +
                       " --family poisson --kernel ssanova:" + (dir / "ss.json").string() +
                       " --lambda 1e-2 --out " + (dir / "oss").string());
    REQUIRE(rc == 0);
    const RepresenterModel loaded = model_from_json_string(slurp(dir / "oss" / "model.json"));
    CHECK(loaded.kernel.type == KernelSpec::Type::ssanova);
    CHECK(loaded.kernel.blocks.size() == 2);
}

TEST_CASE("commands do not mutate their input files") {
    const fs::path dir = sandbox();
    const std::string data = "y,x1\n3,0.05\n1,0.15\n2,0.25\n4,0.35\n2,0.45\n1,0.55\n3,0.65\n2,0.75\n";
    const std::string spec = "{\"default\": {\"type\": \"exact\"}}";
    write_file(dir / "data.csv", data);
    write_file(dir / "spec.json", spec);
    REQUIRE(run("fit --data " + (dir / "data.csv").string() + " --spec " + (dir / "spec.json").string() +
                " --out " + (dir / "o").string()) == 0);
    CHECK(slurp(dir / "data.csv") == data);
    CHECK(slurp(dir / "spec.json") == spec);
}

TEST_CASE("simulate refuses unknown scenarios") {
    CHECK(run("simulate --scenario nope --out /tmp/qple_nope") != 0);
    CHECK(slurp("cli_stderr.txt").find("error:") != std::string::npos);
}
