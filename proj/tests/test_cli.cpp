#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "bdray/io.hpp"

using namespace bdray;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / ("bdray_test_" + std::to_string(::getpid()));
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
    std::string file(const std::string& name, const std::string& content) const {
        fs::path p = path / name;
        std::ofstream(p) << content;
        return p.string();
    }
};

int run_cli(const std::string& args) {
    std::string cmd = std::string(BDRAY_CLI_PATH) + " " + args + " > /dev/null 2>&1";
    int rc = std::system(cmd.c_str());
    return WEXITSTATUS(rc);
}

std::string slurp(const std::string& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

const char* kRegular = R"({"family":"geometric","params":{"coeff_a":1,"coeff_b":2,"ratio":3}})";
const char* kExit = R"({"family":"geometric","params":{"coeff_a":0.5,"coeff_b":1,"ratio":2}})";
const char* kPower1 = R"({"family":"power","params":{"p":1}})";

}  // namespace

TEST_CASE("model parsing") {
    RateModel geo = parse_model(kRegular);
    CHECK(geo.b(3) == doctest::Approx(2.0 * 27.0));
    RateModel exp_m = parse_model(R"({"a":[0,1,2],"b":[1,1,1]})");
    CHECK(exp_m.a(2) == 2.0);
    RateModel shorthand = parse_model(R"({"family":"geometric","params":{"r":2,"ratio":3}})");
    CHECK(shorthand.b(1) == doctest::Approx(6.0));
    CHECK(shorthand.a(1) == doctest::Approx(3.0));

    CHECK_THROWS_AS(parse_model("not json"), error);
    CHECK_THROWS_AS(parse_model(R"({"family":"unknown"})"), error);
    CHECK_THROWS_AS(parse_model(R"({"a":[0,1]})"), error);
    CHECK_THROWS_AS(parse_model(R"({"family":"constant","params":{"a":1}})"), error);
}

TEST_CASE("triple and distribution parsing") {
    BoundaryTriple t = parse_triple(R"({"nu":[[0,1.0],[3,0.5]],"gamma":0.25,"beta":2})");
    CHECK(t.nu.at(0) == 1.0);
    CHECK(t.nu.at(3) == 0.5);
    CHECK(t.gamma == 0.25);
    CHECK(t.beta == 2.0);
    CHECK(parse_triple(R"({})").is_minimal());
    CHECK_THROWS_AS(parse_triple(R"({"nu":[[0,-1.0]]})"), error);
    CHECK_THROWS_AS(parse_triple(R"({"nu":[[0.5,1.0]]})"), error);

    ReturnDistribution pi = parse_return_distribution(R"({"atoms":[[0,0.5]],"dead":0.5})");
    CHECK(pi.atoms.at(0) == 0.5);
    CHECK_THROWS_AS(parse_return_distribution(R"({"atoms":[[0,0.5]],"dead":0.499})"), error);
}

TEST_CASE("deterministic number formatting") {
    CHECK(format_double(0.1) == "0.10000000000000001");
    CHECK(format_double(1.0) == "1");
    double v = 0.12345678901234567;
    CHECK(std::stod(format_double(v)) == v);
}

TEST_CASE("digests") {
    CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a64("a") != fnv1a64("b"));
}

TEST_CASE("cli exit codes") {
    TempDir dir;
    std::string regular = dir.file("regular.json", kRegular);
    std::string exit_m = dir.file("exit.json", kExit);
    std::string pow1 = dir.file("pow1.json", kPower1);
    std::string malformed = dir.file("broken.json", "{\"family\":");
    std::string beta_triple = dir.file("beta.json", R"({"nu":[],"gamma":0,"beta":1})");
    std::string doob_triple = dir.file("d0.json", R"({"nu":[[0,1.0]],"gamma":0,"beta":0})");
    std::string bad_pi = dir.file("badpi.json", R"({"atoms":[[0,0.999]],"dead":0})");
    std::string good_pi = dir.file("pi0.json", R"({"atoms":[[0,1.0]],"dead":0})");

    CHECK(run_cli("classify --model " + regular + " --N 60") == 0);
    CHECK(run_cli("classify --model " + malformed) == 2);
    CHECK(run_cli("classify --model " + pow1 + " --N 5") == 3);
    CHECK(run_cli("resolvent --model " + exit_m + " --triple " + beta_triple + " --N 80") == 4);
    CHECK(run_cli("simulate --model " + regular + " --mode doob --pi " + bad_pi +
                  " --paths 10") == 2);
    CHECK(run_cli("simulate --model " + regular + " --mode feller --triple " + doob_triple +
                  " --paths 10 --cap 12") == 5);
    CHECK(run_cli("converge --model " + exit_m + " --triple " + doob_triple + " --N 80") == 6);
    CHECK(run_cli("nonsense-subcommand") == 2);
}

TEST_CASE("cli determinism and manifests") {
    TempDir dir;
    std::string regular = dir.file("regular.json", kRegular);
    std::string pi0 = dir.file("pi0.json", R"({"atoms":[[0,1.0]],"dead":0})");
    std::string out1 = (dir.path / "est1.csv").string();
    std::string out2 = (dir.path / "est2.csv").string();

    std::string base = "simulate --model " + regular + " --mode doob --pi " + pi0 +
                       " --paths 3000 --seed 99 --t 0.5 --t 1.0 --cap 30 ";
    REQUIRE(run_cli(base + "--out " + out1) == 0);
    REQUIRE(run_cli(base + "--out " + out2) == 0);
    std::string c1 = slurp(out1), c2 = slurp(out2);
    CHECK(c1 == c2);
    CHECK(c1.find("i,j,t,estimate,stderr,n_paths,reference,verdict") == 0);
    CHECK(c1.find("FAIL") == std::string::npos);

    // manifest sidecar: present, digests match a recompute
    std::string man = slurp(out1 + ".manifest.json");
    CHECK(man.find("\"command\": \"simulate\"") != std::string::npos);
    char hex[20];
    std::snprintf(hex, sizeof hex, "%016llx",
                  static_cast<unsigned long long>(fnv1a64_file(regular)));
    CHECK(man.find(hex) != std::string::npos);
}

TEST_CASE("cli resolvent dump format") {
    TempDir dir;
    std::string regular = dir.file("regular.json", kRegular);
    std::string out = (dir.path / "psi.csv").string();
    REQUIRE(run_cli("resolvent --model " + regular + " --alpha 1 --N 40 --out " + out) == 0);
    std::string csv = slurp(out);
    CHECK(csv.rfind("i,j,alpha,psi\n", 0) == 0);
    // 41*41 entries + header
    size_t lines = std::count(csv.begin(), csv.end(), '\n');
    CHECK(lines == 41 * 41 + 1);
}

TEST_CASE("cli transition dump format") {
    TempDir dir;
    std::string regular = dir.file("regular.json", kRegular);
    std::string out = (dir.path / "p.csv").string();
    REQUIRE(run_cli("transition --model " + regular + " --N 10 --t 0.25 --out " + out) == 0);
    std::string csv = slurp(out);
    CHECK(csv.rfind("t,i,j,p\n", 0) == 0);
}

TEST_CASE("cli path dump sentinels") {
    TempDir dir;
    std::string exit_m = dir.file("exit.json", kExit);
    std::string pi0 = dir.file("pi0.json", R"({"atoms":[[0,0.5]],"dead":0.5})");
    std::string out = (dir.path / "est.csv").string();
    std::string dump = (dir.path / "path.txt").string();
    REQUIRE(run_cli("simulate --model " + exit_m + " --mode doob --pi " + pi0 +
                    " --paths 100 --seed 3 --t 1.0 --t 6.0 --cap 30 --out " + out +
                    " --dump-path " + dump) == 0);
    std::string text = slurp(dump);
    bool has_fly = text.find("FLY->") != std::string::npos;
    bool has_kill = text.find("KILL") != std::string::npos;
    CHECK((has_fly || has_kill));
}
