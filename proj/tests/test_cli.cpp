#include "support.hpp"

#include "epseg/checkpoint.hpp"
#include "epseg/polygon.hpp"
#include "epseg/trainer.hpp"

#include <doctest.h>

#include <httplib.h>
#include <json.hpp>

#include <sys/wait.h>

#include <csignal>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

using namespace epseg;
using namespace epseg::testing;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

const fs::path kWork = fs::temp_directory_path() / "epseg_cli_test";

struct Run {
  int code;
  std::string out;
};

Run run(const std::string& args) {
  const fs::path log = kWork / "last.log";
  const std::string cmd = std::string(EPSEG_CLI_PATH) + " " + args + " > " + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  std::ifstream in(log);
  std::stringstream ss;
  ss << in.rdbuf();
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, ss.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string q(const fs::path& p) { return "'" + p.string() + "'"; }

// Trained once, shared by the fixture test cases below.
struct Trained {
  fs::path ckpt = kWork / "fixture.ckpt";
  int code = -1;
  std::string log;

  Trained() {
    fs::create_directories(kWork);
    const auto r = run("train --data " + q(EPSEG_FIXTURE_DIR) + " --out " + q(ckpt) +
                       " --size 64 --base-width 8 --levels 3 --epochs 600 --patience 600 --no-augment --seed 1");
    code = r.code;
    log = r.out;
  }
};

const Trained& trained() {
  static Trained t;
  return t;
}

struct Setup {
  Setup() { fs::create_directories(kWork); }
} setup_once;

}  // namespace

TEST_CASE("usage errors exit 2") {
  CHECK(run("").code == 2);
  CHECK(run("frobnicate").code == 2);
  CHECK(run("train --data " + q(EPSEG_FIXTURE_DIR) + " --out x.ckpt --bogus").code == 2);
  CHECK(run("train --data " + q(EPSEG_FIXTURE_DIR) + " --out x.ckpt --lr 0").code == 2);
  CHECK(run("train --data " + q(EPSEG_FIXTURE_DIR) + " --out x.ckpt --loss dice").code == 2);
  CHECK(run("train --data " + q(EPSEG_FIXTURE_DIR) + " --out x.ckpt --size 100").code == 2);
  CHECK(run("train --out x.ckpt").code == 2);
  CHECK(run("train --data /definitely/not/here --out x.ckpt").code == 2);
  CHECK(run("infer --ckpt a --image b.png --points 1,2,3,4,5,6 --out p.json").code == 2);
  CHECK(run("infer --ckpt a --image b.png --points 1,2,3,4,5,6,7,x --out p.json").code == 2);
  CHECK(run("eval --data " + q(EPSEG_FIXTURE_DIR) + " --ckpt a --report r.json --threshold 2").code == 2);
  CHECK_FALSE(fs::exists("x.ckpt"));
}

TEST_CASE("--help exits 0 and documents every flag") {
  const auto top = run("--help");
  CHECK(top.code == 0);
  for (const char* sub : {"train", "eval", "infer", "serve", "report"}) CHECK(top.out.find(sub) != std::string::npos);
  const std::map<std::string, std::vector<std::string>> flags{
      {"train", {"--data", "--out", "--ep", "--no-ep", "--loss", "--lr", "--batch", "--epochs", "--seed", "--patience"}},
      {"eval", {"--data", "--ckpt", "--report"}},
      {"infer", {"--ckpt", "--image", "--points", "--out"}},
      {"serve", {"--checkpoint", "--port", "--threshold", "--epsilon", "--margin"}},
      {"report", {"--eval", "--hist"}}};
  for (const auto& [sub, names] : flags) {
    const auto r = run(sub + " --help");
    CHECK(r.code == 0);
    for (const auto& f : names) CHECK_MESSAGE(r.out.find(f) != std::string::npos, sub << " " << f);
  }
  CHECK(run("serve --help").out.find("8601") != std::string::npos);
}

TEST_CASE("runtime and data errors exit 1") {
  const fs::path empty = kWork / "no_masks";
  fs::create_directories(empty);
  std::ofstream(empty / "index.json") << R"({"samples":[{"image":"a.png","class_id":0,"split":"train"}]})";
  const auto r = run("train --data " + q(empty) + " --out " + q(kWork / "nm.ckpt") + " --ep");
  CHECK(r.code == 1);
  CHECK(r.out.find("mask") != std::string::npos);

  CHECK(run("eval --data " + q(EPSEG_FIXTURE_DIR) + " --ckpt " + q(kWork / "missing.ckpt") + " --report " +
            q(kWork / "r.json"))
            .code == 1);
  std::ofstream(kWork / "bad.json") << "{ not a report";
  CHECK(run("report --eval " + q(kWork / "bad.json") + " --hist " + q(kWork / "h.csv")).code == 1);
  CHECK(run("report --eval " + q(kWork / "nope.json") + " --hist " + q(kWork / "h.csv")).code == 1);
}

TEST_CASE("report: empty histogram gives a header-only CSV") {
  std::ofstream(kWork / "empty_report.json")
      << R"({"aiou":0,"miou":0,"iiou":0,"per_class":{},"histogram":{"bin_width":1,"counts":[]}})";
  const auto r = run("report --eval " + q(kWork / "empty_report.json") + " --hist " + q(kWork / "empty.csv"));
  CHECK(r.code == 0);
  CHECK(slurp(kWork / "empty.csv") == "bin_start,count\n");
}

TEST_CASE("train is deterministic given --seed") {
  const std::string common = "train --data " + q(EPSEG_FIXTURE_DIR) +
                             " --size 32 --base-width 4 --levels 3 --epochs 2 --batch 4 --seed 9 --out ";
  REQUIRE(run(common + q(kWork / "d1.ckpt")).code == 0);
  REQUIRE(run(common + q(kWork / "d2.ckpt")).code == 0);
  CHECK(slurp(kWork / "d1.ckpt") == slurp(kWork / "d2.ckpt"));
  CHECK(fs::exists(kWork / "d1.ckpt.history.json"));
  const auto hist = json::parse(slurp(kWork / "d1.ckpt.history.json"));
  CHECK(hist.at("epochs").size() == 2);
}

TEST_CASE("fixture: train, eval, report, infer") {
  const auto& t = trained();
  if (t.code != 0) MESSAGE(t.log);
  REQUIRE(t.code == 0);
  REQUIRE(fs::exists(t.ckpt));

  const fs::path report = kWork / "report.json", report2 = kWork / "report2.json";
  const std::string eval = "eval --data " + q(EPSEG_FIXTURE_DIR) + " --ckpt " + q(t.ckpt) + " --report ";
  const auto e1 = run(eval + q(report));
  REQUIRE(e1.code == 0);
  CHECK(e1.out.find("aIoU") != std::string::npos);
  CHECK(e1.out.find("mIoU") != std::string::npos);
  CHECK(e1.out.find("iIoU") != std::string::npos);
  const auto rep = json::parse(slurp(report));
  MESSAGE("fixture aIoU " << rep.at("aiou").get<double>());
  CHECK(rep.at("aiou").get<double>() >= 0.98);
  CHECK(rep.at("per_class").contains("car"));
  CHECK(rep.at("per_class").contains("person"));

  SUBCASE("eval re-run is byte-identical") {
    REQUIRE(run(eval + q(report2)).code == 0);
    CHECK(slurp(report) == slurp(report2));
  }
  SUBCASE("channel mismatch exits 1") {
    const auto r = run(eval + q(report2) + " --no-ep");
    CHECK(r.code == 1);
    CHECK(r.out.find("model expects extreme points") != std::string::npos);
  }
  SUBCASE("report CSV sums to the predicted boundary-pixel count") {
    const fs::path csv = kWork / "hist.csv";
    REQUIRE(run("report --eval " + q(report) + " --hist " + q(csv)).code == 0);
    std::istringstream lines(slurp(csv));
    std::string line;
    std::getline(lines, line);
    CHECK(line == "bin_start,count");
    double total = 0;
    while (std::getline(lines, line)) {
      const auto comma = line.find(',');
      REQUIRE(comma != std::string::npos);
      CHECK(line.find(',', comma + 1) == std::string::npos);  // dot decimals only
      total += std::stod(line.substr(comma + 1));
    }
    const auto ck = load_checkpoint(t.ckpt);
    const auto index = load_dataset(EPSEG_FIXTURE_DIR);
    const auto samples = load_samples(index, "val", {64, kDefaultMargin, kDefaultEpRadius});
    double boundary_px = 0;
    for (const auto& s : samples) {
      const auto probs = ck.network.forward(make_batch(std::vector<InstanceSample>{s}, true).input);
      boundary_px += static_cast<double>(boundary(tensor_to_mask(probs, 0)).count());
    }
    CHECK(total == boundary_px);
  }
  SUBCASE("infer writes schema-valid, deterministic polygon JSON") {
    const auto index = load_dataset(EPSEG_FIXTURE_DIR);
    const auto& d = index.samples[0];
    const BinaryMask mask = image_to_mask(read_png((fs::path(EPSEG_FIXTURE_DIR) / d.mask).string(), 1));
    const auto ep = extreme_points(mask);
    std::string pts;
    for (const Point& p : ep.as_array()) pts += std::to_string(p.x) + "," + std::to_string(p.y) + ",";
    pts.pop_back();
    const std::string cmd = "infer --ckpt " + q(t.ckpt) + " --image " + q(fs::path(EPSEG_FIXTURE_DIR) / d.image) +
                            " --points " + pts + " --out ";
    const auto r1 = run(cmd + q(kWork / "p1.json"));
    REQUIRE(r1.code == 0);
    CHECK(r1.out.find("ms") != std::string::npos);
    REQUIRE(run(cmd + q(kWork / "p2.json")).code == 0);
    const std::string text = slurp(kWork / "p1.json");
    CHECK(text == slurp(kWork / "p2.json"));
    const auto j = json::parse(text);
    CHECK(j.at("space") == "image");
    const Polygon poly = polygon_from_json(text);
    CHECK(poly.points.size() >= 3);
    CHECK(is_simple(poly));
    const double iou = instance_iou(rasterize(poly, mask.cols(), mask.rows()), mask);
    MESSAGE("infer IoU vs ground truth " << iou);
    CHECK(iou >= 0.9);

    // A degenerate box maps to a runtime error.
    const auto bad = run("infer --ckpt " + q(t.ckpt) + " --image " + q(fs::path(EPSEG_FIXTURE_DIR) / d.image) +
                         " --points 5,5,5,9,5,7,5,8 --out " + q(kWork / "p3.json"));
    CHECK(bad.code == 1);
  }
}

TEST_CASE("serve answers /health and /segment") {
  const auto& t = trained();
  REQUIRE(t.code == 0);
  for (bool with_model : {false, true}) {
    const std::string cmd = "sh -c 'echo $$; exec " + std::string(EPSEG_CLI_PATH) +
                            " serve --host 127.0.0.1 --port 0" +
                            (with_model ? " --checkpoint " + t.ckpt.string() : std::string()) + "'";
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe);
    char buf[512];
    REQUIRE(std::fgets(buf, sizeof buf, pipe));
    const pid_t pid = static_cast<pid_t>(std::stol(buf));
    REQUIRE(std::fgets(buf, sizeof buf, pipe));
    const std::string line = buf;
    const auto colon = line.rfind(':', line.find(" (model"));
    const int port = std::stoi(line.substr(colon + 1));
    httplib::Client cli("127.0.0.1", port);
    const auto h = cli.Get("/health");
    REQUIRE(h);
    CHECK(json::parse(h->body).at("model").at("loaded") == with_model);
    const auto s = cli.Post("/segment", R"({"image":"","extreme_points":[[1,1],[9,1],[5,0],[5,9]]})",
                            "application/json");
    REQUIRE(s);
    CHECK(s->status == (with_model ? 400 : 503));
    kill(pid, SIGTERM);
    pclose(pipe);
  }
}
