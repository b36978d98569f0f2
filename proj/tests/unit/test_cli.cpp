#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>

#include <json.hpp>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "cinegen_test_cli";

int run(const std::string& args, const std::string& env = "") {
  fs::create_directories(kRoot);
  const std::string cmd = env + " \"" CINEGEN_CLI "\" -q " + args + " > \"" +
                          (kRoot / "stdout.txt").string() + "\" 2> \"" +
                          (kRoot / "stderr.txt").string() + "\"";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

bool same_tree(const fs::path& a, const fs::path& b) {
  std::size_t n = 0;
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    const fs::path other = b / fs::relative(e.path(), a);
    if (!fs::exists(other) || slurp(e.path()) != slurp(other)) return false;
    ++n;
  }
  std::size_t m = 0;
  for (const auto& e : fs::recursive_directory_iterator(b)) m += e.is_regular_file();
  return n == m && n > 0;
}

fs::path fresh(const std::string& name) {
  const auto p = kRoot / name;
  fs::remove_all(p);
  return p;
}

void write(const fs::path& p, const json& j) {
  fs::create_directories(p.parent_path());
  std::ofstream(p) << j.dump();
}

const std::string kSmall = "--dims 2,64,64,16 --spacing 8,1.5,1.5,0.06";

}  // namespace

TEST_CASE("phantom-gen is byte reproducible") {
  const auto a = fresh("pg_a"), b = fresh("pg_b");
  REQUIRE(run("phantom-gen --n 4 --seed 7 --out " + a.string()) == 0);
  REQUIRE(run("phantom-gen --n 4 --seed 7 --out " + b.string()) == 0);
  CHECK(same_tree(a, b));
  CHECK(fs::exists(a / "resolved_config.json"));
  CHECK(fs::exists(a / "phantom_0003_mask.t4d"));
  const auto c = fresh("pg_c");
  REQUIRE(run("phantom-gen --n 4 --seed 8 --out " + c.string()) == 0);
  CHECK(slurp(a / "phantom_0000.t4d") != slurp(c / "phantom_0000.t4d"));
}

TEST_CASE("evaluate on identical directories gives identity metrics") {
  const auto d = fresh("eval_cohort");
  REQUIRE(run("phantom-gen --n 4 --seed 3 " + kSmall + " --out " + d.string()) == 0);
  const auto report = kRoot / "eval" / "report.json";
  REQUIRE(run("evaluate --real " + d.string() + " --gen " + d.string() +
              " --masks truth --extractor identity-pool --out " + report.string()) == 0);
  const auto j = json::parse(slurp(report));
  CHECK(j.at("FID").get<double>() <= 1e-6);
  CHECK(j.at("Precision").get<double>() == 1.0);
  CHECK(j.at("Recall").get<double>() == 1.0);
  CHECK(fs::exists(kRoot / "eval" / "report.resolved_config.json"));
}

TEST_CASE("config errors list every offending key") {
  const auto cfg = kRoot / "bad.json";
  write(cfg, {{"n", 2}, {"colour", 1}, {"cohort", {{"ef", {0.1}}, {"base", {{"tilt", "steep"}}}}}});
  CHECK(run("phantom-gen --config " + cfg.string() + " --out " + fresh("bad").string()) == 3);
  const auto err = json::parse(slurp(kRoot / "stderr.txt"));
  CHECK(err.at("error") == "config");
  const auto details = err.at("details").dump();
  CHECK(details.find("colour") != std::string::npos);
  CHECK(details.find("cohort.ef") != std::string::npos);
  CHECK(details.find("cohort.base.tilt") != std::string::npos);
  CHECK(err.at("details").size() == 3);

  write(cfg, {{"depth", 2}, {"widht", 16}});
  CHECK(run("dit-train --config " + cfg.string() + " --data " + kRoot.string() + " --out " +
            fresh("bad2").string()) == 3);
  CHECK(run("no-such-command") == 2);
  CHECK(run("phantom-gen --n 2") == 2);
}

TEST_CASE("relative outputs honour the output root variable") {
  const auto root = fresh("root");
  REQUIRE(run("phantom-gen --n 1 " + kSmall + " --out rel/cohort", "CINEGEN_OUTPUT_ROOT=" + root.string()) == 0);
  CHECK(fs::exists(root / "rel" / "cohort" / "phantom_0000.t4d"));
}

TEST_CASE("the pipeline runs end to end through the CLI") {
  const auto data = fresh("pipe_data");
  REQUIRE(run("phantom-gen --n 3 --seed 1 " + kSmall + " --out " + data.string()) == 0);

  const auto vq_cfg = kRoot / "vq.json";
  write(vq_cfg, {{"f", 4}, {"codebook_size", 16}, {"emb", 4}, {"widths", {4, 8, 8}}, {"epochs", 2}});
  const auto vq = fresh("pipe_vq");
  REQUIRE(run("vq-train --config " + vq_cfg.string() + " --data " + data.string() + " --out " + vq.string()) == 0);
  CHECK(fs::exists(vq / "manifest.json"));
  CHECK(fs::exists(vq / "params.t4d"));

  const auto lat = fresh("pipe_lat");
  REQUIRE(run("vq-encode --ckpt " + vq.string() + " --in " + data.string() + " --out " + lat.string()) == 0);
  CHECK(fs::exists(lat / "latent_0002.t4d"));
  const auto dec = fresh("pipe_dec");
  REQUIRE(run("vq-decode --ckpt " + vq.string() + " --in " + lat.string() + " --out " + dec.string()) == 0);
  CHECK(fs::exists(dec / "sample_0000.t4d"));

  const auto dit_cfg = kRoot / "dit.json";
  write(dit_cfg, {{"depth", 1}, {"width", 16}, {"heads", 2}, {"freq_dim", 16}, {"patch", {1, 4, 4, 2}},
                  {"iterations", 20}, {"timesteps", 20}, {"checkpoint_interval", 10}});
  const auto dit = fresh("pipe_dit");
  REQUIRE(run("dit-train --config " + dit_cfg.string() + " --data " + lat.string() + " --out " +
              dit.string() + " --mask slice_factorized") == 0);
  CHECK(json::parse(slurp(dit / "resolved_config.json")).at("params").at("mask") == "slice_factorized");

  const auto s1 = fresh("pipe_s1"), s2 = fresh("pipe_s2");
  REQUIRE(run("dit-sample --ckpt " + dit.string() + " --n 2 --seed 4 --vq " + vq.string() + " --out " + s1.string()) == 0);
  REQUIRE(run("--threads 1 dit-sample --ckpt " + dit.string() + " --n 2 --seed 4 --vq " + vq.string() + " --out " + s2.string()) == 0);
  CHECK(fs::exists(s1 / "samples" / "sample_0001.t4d"));
  CHECK(slurp(s1 / "latent_0000.t4d") == slurp(s2 / "latent_0000.t4d"));
  CHECK(slurp(s1 / "samples" / "sample_0001.t4d") == slurp(s2 / "samples" / "sample_0001.t4d"));

  const auto rep = kRoot / "pipe_report.json";
  REQUIRE(run("evaluate --real " + data.string() + " --gen " + (s1 / "samples").string() + " --masks truth --extractor vq-encoder --vq " +
              vq.string() + " --out " + rep.string()) == 0);
  CHECK(json::parse(slurp(rep)).at("extractor") == "vq-encoder");

  const auto csv = kRoot / "curves" / "c.csv", svg = kRoot / "curves" / "c.svg";
  REQUIRE(run("curves --in " + data.string() + " --masks truth --T 16 --out " + csv.string() + " " + svg.string()) == 0);
  const auto text = slurp(csv);
  CHECK(std::count(text.begin(), text.end(), '\n') == 3 * 16 + 1);
  CHECK(fs::exists(svg));
}
