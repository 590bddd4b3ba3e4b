#include <poll.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "doctest.h"
#include "smewma/io.hpp"
#include "smewma/likelihood.hpp"
#include "smewma/mewma.hpp"
#include "test_support.hpp"

using namespace smewma;

namespace {

struct Outcome {
  int code = -1;
  std::string out;
  std::string err;
};

const std::string& dir() {
  static const std::string d = testing_support::temp_dir("cli");
  return d;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome cli(const std::string& args, const std::string& env = "") {
  const std::string out = dir() + "/stdout.txt";
  const std::string err = dir() + "/stderr.txt";
  const std::string cmd = env + " '" SMEWMA_CLI_PATH "' " + args + " >'" + out + "' 2>'" + err + "'";
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

std::vector<std::string> lines(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

std::vector<std::string> data_lines(const std::string& text) {
  std::vector<std::string> out;
  for (auto& l : lines(text)) {
    if (!l.empty() && l[0] != '#') out.push_back(l);
  }
  return out;
}

std::string payload(const std::string& path) {
  return Json::parse(slurp(path))["result"].dump();
}

std::string csv_body(const std::string& path) {
  std::string out;
  for (auto& l : data_lines(slurp(path))) out += l + "\n";
  return out;
}

std::string simulated_csv(long n, std::uint64_t seed) {
  const std::string path = dir() + "/sim_" + std::to_string(n) + "_" + std::to_string(seed) + ".csv";
  const Outcome o = cli(fmt::format("simulate --n {} --seed {} --out '{}'", n, seed, path));
  REQUIRE(o.code == 0);
  return path;
}

}  // namespace

TEST_CASE("simulate") {
  const std::string a = simulated_csv(500, 3);
  const auto rows = data_lines(slurp(a));
  REQUIRE(rows.size() == 501);
  CHECK(rows[0] == "id,x1,x2,z1,z2,y1,y2,y3,y4");
  CHECK(slurp(a).rfind("# ", 0) == 0);

  const std::string b = dir() + "/sim_again.csv";
  REQUIRE(cli("simulate --n 500 --seed 3 --out '" + b + "'").code == 0);
  CHECK(csv_body(a) == csv_body(b));
  REQUIRE(cli("simulate --n 500 --seed 4 --out '" + b + "'").code == 0);
  CHECK(csv_body(a) != csv_body(b));

  CHECK(cli("simulate --n 0 --out '" + b + "'").code == 2);
  CHECK(cli("simulate --n 10 --shift mean-additive --targets y3 --c 9 --out '" + b + "'").code == 5);
  CHECK(cli("simulate --n 10 --shift mean-odds --targets y3 --c 2 --out '" + b + "'").code == 0);
}

TEST_CASE("fit") {
  const std::string data = simulated_csv(500, 11);
  const std::string report = dir() + "/fit.json";
  const Outcome o = cli("fit --data '" + data + "' --out '" + report + "'");
  REQUIRE(o.code == 0);
  const Json j = Json::parse(slurp(report));
  const Json& coefs = j["result"]["coefficients"];
  REQUIRE(coefs.size() == 17);
  for (const auto& c : coefs) {
    CHECK(std::isfinite(c["estimate"].get<double>()));
    CHECK(std::isfinite(c["std_error"].get<double>()));
    CHECK(c["std_error"].get<double>() > 0.0);
  }
  CHECK(j["manifest"]["command"] == "fit");

  // the CLI agrees with the library on the same rows
  const Model m = default_delivery_model();
  const auto records = read_patient_csv_file(data, m.spec);
  const FitResult fit = fit_mle(m.spec, records, m.params);
  for (const auto& c : coefs) {
    CHECK(c["estimate"].get<double>() == fit.theta[c["name"].get<std::string>()]);
  }

  // fitted parameters feed back in through --params
  CHECK(cli("simulate --n 5 --params '" + report + "' --out '" + dir() + "/p.csv'").code == 0);

  const std::string missing = dir() + "/missing_y3.csv";
  write_text_file(missing, "x1,x2,z1,z2,y1,y2,y4\n0,0,0,0,0,0,0\n");
  const Outcome bad = cli("fit --data '" + missing + "' --out '" + report + "'");
  CHECK(bad.code == 2);
  CHECK(bad.err.find("y3") != std::string::npos);

  const std::string empty = dir() + "/empty.csv";
  write_text_file(empty, "");
  CHECK(cli("fit --data '" + empty + "' --out '" + report + "'").code == 2);

  const std::string malformed = dir() + "/malformed.csv";
  write_text_file(malformed, "x1,x2,z1,z2,y1,y2,y3,y4\n0,0,0,0,0,0,0,0\n0,0,3,0,0,0,0,0\n");
  const Outcome mo = cli("fit --data '" + malformed + "' --out '" + report + "'");
  CHECK(mo.code == 2);
  CHECK(mo.err.find("line 3") != std::string::npos);

  // every y2 row is 1: the y2 block separates
  const std::string sep = dir() + "/separated.csv";
  std::string text = "x1,x2,z1,z2,y1,y2,y3,y4\n";
  for (int i = 0; i < 40; ++i) {
    text += fmt::format("{},{},{},{},{},1,{},{}\n", i % 2, int{i % 3 == 0}, int{i % 5 == 0}, int{i % 4 < 2},
                        int{i % 6 == 1 || i % 9 == 4}, int{i % 8 == 3 || i % 11 == 2}, int{i % 7 == 0 || i % 5 == 3});
  }
  write_text_file(sep, text);
  const Outcome so = cli("fit --data '" + sep + "' --out '" + report + "'");
  CHECK(so.code == 3);
  CHECK(so.err.find("y2") != std::string::npos);

  CHECK(cli("fit --data '" + dir() + "/nope.csv' --out '" + report + "'").code == 2);
  CHECK(cli("fit --bogus").code == 2);
}

TEST_CASE("calibrate") {
  const std::string a = dir() + "/cal_a.json";
  const std::string b = dir() + "/cal_b.json";
  const std::string args = "calibrate --target-arl 40 --reps 600 --seed 5 --threads 2 --out ";
  REQUIRE(cli(args + "'" + a + "'").code == 0);
  REQUIRE(cli(args + "'" + b + "'").code == 0);
  CHECK(payload(a) == payload(b));

  const Json j = Json::parse(slurp(a));
  const Json& res = j["result"];
  CHECK(res["h"].get<double>() > 0.0);
  CHECK(std::abs(res["achieved_arl"]["mean_rl"].get<double>() - 40.0) / 40.0 <= 0.02);
  CHECK(res["config"]["r"] == 0.1);
  CHECK(j["manifest"]["seed"] == 5);

  CHECK(cli("calibrate --target-arl 1 --out '" + a + "x'").code == 2);
  CHECK(cli("calibrate --target-arl 200 --max-rl 50 --reps 100 --out '" + a + "x'").code == 4);

  // a calibration file supplies h and r to later commands
  const std::string data = simulated_csv(60, 2);
  const Outcome mon = cli("monitor --calibration '" + a + "' --data '" + data + "'");
  CHECK(mon.code == 0);
  CHECK(mon.out.find(res["h"].dump()) != std::string::npos);
}

TEST_CASE("study") {
  const std::string out = dir() + "/study.csv";
  const std::string plot = dir() + "/plot.csv";
  const Outcome o = cli("study --h 60 --shift mean-odds --targets Y3 --c-grid 0.2,1.0,4.0 --reps 300 --seed 2 --out '" +
                        out + "' --emit-plot-data '" + plot + "'");
  REQUIRE(o.code == 0);
  const auto rows = data_lines(slurp(out));
  REQUIRE(rows.size() == 4);
  CHECK(rows[0] == "shift_kind,targets,c,mean_rl,std_error,reps,censored");
  CHECK(rows[2].rfind("mean-odds,y3,1,", 0) == 0);
  const auto plot_rows = data_lines(slurp(plot));
  REQUIRE(plot_rows.size() == 4);
  CHECK(plot_rows[0] == "c,mean_rl,ci_low,ci_high");

  // odds ratio 1 is the in-control process: identical to a null coefficient shift
  const std::string null_out = dir() + "/study_null.csv";
  REQUIRE(cli("study --h 60 --shift coefficient --targets beta24 --c-grid 0 --reps 300 --seed 2 --out '" + null_out +
              "'")
              .code == 0);
  const auto null_rows = data_lines(slurp(null_out));
  auto field = [](const std::string& row, int k) {
    std::istringstream in(row);
    std::string f;
    for (int i = 0; i <= k; ++i) std::getline(in, f, ',');
    return f;
  };
  CHECK(field(rows[2], 3) == field(null_rows[1], 3));

  const Outcome bad = cli("study --h 60 --shift coefficient-pair --targets beta23,beta24,gamma99 --c-grid 1 --out '" +
                          out + "x'");
  CHECK(bad.code == 5);
  CHECK(cli("study --h 60 --shift mean-additive --targets y3 --c-grid 1,6 --out '" + out + "x'").code == 5);
  CHECK(cli("study --h 60 --shift sideways --targets y3 --c-grid 1 --out '" + out + "x'").code == 5);
  CHECK(cli("study --h 60 --shift coefficient --targets beta24 --c-grid 1:0:1 --out '" + out + "x'").code == 2);

  const std::string pair = dir() + "/pair.csv";
  REQUIRE(cli("study --h 60 --shift coefficient-pair --targets beta24,beta23 --pair-grid --c-grid 0,1 --reps 50 "
              "--seed 2 --out '" + pair + "'")
              .code == 0);
  const auto prow = data_lines(slurp(pair));
  CHECK(prow.size() == 1 + 4 + 4);
  CHECK(prow[0] == "shift_kind,targets,c,mean_rl,std_error,reps,censored,c_first");
}

TEST_CASE("monitor") {
  const Model m = default_delivery_model();
  const std::string data = simulated_csv(100, 21);

  const Outcome quiet = cli("monitor --h 1e9 --data '" + data + "'");
  REQUIRE(quiet.code == 0);
  const auto rows = data_lines(quiet.out);
  REQUIRE(rows.size() == 101);
  CHECK(rows[0] == "t,t2,signal,post_signal");
  for (std::size_t i = 1; i < rows.size(); ++i) CHECK(rows[i].find(",0,0") != std::string::npos);

  // library run_stream on the same file
  const auto records = read_patient_csv_file(data, m.spec);
  const InfoMatrix sigma = expected_score_covariance(m.spec, m.params, m.covariates).sigma;
  const auto chart = std::make_shared<const MewmaChart>(make_chart_config(0.1, 20.0, sigma));
  const auto trace = run_stream(m.spec, m.params, chart, records, StreamOptions{false});
  const Outcome o = cli("monitor --h 20 --data '" + data + "'");
  REQUIRE(o.code == 0);
  const auto out_rows = data_lines(o.out);
  REQUIRE(out_rows.size() == trace.size() + 1);
  bool seen = false;
  for (std::size_t i = 0; i < trace.size(); ++i) {
    long t;
    double t2;
    int signal, post;
    REQUIRE(std::sscanf(out_rows[i + 1].c_str(), "%ld,%lf,%d,%d", &t, &t2, &signal, &post) == 4);
    CHECK(t == trace[i].t);
    CHECK(std::abs(t2 - trace[i].t2) <= 1e-12 * std::max(1.0, std::abs(trace[i].t2)));
    CHECK((signal == 1) == trace[i].signal);
    CHECK((post == 1) == seen);
    seen = seen || trace[i].signal;
  }

  // processing stops at a malformed row, after emitting the rows before it
  const std::string broken = dir() + "/broken.csv";
  write_text_file(broken, "x1,x2,z1,z2,y1,y2,y3,y4\n0,0,0,0,0,0,0,0\n1,1,1,1,1,1,1,1\n0,0\n0,0,0,0,0,0,0,0\n");
  const Outcome b = cli("monitor --h 1e9 --data '" + broken + "'");
  CHECK(b.code == 2);
  CHECK(b.err.find("line 4") != std::string::npos);
  CHECK(data_lines(b.out).size() == 3);
}

TEST_CASE("monitor streams rows before end of input") {
  int to_child[2], from_child[2];
  REQUIRE(pipe(to_child) == 0);
  REQUIRE(pipe(from_child) == 0);
  const pid_t pid = fork();
  REQUIRE(pid >= 0);
  if (pid == 0) {
    dup2(to_child[0], 0);
    dup2(from_child[1], 1);
    close(to_child[1]);
    close(from_child[0]);
    execl(SMEWMA_CLI_PATH, SMEWMA_CLI_PATH, "monitor", "--h", "1e9", static_cast<char*>(nullptr));
    _exit(127);
  }
  close(to_child[0]);
  close(from_child[1]);

  std::string got;
  auto read_until = [&](std::size_t want_rows) {
    while (data_lines(got).size() < want_rows) {
      pollfd p{from_child[0], POLLIN, 0};
      if (poll(&p, 1, 10000) <= 0) return false;
      char buf[4096];
      const ssize_t k = read(from_child[0], buf, sizeof buf);
      if (k <= 0) return false;
      got.append(buf, static_cast<std::size_t>(k));
    }
    return true;
  };
  auto send = [&](const std::string& s) {
    REQUIRE(write(to_child[1], s.data(), s.size()) == static_cast<ssize_t>(s.size()));
  };

  send("x1,x2,z1,z2,y1,y2,y3,y4\n0,1,0,1,0,0,0,0\n");
  CHECK(read_until(2));  // header + first row while stdin is still open
  send("1,0,0,1,1,0,0,0\n");
  CHECK(read_until(3));
  close(to_child[1]);
  int status = 0;
  waitpid(pid, &status, 0);
  close(from_child[0]);
  CHECK(WIFEXITED(status));
  CHECK(WEXITSTATUS(status) == 0);
}

TEST_CASE("rerun from a manifest") {
  const std::string cal = dir() + "/rr_cal.json";
  REQUIRE(cli("calibrate --target-arl 30 --reps 300 --seed 8 --out '" + cal + "'").code == 0);
  const std::string cal2 = dir() + "/rr_cal2.json";
  REQUIRE(cli("rerun '" + cal + "' --out '" + cal2 + "'").code == 0);
  CHECK(payload(cal) == payload(cal2));
  CHECK(cli("rerun '" + cal2 + "' --out '" + cal2 + "x'").code == 0);

  const std::string st = dir() + "/rr_study.csv";
  REQUIRE(cli("study --h 40 --shift coefficient --targets beta24 --c-grid 0.5:1.5:0.5 --reps 100 --seed 3 --out '" + st +
              "'")
              .code == 0);
  const std::string st2 = dir() + "/rr_study2.csv";
  REQUIRE(cli("rerun '" + st + "' --out '" + st2 + "'", "SCORE_MEWMA_THREADS=3").code == 0);
  CHECK(csv_body(st) == csv_body(st2));

  const std::string sim = simulated_csv(30, 77);
  const std::string sim2 = dir() + "/rr_sim.csv";
  REQUIRE(cli("rerun '" + sim + "' --out '" + sim2 + "'").code == 0);
  CHECK(csv_body(sim) == csv_body(sim2));

  const std::string plain = dir() + "/plain.csv";
  write_text_file(plain, "a,b\n");
  CHECK(cli("rerun '" + plain + "' --out '" + plain + "x'").code == 2);
}

TEST_CASE("default model round trip") {
  const std::string path = dir() + "/model.json";
  REQUIRE(cli("default-model --out '" + path + "'").code == 0);
  const Json j = Json::parse(slurp(path));
  CHECK(j["nodes"].size() == 4);
  CHECK(cli("simulate --n 3 --model '" + path + "' --out '" + dir() + "/dm.csv'").code == 0);
  write_text_file(dir() + "/bad_model.json", "{\"nodes\": [], \"extra\": 1}");
  CHECK(cli("simulate --n 3 --model '" + dir() + "/bad_model.json' --out '" + dir() + "/dm.csv'").code == 2);
}
