#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "ssnet/config.hpp"

namespace fs = std::filesystem;

namespace {

struct Outcome {
    int code = -1;
    std::string out;
    std::string err;
};

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::string> lines_of(const std::string& text)
{
    std::vector<std::string> out;
    std::istringstream is(text);
    for (std::string l; std::getline(is, l);) out.push_back(l);
    return out;
}

std::vector<std::string> split(const std::string& s, char sep)
{
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

class Workspace {
public:
    Workspace() : root_(fs::temp_directory_path() / "ssnet_cli_test")
    {
        fs::remove_all(root_);
        fs::create_directories(root_);
        const char* cli = std::getenv("SSNET_CLI");
        REQUIRE_MESSAGE(cli != nullptr, "SSNET_CLI must point at the ssnet binary");
        cli_ = cli;
    }
    ~Workspace() { fs::remove_all(root_); }

    fs::path path(const std::string& rel) const { return root_ / rel; }

    Outcome run(const std::string& args) const
    {
        const fs::path out = root_ / "stdout.txt", err = root_ / "stderr.txt";
        const std::string cmd = "cd '" + root_.string() + "' && '" + cli_ + "' " + args + " >'" + out.string() +
                                "' 2>'" + err.string() + "'";
        const int status = std::system(cmd.c_str());
        return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
    }

    void write(const std::string& rel, const std::string& text) const { std::ofstream(path(rel)) << text; }

private:
    fs::path root_;
    std::string cli_;
};

const char* tiny_cfg = "train.total_iters = 3\n"
                       "train.eval_every = 0\n"
                       "net.c1 = 4\n"
                       "net.c2 = 8\n"
                       "net.d_proj = 8\n"
                       "net.input_size = 16\n"
                       "infer.patch = 16\n"
                       "infer.stride = 8\n"
                       "data.labeled_fraction = 0.34\n"
                       "data.train_dir = blobs\n";

void check_error_line(const Outcome& o, int code, const std::string& name)
{
    CHECK(o.code == code);
    const auto l = lines_of(o.err);
    REQUIRE(l.size() == 1);
    CHECK(l[0].rfind("error[" + name + "]: ", 0) == 0);
}

} // namespace

TEST_CASE("gen-data writes deterministic corpora")
{
    Workspace ws;
    const Outcome a = ws.run("gen-data --kind blobs --n 4 --size 16 --seed 1 --out a");
    REQUIRE(a.code == 0);
    REQUIRE(ws.run("gen-data --kind blobs --n 4 --size 16 --seed 1 --out b").code == 0);
    const auto manifest = lines_of(slurp(ws.path("a/manifest.txt")));
    CHECK(manifest.size() == 4);
    for (const auto& e : fs::directory_iterator(ws.path("a")))
        CHECK(slurp(e.path()) == slurp(ws.path("b") / e.path().filename()));
    CHECK(fs::exists(ws.path("a/sample_0003_image.ssnt")));
    CHECK(fs::exists(ws.path("a/sample_0003_mask.ssnt")));

    REQUIRE(ws.run("gen-data --kind two-moons --n 1000 --gamma 0.1 --seed 7 --out m").code == 0);
    CHECK(lines_of(slurp(ws.path("m/manifest.txt"))).size() == 1);
    // 7 header bytes, two dims, 3000 floats.
    CHECK(fs::file_size(ws.path("m/moons.ssnt")) == 7 + 8 + 3000 * 4);

    check_error_line(ws.run("gen-data --kind cubes --out c"), 2, "Usage");
    check_error_line(ws.run("gen-data --kind blobs --size 8 --out c"), 2, "InvalidArgument");
}

TEST_CASE("train, eval and embed")
{
    Workspace ws;
    REQUIRE(ws.run("gen-data --kind blobs --n 6 --size 16 --seed 1 --out blobs").code == 0);
    ws.write("tiny.cfg", tiny_cfg);

    SUBCASE("seg_only run writes the three artifacts with empty unsupervised columns")
    {
        const Outcome o = ws.run("train --config tiny.cfg --variant seg_only --out run");
        REQUIRE(o.code == 0);
        CHECK(fs::exists(ws.path("run/checkpoint/manifest.txt")));
        CHECK(fs::exists(ws.path("run/metrics.csv")));
        const auto log = lines_of(slurp(ws.path("run/runlog.csv")));
        REQUIRE(log.size() == 4);
        CHECK(log[0] == "iter,seg,lds,cs,lambda_lds,lambda_cs,lr,ms");
        for (std::size_t i = 1; i < log.size(); ++i) {
            const auto f = split(log[i], ',');
            REQUIRE(f.size() == 8);
            CHECK(f[0] == std::to_string(i - 1));
            CHECK(std::stod(f[2]) == 0.0);
            CHECK(std::stod(f[3]) == 0.0);
        }
    }

    SUBCASE("standalone eval agrees with the training report")
    {
        REQUIRE(ws.run("train --config tiny.cfg --variant full --out run").code == 0);
        REQUIRE(ws.run("eval --checkpoint run/checkpoint --data blobs --out eval.csv").code == 0);
        const auto eval = lines_of(slurp(ws.path("eval.csv")));
        const auto trained = lines_of(slurp(ws.path("run/metrics.csv")));
        CHECK(eval.front() == "sample,class,dice,jaccard,hd95,asd,flags");
        CHECK(eval.size() == 1 + 6 + 2); // one row per (sample, class), class mean, overall
        const double eval_dice = std::stod(split(eval.back(), ',')[2]);
        const double train_dice = std::stod(split(trained.back(), ',')[2]);
        CHECK(eval_dice >= train_dice - 0.05);

        REQUIRE(ws.run("eval --checkpoint run/checkpoint --data blobs --out lcc.csv --lcc").code == 0);
        CHECK(lines_of(slurp(ws.path("lcc.csv"))).size() == eval.size());
    }

    SUBCASE("embedding export")
    {
        REQUIRE(ws.run("train --config tiny.cfg --variant full --out run").code == 0);
        REQUIRE(ws.run("embed --checkpoint run/checkpoint --data blobs --max-points 300 --out e1.tsv").code == 0);
        REQUIRE(ws.run("embed --checkpoint run/checkpoint --data blobs --max-points 300 --out e2.tsv").code == 0);
        CHECK(slurp(ws.path("e1.tsv")) == slurp(ws.path("e2.tsv")));
        const auto rows = lines_of(slurp(ws.path("e1.tsv")));
        REQUIRE(rows.size() == 301);
        const auto header = split(rows[0], '\t');
        CHECK(header.size() == 8 + 3);
        CHECK(header[8] == "label");
        CHECK(header[9] == "pseudo_label");
        CHECK(header[10] == "confidence");
        std::size_t unlabeled = 0;
        for (std::size_t i = 1; i < rows.size(); ++i) {
            const auto f = split(rows[i], '\t');
            REQUIRE(f.size() == 11);
            const int label = std::stoi(f[8]), pseudo = std::stoi(f[9]);
            const double conf = std::stod(f[10]);
            CHECK((label >= -1 && label <= 1));
            CHECK((pseudo == 0 || pseudo == 1));
            CHECK(conf >= 0.5);
            CHECK(conf <= 1.0);
            unlabeled += label == -1;
        }
        CHECK(unlabeled > 0);

        REQUIRE(ws.run("embed --checkpoint run/checkpoint --data blobs --max-points 5000 --labels none --out e3.tsv").code == 0);
        CHECK(lines_of(slurp(ws.path("e3.tsv"))).size() == 1 + 6 * 16 * 16);
        REQUIRE(ws.run("embed --checkpoint run/checkpoint --data blobs --max-points 300 --seed 2 --out e4.tsv").code == 0);
        CHECK(slurp(ws.path("e4.tsv")) != slurp(ws.path("e1.tsv")));
    }

    SUBCASE("failure modes")
    {
        ws.write("bad.cfg", std::string(tiny_cfg) + "adv.epsilom = 3\n");
        const Outcome bad = ws.run("train --config bad.cfg --variant full --out run");
        check_error_line(bad, 2, "BadConfig");
        CHECK(bad.err.find("adv.epsilom") != std::string::npos);
        check_error_line(ws.run("train --config tiny.cfg --variant fancy --out run"), 2, "Usage");
        check_error_line(ws.run("train --config missing.cfg --variant full --out run"), 3, "IoFailure");
        check_error_line(ws.run("eval --checkpoint nowhere --data blobs --out e.csv"), 3, "IoFailure");

        const Outcome nan = ws.run("train --config tiny.cfg --variant full --out run --set train.lr0=1e38 "
                                   "--set train.total_iters=20");
        check_error_line(nan, 4, "NonFiniteValue");
        CHECK(nan.err.find("iteration") != std::string::npos);

        REQUIRE(ws.run("train --config tiny.cfg --variant seg_only --out run").code == 0);
        REQUIRE(ws.run("gen-data --kind two-moons --n 50 --out moons").code == 0);
        check_error_line(ws.run("eval --checkpoint run/checkpoint --data moons --out e.csv"), 5, "ShapeMismatch");
    }
}

TEST_CASE("help lists every flag with its default")
{
    Workspace ws;
    const Outcome top = ws.run("--help");
    CHECK(top.code == 0);
    for (const char* cmd : {"gen-data", "train", "eval", "embed"}) CHECK(top.out.find(cmd) != std::string::npos);

    const Outcome gen = ws.run("gen-data --help");
    CHECK(gen.code == 0);
    for (const char* flag : {"--kind", "--n", "--gamma", "--blur", "--contrast", "--seed", "--out"})
        CHECK(gen.out.find(flag) != std::string::npos);
    CHECK(gen.out.find("[0.15]") != std::string::npos); // gamma default
    CHECK(gen.out.find("[1.5]") != std::string::npos);  // blur default

    const Outcome train = ws.run("train --help");
    CHECK(train.code == 0);
    const ssnet::TrainConfig defaults;
    for (const auto& k : ssnet::config_keys()) {
        INFO(k.name);
        CHECK(train.out.find(k.name) != std::string::npos);
        const std::string value = ssnet::get_config_value(defaults, k.name);
        if (!value.empty()) CHECK(train.out.find(k.name + " = " + value) != std::string::npos);
    }
    const Outcome embed = ws.run("embed --help");
    CHECK(embed.out.find("--max-points UINT [2000]") != std::string::npos);
}

TEST_CASE("dumped config re-parses to an equal config")
{
    Workspace ws;
    ws.write("tiny.cfg", tiny_cfg);
    const Outcome d1 = ws.run("train --config tiny.cfg --set adv.epsilon=0.3 --dump-config");
    REQUIRE(d1.code == 0);
    ws.write("dumped.cfg", d1.out);
    const Outcome d2 = ws.run("train --config dumped.cfg --dump-config");
    REQUIRE(d2.code == 0);
    CHECK(d1.out == d2.out);
    std::istringstream is(d1.out);
    const ssnet::TrainConfig parsed = ssnet::parse_config(is);
    CHECK(parsed.adv.epsilon == 0.3);
    CHECK(parsed.total_iters == 3);
    CHECK(ssnet::dump_config(parsed) == d1.out);
}
