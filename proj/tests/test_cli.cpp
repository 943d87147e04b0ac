#include <catch2/catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "sllab/cli_app.hpp"

using namespace sllab;
namespace fs = std::filesystem;

namespace {

struct CliRun {
    int code = -1;
    std::string out;  // captured stdout
    std::string err;  // captured stderr
};

// run_cli in-process with stdout/stderr captured so test output stays clean
CliRun run(std::vector<std::string> args) {
    std::ostringstream out, err;
    auto* old_out = std::cout.rdbuf(out.rdbuf());
    auto* old_err = std::cerr.rdbuf(err.rdbuf());
    CliRun r;
    try {
        r.code = run_cli(std::move(args));
    } catch (...) {
        std::cout.rdbuf(old_out);
        std::cerr.rdbuf(old_err);
        throw;
    }
    std::cout.rdbuf(old_out);
    std::cerr.rdbuf(old_err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

fs::path fresh_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("sllab_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

std::string slurp(const fs::path& p) {
    std::ifstream f(p);
    REQUIRE(f.good());
    std::ostringstream os;
    os << f.rdbuf();
    return os.str();
}

std::size_t line_count(const std::string& text) {
    std::size_t n = 0;
    for (char c : text) n += (c == '\n');
    return n;
}

// key=value scrape out of a report line
double field(const std::string& text, const std::string& key) {
    const auto pos = text.find(key + "=");
    REQUIRE(pos != std::string::npos);
    return std::stod(text.substr(pos + key.size() + 1));
}

std::vector<std::string> synth_args(const fs::path& out, std::uint64_t seed,
                                    std::size_t per_class) {
    return {"synth",       "--classes",   "2",  "--class-vocab",
            "20",          "--shared-vocab", "8", "--min-len",
            "4",           "--max-len",   "8",  "--per-class",
            std::to_string(per_class),    "--seed", std::to_string(seed),
            "--out",       out.string()};
}

// tiny but trainable model on the synth corpus above
std::vector<std::string> train_args(const fs::path& data, const fs::path& out,
                                    const std::string& extra_variant = "HSVAE") {
    return {"train",
            "--corpus",
            (data / "corpus.tsv").string(),
            "--vocab",
            (data / "vocab.txt").string(),
            "--variant",
            extra_variant,
            "--latent-dim",
            "6",
            "--hidden-dim",
            "16",
            "--embed-dim",
            "8",
            "--epochs",
            "2",
            "--batch",
            "8",
            "--lr",
            "0.01",
            "--seed",
            "3",
            "--out",
            out.string()};
}

}  // namespace

TEST_CASE("help and usage errors") {
    CHECK(run({"--help"}).code == 0);
    CHECK(run({"train", "--help"}).code == 0);
    const CliRun help = run({"synth", "--help"});
    CHECK(help.code == 0);
    // flag help names the config key it maps to
    CHECK(help.out.find("[synth.seed]") != std::string::npos);

    CHECK(run({}).code != 0);                   // subcommand required
    CHECK(run({"no-such-command"}).code != 0);  // unknown subcommand
    CHECK(run({"synth", "--bogus-flag", "3"}).code != 0);
    CHECK(run({"train"}).code != 0);  // missing required --corpus/--vocab
}

TEST_CASE("unknown config key fails naming the key") {
    const fs::path dir = fresh_dir("badcfg");
    std::ofstream(dir / "run.cfg") << "model.psi = 0.3\nbogus.key = 1\n";
    const CliRun r =
        run({"synth", "--config", (dir / "run.cfg").string(), "--out", dir.string()});
    CHECK(r.code == 1);
    CHECK(r.err.find("bogus.key") != std::string::npos);
}

TEST_CASE("config file values apply and flags override them") {
    const fs::path dir = fresh_dir("cfgprec");
    std::ofstream(dir / "run.cfg") << "synth.per_class = 5\nsynth.seed = 7\n";

    const fs::path a = dir / "a";
    const CliRun ra = run({"synth", "--config", (dir / "run.cfg").string(), "--out",
                           a.string()});
    REQUIRE(ra.code == 0);
    CHECK(field(ra.out, "sentences") == 10.0);  // 2 classes x 5 from the file

    const fs::path b = dir / "b";
    const CliRun rb = run({"synth", "--config", (dir / "run.cfg").string(), "--per-class",
                           "9", "--out", b.string()});
    REQUIRE(rb.code == 0);
    CHECK(field(rb.out, "sentences") == 18.0);  // flag wins over the file
}

TEST_CASE("synth output is byte-identical for a fixed seed") {
    const fs::path a = fresh_dir("synth_a");
    const fs::path b = fresh_dir("synth_b");
    REQUIRE(run(synth_args(a, 7, 30)).code == 0);
    REQUIRE(run(synth_args(b, 7, 30)).code == 0);
    CHECK(slurp(a / "corpus.tsv") == slurp(b / "corpus.tsv"));
    CHECK(slurp(a / "vocab.txt") == slurp(b / "vocab.txt"));

    const fs::path c = fresh_dir("synth_c");
    REQUIRE(run(synth_args(c, 8, 30)).code == 0);
    CHECK(slurp(a / "corpus.tsv") != slurp(c / "corpus.tsv"));
}

TEST_CASE("preprocess cleans, builds a vocabulary, and reports stats") {
    const fs::path dir = fresh_dir("prep");
    std::ofstream(dir / "raw.txt")
        << "Hello WORLD this is FINE\n"
        << "\n"                                    // dropped
        << "\xe2\x98\x95\n"                        // cleans to nothing -> dropped
        << "hello again http://spam.example ok\n";
    const CliRun r = run({"preprocess", "--input", (dir / "raw.txt").string(), "--out",
                          dir.string()});
    REQUIRE(r.code == 0);
    CHECK(field(r.out, "sentences") == 2.0);
    CHECK(field(r.out, "dropped_empty") == 2.0);
    CHECK(slurp(dir / "stats.txt") == r.out);
    const std::string corpus = slurp(dir / "corpus.tsv");
    CHECK(corpus.find("hello world this is fine") != std::string::npos);
    CHECK(corpus.find("http") == std::string::npos);
    const std::string vocab = slurp(dir / "vocab.txt");
    CHECK(vocab.find("hello") != std::string::npos);

    // labeled lines must be all-or-nothing
    std::ofstream(dir / "mixed.txt") << "1\tlabeled line\nplain line\n";
    const CliRun bad = run({"preprocess", "--input", (dir / "mixed.txt").string(), "--out",
                            dir.string()});
    CHECK(bad.code == 1);
    CHECK(bad.err.find("mixed") != std::string::npos);
}

TEST_CASE("train / eval-hoyer / classify / analysis pipeline") {
    const fs::path data = fresh_dir("pipe_data");
    REQUIRE(run(synth_args(data, 7, 40)).code == 0);

    const fs::path rundir = fresh_dir("pipe_run");
    const CliRun tr = run(train_args(data, rundir));
    REQUIRE(tr.code == 0);
    CHECK(fs::exists(rundir / "model.ckpt"));
    CHECK(fs::exists(rundir / "train_log.txt"));
    CHECK(tr.out.find("epoch=1 ") != std::string::npos);
    CHECK(line_count(slurp(rundir / "train_log.txt")) == 2);

    SECTION("training twice gives a byte-identical checkpoint and log") {
        const fs::path again = fresh_dir("pipe_run2");
        REQUIRE(run(train_args(data, again)).code == 0);
        CHECK(slurp(rundir / "model.ckpt") == slurp(again / "model.ckpt"));
        CHECK(slurp(rundir / "train_log.txt") == slurp(again / "train_log.txt"));
    }

    SECTION("eval-hoyer writes a parsable report and optional code dump") {
        const CliRun ev = run({"eval-hoyer", "--ckpt", (rundir / "model.ckpt").string(),
                               "--corpus", (data / "corpus.tsv").string(), "--vocab",
                               (data / "vocab.txt").string(), "--seed", "1",
                               "--dump-codes", "--out", rundir.string()});
        REQUIRE(ev.code == 0);
        const std::string rep = slurp(rundir / "hoyer.txt");
        CHECK(rep == ev.out);
        const double ah = field(rep, "average_hoyer");
        CHECK(ah >= 0.0);
        CHECK(ah <= 1.0);
        CHECK(field(rep, "codes") == 80.0);
        CHECK(field(rep, "reconstruction") < 0.0);
        CHECK(line_count(slurp(rundir / "codes.csv")) == 80);

        // posterior-sample mode differs but stays in range
        const CliRun ev2 = run({"eval-hoyer", "--ckpt", (rundir / "model.ckpt").string(),
                                "--corpus", (data / "corpus.tsv").string(), "--vocab",
                                (data / "vocab.txt").string(), "--seed", "1", "--mode",
                                "posterior-sample", "--out", rundir.string()});
        REQUIRE(ev2.code == 0);
        CHECK(ev2.out.find("mode=posterior-sample") != std::string::npos);
    }

    SECTION("classify probe and simple baseline emit report lines") {
        const CliRun pr = run({"classify", "--ckpt", (rundir / "model.ckpt").string(),
                               "--corpus", (data / "corpus.tsv").string(), "--vocab",
                               (data / "vocab.txt").string(), "--classes", "2", "--epochs",
                               "2", "--batch", "8", "--lr", "0.005", "--holdout", "0.2",
                               "--seed", "11", "--out", rundir.string()});
        REQUIRE(pr.code == 0);
        const std::string probe = slurp(rundir / "probe.txt");
        CHECK(probe.find("variant=HSVAE") != std::string::npos);
        CHECK(probe.find("K=5") != std::string::npos);
        const double acc = field(probe, "accuracy");
        CHECK(acc >= 0.0);
        CHECK(acc <= 1.0);

        const CliRun sr = run({"classify", "--simple", "--corpus",
                               (data / "corpus.tsv").string(), "--vocab",
                               (data / "vocab.txt").string(), "--classes", "2",
                               "--latent-dim", "6", "--hidden-dim", "16", "--embed-dim",
                               "8", "--epochs", "2", "--batch", "8", "--lr", "0.01",
                               "--seed", "11", "--out", rundir.string()});
        REQUIRE(sr.code == 0);
        CHECK(slurp(rundir / "simple.txt").find("variant=simple") != std::string::npos);
    }

    SECTION("analyze-gamma and class-kl write square CSV artifacts") {
        const CliRun ag = run({"analyze-gamma", "--ckpt", (rundir / "model.ckpt").string(),
                               "--corpus", (data / "corpus.tsv").string(), "--vocab",
                               (data / "vocab.txt").string(), "--out", rundir.string()});
        REQUIRE(ag.code == 0);
        const std::string gamma_csv = slurp(rundir / "gamma_class.csv");
        CHECK(gamma_csv.rfind("class,0,1,2,3,4,5\n", 0) == 0);
        CHECK(line_count(gamma_csv) == 3);  // header + one row per class
        const std::string dist_csv = slurp(rundir / "pattern_distance.csv");
        CHECK(dist_csv.rfind("class,0,1\n", 0) == 0);
        CHECK(line_count(dist_csv) == 3);

        const CliRun ck = run({"class-kl", "--corpus", (data / "corpus.tsv").string(),
                               "--vocab", (data / "vocab.txt").string(), "--out",
                               rundir.string()});
        REQUIRE(ck.code == 0);
        const std::string kl_csv = slurp(rundir / "class_kl.csv");
        CHECK(kl_csv.rfind("class,0,1\n", 0) == 0);
        // diagonal entries are exactly zero
        CHECK(kl_csv.find("\n0,0,") != std::string::npos);
        CHECK(field(ck.out, "mean_off_diagonal") > 0.0);
    }

    SECTION("demo-decode is seed-deterministic") {
        const CliRun d1 = run({"demo-decode", "--ckpt", (rundir / "model.ckpt").string(),
                               "--vocab", (data / "vocab.txt").string(), "--seed", "5",
                               "--num", "4", "--out", rundir.string()});
        REQUIRE(d1.code == 0);
        const std::string first = slurp(rundir / "samples.txt");
        CHECK(line_count(first) == 4);
        const CliRun d2 = run({"demo-decode", "--ckpt", (rundir / "model.ckpt").string(),
                               "--vocab", (data / "vocab.txt").string(), "--seed", "5",
                               "--num", "4", "--out", rundir.string()});
        REQUIRE(d2.code == 0);
        CHECK(slurp(rundir / "samples.txt") == first);
    }

    SECTION("stale checkpoint against the wrong vocabulary is a contract error") {
        const fs::path other = fresh_dir("pipe_other");
        auto args = synth_args(other, 9, 20);
        args[4] = "33";  // different class vocab -> different vocabulary size
        REQUIRE(run(args).code == 0);
        const CliRun bad = run({"eval-hoyer", "--ckpt", (rundir / "model.ckpt").string(),
                                "--corpus", (other / "corpus.tsv").string(), "--vocab",
                                (other / "vocab.txt").string(), "--out", other.string()});
        CHECK(bad.code == 1);
        CHECK(bad.err.find("vocabulary") != std::string::npos);
    }
}

TEST_CASE("exit code 2 marks numeric failures") {
    const fs::path data = fresh_dir("numeric_data");
    REQUIRE(run(synth_args(data, 7, 20)).code == 0);
    auto args = train_args(data, fresh_dir("numeric_run"), "VAE");
    for (std::size_t i = 0; i + 1 < args.size(); ++i) {
        if (args[i] == "--lr") args[i + 1] = "1e160";  // guaranteed overflow
    }
    const CliRun r = run(args);
    CHECK(r.code == 2);
    CHECK(r.err.find("consecutive") != std::string::npos);
}

TEST_CASE("gradcheck subcommand reports per-case lines and exits clean") {
    const CliRun r = run({"gradcheck", "--seed", "4"});
    CHECK(r.code == 0);
    CHECK(r.out.find("PASS matmul") != std::string::npos);
    CHECK(r.out.find("PASS sampler/beta-implicit") != std::string::npos);
    CHECK(r.out.find("PASS objective/HSVAE") != std::string::npos);
    CHECK(r.out.find("FAIL") == std::string::npos);
}
