#include <doctest.h>

#include <sstream>

#include "evsseg/cli.hpp"
#include "evsseg/manifest.hpp"
#include "evsseg/stream_io.hpp"
#include "test_util.hpp"

using namespace evsseg;
using testutil::read_file;
using testutil::TempDir;
using testutil::write_file;

namespace {

struct Result {
    int code;
    std::string out, err;
};

Result cli(std::vector<std::string> args) {
    std::ostringstream out, err;
    const int code = run_cli(args, out, err);
    return {code, out.str(), err.str()};
}

std::string p(const std::filesystem::path& path) { return path.string(); }

// Small model so the pipeline tests stay quick.
const char* kSmallConfig = "window=10\ntrunk_ffn=32,16\nseg_head=16,2\n";

}  // namespace

TEST_CASE("synth") {
    TempDir dir;
    const auto a = dir / "a.txt", b = dir / "b.txt";
    REQUIRE(cli({"synth", "--out", p(a), "--events", "5000", "--seed", "7"}).code == 0);
    REQUIRE(cli({"synth", "--out", p(b), "--events", "5000", "--seed", "7"}).code == 0);
    CHECK(read_file(a) == read_file(b));
    CHECK(read_file(p(a) + ".labels") == read_file(p(b) + ".labels"));

    const auto s = parse_event_file(a);
    CHECK(s.header.geometry.width == 346);
    CHECK(s.header.geometry.height == 260);
    CHECK(s.events.size() == 5000);
    CHECK(read_label_file(p(a) + ".labels").lines.size() == 100);

    const auto m = read_manifest(manifest_path_for(a));
    CHECK(m.command == "synth");
    CHECK(m.version == "0.1.0");
    CHECK(m.seed == 7);
    CHECK(m.outputs.size() == 2);

    CHECK(cli({"synth", "--out", p(dir / "z.txt"), "--events", "0"}).code == kExitUsage);
    CHECK(cli({"synth", "--out", p(dir / "bin.evb"), "--events", "300", "--binary"}).code == 0);
    CHECK(parse_event_file(dir / "bin.evb").events.size() == 300);
    CHECK(cli({"synth", "--out", p(dir / "missing" / "x.txt")}).code == kExitData);
}

TEST_CASE("ssl-labels") {
    TempDir dir;
    const auto ev = dir / "ev.txt", csv = dir / "ssl.csv";
    REQUIRE(cli({"synth", "--out", p(ev), "--events", "50025", "--seed", "3"}).code == 0);
    const auto r = cli({"ssl-labels", "--events", p(ev), "--out", p(csv)});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("threshold=") != std::string::npos);

    std::istringstream rows(read_file(csv));
    std::string line;
    std::getline(rows, line);
    CHECK(line == "entropy,label");
    std::size_t n = 0, ones = 0;
    while (std::getline(rows, line)) {
        ++n;
        ones += line.back() == '1';
    }
    CHECK(n == 1000);  // the trailing 25 events do not fill a window
    CHECK(static_cast<double>(ones) / n == doctest::Approx(0.5).epsilon(0.1));

    const auto m = read_manifest(manifest_path_for(csv));
    CHECK(m.results.at("windows") == "1000");
    CHECK(std::stod(m.results.at("threshold")) > 0);

    CHECK(cli({"ssl-labels", "--events", p(ev), "--out", p(csv), "--threshold", "0.999"}).code == kExitData);
    CHECK(cli({"ssl-labels", "--events", p(ev), "--out", p(csv), "--threshold", "half"}).code == kExitData);
    const auto fixed = cli({"ssl-labels", "--events", p(ev), "--out", p(csv), "--threshold", "0.3", "--n", "20"});
    CHECK(fixed.code == 0);
    CHECK(fixed.out.find("threshold=0.29999999999999999") != std::string::npos);
}

TEST_CASE("pretrain, finetune and eval end to end") {
    TempDir dir;
    const auto train = dir / "train.txt", test = dir / "test.txt", cfg = dir / "small.cfg";
    REQUIRE(cli({"synth", "--out", p(train), "--events", "3000", "--seed", "1", "--n", "10"}).code == 0);
    REQUIRE(cli({"synth", "--out", p(test), "--events", "1000", "--seed", "2", "--n", "10"}).code == 0);
    write_file(cfg, std::string(kSmallConfig) + "epochs=4\nbatch_size=16\n");

    const auto pre = dir / "pre.ckpt", ft = dir / "ft.ckpt", ev = dir / "eval.csv";
    auto r = cli({"pretrain", "--events", p(train), "--config", p(cfg), "--out", p(pre), "--epochs", "3"});
    REQUIRE(r.code == 0);
    // flag beats file, file beats default
    auto m = read_manifest(manifest_path_for(pre));
    CHECK(m.settings.at("epochs") == "3");
    CHECK(m.settings.at("batch_size") == "16");
    CHECK(m.settings.at("lr") == "0.001");
    CHECK(m.inputs.size() == 2);
    CHECK(m.model_config.find("trunk_ffn=32,16") != std::string::npos);
    CHECK(read_file(p(pre) + ".history.csv").rfind("epoch,mean_loss,label1_fraction\n0,", 0) == 0);

    r = cli({"finetune", "--checkpoint", p(pre), "--events", p(train), "--labels", p(train) + ".labels", "--out", p(ft),
             "--samples", "200", "--epochs", "2"});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("samples_used=200") != std::string::npos);
    CHECK(load_checkpoint<double>(ft).config.head == HeadKind::SegmentationHead);

    r = cli({"eval", "--checkpoint", p(ft), "--events", p(test), "--labels", p(test) + ".labels", "--out", p(ev),
             "--threads", "2"});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("accuracy=") != std::string::npos);
    CHECK(r.out.find("miou=") != std::string::npos);
    const auto csv = read_file(ev);
    CHECK(csv.rfind("accuracy,miou,tp,fp,fn,tn\n", 0) == 0);
    m = read_manifest(manifest_path_for(ev));
    CHECK(m.inputs.size() == 4);

    SUBCASE("eval agrees with a matching --config") {
        CHECK(cli({"eval", "--checkpoint", p(ft), "--events", p(test), "--labels", p(test) + ".labels", "--out",
                   p(dir / "e2.csv"), "--config", p(cfg)})
                  .code == 0);
        CHECK(read_file(dir / "e2.csv") == csv);
    }
    SUBCASE("eval with a disagreeing --config exits 2") {
        write_file(dir / "other.cfg", "window=10\ntrunk_ffn=64,16\n");
        const auto bad = cli({"eval", "--checkpoint", p(ft), "--events", p(test), "--labels", p(test) + ".labels",
                              "--out", p(dir / "e3.csv"), "--config", p(dir / "other.cfg")});
        CHECK(bad.code == kExitData);
        CHECK(bad.err.find("error:") == 0);
    }
    SUBCASE("finetune refuses a checkpoint that disagrees with --config") {
        write_file(dir / "other.cfg", "window=10\ntrunk_ffn=64,16\n");
        CHECK(cli({"finetune", "--checkpoint", p(pre), "--events", p(train), "--labels", p(train) + ".labels", "--out",
                   p(dir / "x.ckpt"), "--config", p(dir / "other.cfg")})
                  .code == kExitData);
    }
    SUBCASE("random-init finetune") {
        CHECK(cli({"finetune", "--events", p(train), "--labels", p(train) + ".labels", "--out", p(dir / "rnd.ckpt"),
                   "--config", p(cfg), "--epochs", "1"})
                  .code == 0);
    }
    SUBCASE("labels that do not fit the windows") {
        write_file(dir / "few.labels", "1\n0\n");
        CHECK(cli({"eval", "--checkpoint", p(ft), "--events", p(test), "--labels", p(dir / "few.labels"), "--out",
                   p(dir / "e4.csv")})
                  .code == kExitData);
    }
}

TEST_CASE("bench") {
    TempDir dir;
    const auto out = dir / "bench.csv";
    const auto r = cli({"bench", "--runs", "1", "--warmup", "1", "--out", p(out)});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("std_seconds=0 ") != std::string::npos);
    CHECK(r.out.find("param_count=") != std::string::npos);
    CHECK(r.out.find("flops=") != std::string::npos);
    std::istringstream rows(read_file(out));
    std::string header, row;
    std::getline(rows, header);
    std::getline(rows, row);
    CHECK(header == "param_count,flops,mean_seconds,std_seconds,median_seconds,windows_per_second,runs");
    ModelConfig c;
    c.head = HeadKind::SegmentationHead;
    CHECK(row.rfind(std::to_string(count_params(c)) + ",", 0) == 0);
    CHECK(cli({"bench", "--runs", "0", "--out", p(out)}).code == kExitData);
}

TEST_CASE("manifests reproduce runs in 64-bit mode") {
    TempDir dir;
    const auto ev = dir / "ev.txt", cfg = dir / "small.cfg", ckpt = dir / "pre.ckpt";
    REQUIRE(cli({"synth", "--out", p(ev), "--events", "800", "--seed", "5"}).code == 0);
    write_file(cfg, kSmallConfig);
    const std::vector<std::string> args{"pretrain", "--events",  p(ev), "--config", p(cfg), "--out",
                                        p(ckpt),    "--epochs", "2",   "--precision", "64"};
    REQUIRE(cli(args).code == 0);
    const auto first = read_file(ckpt);
    const auto first_hist = read_file(p(ckpt) + ".history.csv");
    const auto manifest = read_file(manifest_path_for(ckpt));

    REQUIRE(cli({"rerun", "--manifest", p(manifest_path_for(ckpt))}).code == 0);
    CHECK(read_file(ckpt) == first);
    CHECK(read_file(p(ckpt) + ".history.csv") == first_hist);
    CHECK(read_file(manifest_path_for(ckpt)) == manifest);

    // a changed input is refused
    REQUIRE(cli({"synth", "--out", p(ev), "--events", "800", "--seed", "6"}).code == 0);
    CHECK(cli({"rerun", "--manifest", p(manifest_path_for(ckpt))}).code == kExitData);
    CHECK(cli({"rerun", "--manifest", p(dir / "none.json")}).code == kExitData);
}

TEST_CASE("exit codes") {
    TempDir dir;
    const auto ev = dir / "ev.txt", cfg = dir / "c.cfg";
    REQUIRE(cli({"synth", "--out", p(ev), "--events", "400", "--seed", "1"}).code == 0);

    CHECK(cli({}).code == kExitUsage);
    CHECK(cli({"frobnicate"}).code == kExitUsage);
    CHECK(cli({"pretrain", "--events", p(ev)}).code == kExitUsage);
    CHECK(cli({"--help"}).code == kExitOk);
    CHECK(cli({"--version"}).out.find("0.1.0") != std::string::npos);

    CHECK(cli({"pretrain", "--events", p(dir / "nope.txt"), "--out", p(dir / "a.ckpt")}).code == kExitData);
    write_file(dir / "bad.txt", "346 260 signed\n10 1 1 1\n5 1 1 1\n");
    CHECK(cli({"ssl-labels", "--events", p(dir / "bad.txt"), "--out", p(dir / "s.csv"), "--n", "1"}).code == kExitData);
    write_file(cfg, "colour=red\n");
    CHECK(cli({"pretrain", "--events", p(ev), "--config", p(cfg), "--out", p(dir / "a.ckpt")}).code == kExitData);
    write_file(cfg, std::string(kSmallConfig) + "precision=16\n");
    CHECK(cli({"pretrain", "--events", p(ev), "--config", p(cfg), "--out", p(dir / "a.ckpt")}).code == kExitData);

    // a learning rate this large overflows the weights after one step
    write_file(cfg, kSmallConfig);
    const auto r = cli({"pretrain", "--events", p(ev), "--config", p(cfg), "--out", p(dir / "a.ckpt"), "--lr", "1e300",
                        "--epochs", "3", "--precision", "64"});
    CHECK(r.code == kExitNumeric);
}
