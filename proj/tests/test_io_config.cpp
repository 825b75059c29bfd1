#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "bpinn/config.hpp"
#include "bpinn/io.hpp"
#include "test_support.hpp"

using namespace bpinn;
namespace fs = std::filesystem;

namespace {

class TempDir : public ::testing::Test {
protected:
    void SetUp() override {
        dir_ = fs::temp_directory_path() /
               ("bpinn_io_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir_);
        fs::create_directories(dir_);
    }
    void TearDown() override { fs::remove_all(dir_); }
    fs::path dir_;
};

Field float_exact_field(std::size_t w, std::size_t h, std::uint64_t seed) {
    auto f = bpinn::testing::random_field(w, h, seed);
    for (auto& v : f.values()) v = static_cast<float>(v);
    return f;
}

template <class E>
std::string what_of(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const E& e) {
        return e.what();
    }
    return "<no exception>";
}

}  // namespace

using FieldIo = TempDir;

TEST_F(FieldIo, RoundTripAndSize) {
    const auto f = float_exact_field(5, 3, 1);
    field_write(dir_ / "a.bpif", f);
    EXPECT_EQ(field_read(dir_ / "a.bpif"), f);
    field_write(dir_ / "b.bpif", Field(2, 2, 0.5));
    EXPECT_EQ(fs::file_size(dir_ / "b.bpif"), 4u + 8u + 16u);  // magic, dimensions, values
    EXPECT_FALSE(fs::exists(dir_ / "b.bpif.tmp"));
}

TEST(FieldFormat, LittleEndianLayout) {
    const auto b = encode_field(Field(1, 1, 1.0));
    const Bytes expect{'B', 'P', 'I', 'F', 1, 0, 0, 0, 1, 0, 0, 0, 0x00, 0x00, 0x80, 0x3f};
    EXPECT_EQ(b, expect);
}

TEST(FieldFormat, CorruptInputsRejected) {
    auto b = encode_field(Field(2, 2, 1.0));
    auto bad = b;
    bad[0] = 'X';
    EXPECT_THROW(decode_field(bad), FormatError);
    auto trunc = b;
    trunc.pop_back();
    EXPECT_THROW(decode_field(trunc), FormatError);
    auto huge = b;
    huge[4] = huge[5] = huge[6] = huge[7] = 0xff;
    huge[8] = huge[9] = huge[10] = huge[11] = 0xff;
    EXPECT_THROW(decode_field(huge), FormatError);
    EXPECT_THROW(decode_field(Bytes{'B', 'P'}), FormatError);
}

TEST(Pgm, ConstantFieldMapsToZero) {
    const auto b = encode_pgm(Field(3, 2, 7.0));
    const std::string header = "P5\n3 2\n255\n";
    ASSERT_EQ(b.size(), header.size() + 6);
    EXPECT_EQ(std::string(b.begin(), b.begin() + header.size()), header);
    for (std::size_t i = header.size(); i < b.size(); ++i) EXPECT_EQ(b[i], 0);
}

TEST(Pgm, MinMaxScaling) {
    const auto b = encode_pgm(Field::from_rows({{-1, 0, 1}}));
    EXPECT_EQ(b[b.size() - 3], 0);
    EXPECT_EQ(b[b.size() - 2], 128);
    EXPECT_EQ(b[b.size() - 1], 255);
}

using CheckpointIo = TempDir;

TEST_F(CheckpointIo, SaveLoadSaveIsBitwiseIdentical) {
    const auto p = init_params(ArchSpec::conv_ed({8, 8}, {8, 8}, 4, 2, 0.1), 3);
    checkpoint_write(dir_ / "m.bpnn", p);
    const auto q = checkpoint_read(dir_ / "m.bpnn");
    EXPECT_EQ(q.values, p.values);
    EXPECT_EQ(q.arch, p.arch);
    checkpoint_write(dir_ / "n.bpnn", q);
    EXPECT_EQ(read_bytes(dir_ / "m.bpnn"), read_bytes(dir_ / "n.bpnn"));
}

TEST_F(CheckpointIo, MissingFileNamed) {
    const auto msg = what_of<FormatError>([&] { checkpoint_read(dir_ / "absent.bpnn"); });
    EXPECT_NE(msg.find("checkpoint not found"), std::string::npos) << msg;
}

TEST(CheckpointFormat, TruncationIsCountMismatch) {
    auto b = encode_checkpoint(init_params(ArchSpec::mlp({4, 4}, {4, 4}, {8}), 1));
    b.resize(b.size() - 9);
    const auto msg = what_of<FormatError>([&] { decode_checkpoint(b); });
    EXPECT_NE(msg.find("count mismatch"), std::string::npos) << msg;
}

TEST(CheckpointFormat, ByteFlipFailsIntegrity) {
    const auto good = encode_checkpoint(init_params(ArchSpec::mlp({4, 4}, {4, 4}, {8}), 1));
    for (std::size_t pos : {good.size() - 20, good.size() / 2, std::size_t{12}}) {
        auto b = good;
        b[pos] ^= 0x01;
        const auto msg = what_of<FormatError>([&] { decode_checkpoint(b); });
        EXPECT_NE(msg.find("CRC-32"), std::string::npos) << pos << ": " << msg;
    }
}

TEST(CheckpointFormat, HeaderErrors) {
    const auto good = encode_checkpoint(init_params(ArchSpec::mlp({4, 4}, {4, 4}, {8}), 1));
    auto magic = good;
    magic[1] = 'Q';
    EXPECT_NE(what_of<FormatError>([&] { decode_checkpoint(magic); }).find("bad magic"), std::string::npos);
    auto ver = good;
    ver[4] = 2;
    EXPECT_NE(what_of<FormatError>([&] { decode_checkpoint(ver); }).find("version mismatch"), std::string::npos);
    EXPECT_EQ(good[4], 1);
    EXPECT_EQ(good[5], 0);
}

TEST(CheckpointFormat, CrcMatchesKnownValue) {
    const std::string s = "123456789";
    EXPECT_EQ(crc32_of(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()), 0xCBF43926u);
}

TEST(TrainLogCsv, HeaderAndRows) {
    TrainLog log;
    for (std::size_t e = 1; e <= 3; ++e) {
        TrainLogRow r;
        r.epoch = e;
        r.train.total = 1.0 / e;
        log.rows.push_back(r);
    }
    const auto csv = train_log_csv(log);
    EXPECT_EQ(csv.substr(0, csv.find('\n')), "epoch,j_nn,j_pi,j_pr,total,val_total,val_psnr,val_ssim,wall_ms");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
    EXPECT_NE(csv.find("\n2,0,0,0,0.5,0,nan,nan,0\n"), std::string::npos) << csv;
}

TEST(Config, MinimalUsesDefaults) {
    const auto c = config_from_json_text(R"({"problem": "restore", "width": 32, "height": 32})");
    const ExperimentConfig d;
    EXPECT_EQ(c.problem, Problem::Restore);
    EXPECT_EQ(c.scene.shape(), (Shape{32, 32}));
    EXPECT_EQ(c.psf_sigma, d.psf_sigma);
    EXPECT_EQ(c.psf_size, d.psf_size);
    EXPECT_EQ(c.v_eps, d.v_eps);
    EXPECT_FALSE(c.v_f.has_value());
    EXPECT_EQ(c.train.mode, TrainMode::Unsupervised);
    EXPECT_EQ(c.n_train, 128u);
    EXPECT_EQ(c.arch.kind, ArchKind::Mlp);
    EXPECT_EQ(c.arch.input, (Shape{32, 32}));
    EXPECT_EQ(c.forward_operator().describe(), d.forward_operator().describe());
}

TEST(Config, SupervisedInferredFromVf) {
    const auto c = config_from_json_text(R"({"problem": "superres", "superres_factor": 2, "v_f": 0.01,
                                             "arch": "conv_ed", "base_channels": 4, "depth": 2})");
    EXPECT_EQ(c.train.mode, TrainMode::Supervised);
    EXPECT_EQ(c.arch.input, (Shape{16, 16}));
    EXPECT_EQ(c.arch.output, (Shape{32, 32}));
    EXPECT_EQ(c.forward_operator().output_shape(), (Shape{16, 16}));
}

TEST(Config, NonDivisibleSuperResFactor) {
    const auto msg = what_of<ValidationError>([] {
        config_from_json_text(R"({"problem": "superres", "superres_factor": 3, "width": 32, "height": 32})");
    });
    EXPECT_NE(msg.find("superres_factor"), std::string::npos) << msg;
}

TEST(Config, DuplicateKeyIsParseError) {
    EXPECT_THROW(config_from_json_text(R"({"problem": "restore", "width": 8, "width": 16})"), ConfigParseError);
}

TEST(Config, ParseErrorReportsLineAndColumn) {
    const auto msg = what_of<ConfigParseError>([] { config_from_json_text("{\n  \"problem\": \"restore\",\n  oops\n}"); });
    EXPECT_NE(msg.find("line 3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("column"), std::string::npos) << msg;
}

TEST(Config, UnknownKeysAndAllViolationsReported) {
    const auto msg = what_of<ValidationError>([] {
        config_from_json_text(R"({"problem": "restore", "learning_rat": 0.1, "v_eps": -1, "psf_size": 4,
                                  "beta_w": 3})");
    });
    for (const char* part : {"unknown key 'learning_rat'", "v_eps", "psf_size", "beta_w"})
        EXPECT_NE(msg.find(part), std::string::npos) << part << " missing from: " << msg;
}

TEST(Config, TypeErrorsAndMissingProblem) {
    const auto msg = what_of<ValidationError>([] { config_from_json_text(R"({"width": "wide"})"); });
    EXPECT_NE(msg.find("'width' must be a non-negative integer"), std::string::npos) << msg;
    EXPECT_NE(msg.find("'problem' is required"), std::string::npos) << msg;
    EXPECT_THROW(config_from_json_text("[1, 2]"), ConfigParseError);
}

TEST(Config, SupervisedModeWithoutVfRejected) {
    EXPECT_THROW(config_from_json_text(R"({"problem": "restore", "mode": "supervised"})"), ValidationError);
}

using ConfigFile = TempDir;

TEST_F(ConfigFile, LoadFromDiskAndMissingFile) {
    std::ofstream(dir_ / "c.json") << R"({"problem": "restore", "width": 16, "height": 16, "max_epochs": 7})";
    const auto c = config_load(dir_ / "c.json");
    EXPECT_EQ(c.train.max_epochs, 7u);
    EXPECT_THROW(config_load(dir_ / "nope.json"), ValidationError);
}
