#include "auxq/checkpoint.hpp"
#include "auxq/errors.hpp"
#include "auxq/trainer.hpp"
#include "testing.hpp"

#include <gtest/gtest.h>

#include <cstring>
#include <fstream>

using namespace auxq;
using auxq::testing::synthetic_net;
using auxq::testing::synthetic_spec;
using auxq::testing::tiny_spec;

namespace {

std::uint64_t le(const std::vector<std::uint8_t>& b, std::size_t at, int bytes)
{
    std::uint64_t v = 0;
    for (int i = bytes - 1; i >= 0; --i) v = (v << 8) | b[at + static_cast<std::size_t>(i)];
    return v;
}

Checkpoint sample_checkpoint()
{
    Network<double> net(tiny_spec(), 3);
    auto rng = make_stream(3, "ckpt");
    Tape<double> tape;
    net.forward(tape, tape.constant(auxq::testing::random_tensor<double>({4, 1, 8, 8}, rng)), Mode::Train);
    Checkpoint c;
    c.network = net.spec();
    capture_network(c, net);
    c.epoch = 2;
    c.step = 17;
    c.rng["shuffle"] = "1 2 3";
    c.extra = {{"note", "x"}};
    return c;
}

template <typename T>
void expect_same_params(Network<T>& a, Network<T>& b)
{
    ASSERT_EQ(a.parameters().size(), b.parameters().size());
    for (std::size_t i = 0; i < a.parameters().size(); ++i)
        EXPECT_TRUE(bit_equal(a.parameters()[i].value, b.parameters()[i].value)) << a.parameters()[i].name;
    for (std::size_t i = 0; i < a.batchnorm_states().size(); ++i) {
        EXPECT_TRUE(bit_equal(a.batchnorm_states()[i].running_mean, b.batchnorm_states()[i].running_mean));
        EXPECT_TRUE(bit_equal(a.batchnorm_states()[i].running_var, b.batchnorm_states()[i].running_var));
    }
}

}  // namespace

TEST(CheckpointFormat, DocumentedByteLayout)
{
    const auto c = sample_checkpoint();
    const auto bytes = encode_checkpoint(c);
    ASSERT_GE(bytes.size(), 20u);
    EXPECT_EQ(std::memcmp(bytes.data(), "AUXQCKPT", 8), 0);
    EXPECT_EQ(le(bytes, 8, 4), kCheckpointVersion);
    const auto hlen = le(bytes, 12, 8);
    const auto header = nlohmann::json::parse(bytes.begin() + 20, bytes.begin() + 20 + static_cast<long>(hlen));
    EXPECT_EQ(header.at("endianness"), "little");
    EXPECT_EQ(header.at("dtype"), "f64");
    const std::size_t payload = (20 + hlen + 7) / 8 * 8;
    for (std::size_t i = 20 + hlen; i < payload; ++i) EXPECT_EQ(bytes[i], 0);
    EXPECT_EQ(bytes.size(), payload + header.at("payload_bytes").get<std::size_t>());

    // every tensor decodes from its documented offset
    for (const auto& t : header.at("tensors")) {
        const auto* rec = c.find(t.at("name").get<std::string>(), t.at("role").get<std::string>());
        ASSERT_NE(rec, nullptr);
        const auto off = payload + t.at("offset").get<std::size_t>();
        ASSERT_EQ(t.at("nbytes").get<std::size_t>(), rec->values.size() * 8);
        for (std::size_t i = 0; i < rec->values.size(); ++i) {
            const std::uint64_t bits = le(bytes, off + 8 * i, 8);
            double v;
            std::memcpy(&v, &bits, 8);
            ASSERT_EQ(v, rec->values[i]);
        }
    }
}

TEST(CheckpointFormat, RoundTripThroughFile)
{
    const auto c = sample_checkpoint();
    const auto path = auxq::testing::temp_dir("ckpt_rt") / "a.ckpt";
    save_checkpoint(c, path);
    const auto d = load_checkpoint(path);
    EXPECT_EQ(encode_checkpoint(d), encode_checkpoint(c));
    EXPECT_EQ(d.epoch, 2u);
    EXPECT_EQ(d.step, 17u);
    EXPECT_EQ(d.rng.at("shuffle"), "1 2 3");
    EXPECT_EQ(d.extra.at("note"), "x");
    EXPECT_EQ(to_json(d.network), to_json(c.network));

    Network<double> fresh(tiny_spec(), 99);
    auto loaded = network_from_checkpoint<double>(d);
    restore_network(c, fresh);
    expect_same_params(fresh, loaded);
}

TEST(CheckpointFormat, SinglePrecisionPayload)
{
    Network<float> net(tiny_spec(), 4);
    Checkpoint c;
    c.dtype = Precision::F32;
    c.network = net.spec();
    capture_network(c, net);
    const auto bytes = encode_checkpoint(c);
    const auto back = decode_checkpoint(bytes);
    auto loaded = network_from_checkpoint<float>(back);
    expect_same_params(net, loaded);
    const auto wide = encode_checkpoint(sample_checkpoint());
    EXPECT_LT(bytes.size(), wide.size());
}

TEST(CheckpointFormat, DamagedFilesAreRejected)
{
    const auto bytes = encode_checkpoint(sample_checkpoint());
    for (std::size_t cut : {std::size_t{0}, std::size_t{7}, std::size_t{19}, std::size_t{40}, bytes.size() - 1}) {
        std::vector<std::uint8_t> part(bytes.begin(), bytes.begin() + static_cast<long>(cut));
        EXPECT_THROW(decode_checkpoint(part), FormatError) << cut;
    }
    auto bad_version = bytes;
    bad_version[8] = 2;
    try {
        decode_checkpoint(bad_version);
        FAIL();
    } catch (const FormatError& e) {
        EXPECT_NE(std::string(e.what()).find("version 2"), std::string::npos) << e.what();
    }
    auto bad_magic = bytes;
    bad_magic[0] = 'X';
    EXPECT_THROW(decode_checkpoint(bad_magic), FormatError);
    EXPECT_THROW(load_checkpoint("/nonexistent/x.ckpt"), UsageError);
}

TEST(CheckpointFormat, RestoreChecksNamesAndShapes)
{
    auto c = sample_checkpoint();
    Network<double> other(tiny_spec(BlockKind::Residual, 1, 5), 0);
    EXPECT_THROW(restore_network(c, other), FormatError);
    c.tensors.erase(c.tensors.begin());
    Network<double> same(tiny_spec(), 0);
    EXPECT_THROW(restore_network(c, same), FormatError);
}

TEST(CheckpointResume, EpochBoundaryIsBitExact)
{
    const auto data = load_dataset(synthetic_spec(SynthKind::Spirals, 3, 96, 48));
    TrainConfig cfg = TrainConfig::pretrain_defaults();
    cfg.epochs = 2;
    cfg.batch_size = 16;
    cfg.precision = Precision::F64;
    auto a = Trainer<double>::pretraining(synthetic_net(3), cfg, data);
    a.run_epoch();
    const auto saved = decode_checkpoint(encode_checkpoint(a.checkpoint()));
    a.run_epoch();
    auto b = Trainer<double>::resume(saved, data);
    EXPECT_EQ(b.epoch(), 1u);
    b.run_epoch();
    expect_same_params(a.network(), b.network());
    EXPECT_TRUE(same_measurements(*a.metrics().find(2, "test"), *b.metrics().find(2, "test")));
    EXPECT_EQ(encode_checkpoint(a.checkpoint()), encode_checkpoint(b.checkpoint()));
}

TEST(CheckpointResume, MidEpochAuxiliaryRunIsBitExact)
{
    const auto data = load_dataset(synthetic_spec(SynthKind::Blobs, 3, 96, 48));
    TrainConfig pre = TrainConfig::pretrain_defaults();
    pre.epochs = 1;
    pre.batch_size = 32;
    pre.precision = Precision::F64;
    const auto base = pretrain(synthetic_net(3), data, pre).checkpoint;

    TrainConfig cfg = TrainConfig::finetune_defaults();
    cfg.method = Method::Auxi;
    cfg.epochs = 2;
    cfg.batch_size = 16;
    cfg.precision = Precision::F64;
    cfg.max_steps = 3;
    const auto aux = AuxiliarySpec::for_backbone(synthetic_net(3), 1, 8);
    auto a = Trainer<double>::finetuning(base, cfg, data, aux);
    a.run();
    ASSERT_EQ(a.steps(), 3u);
    ASSERT_EQ(a.epoch(), 0u);
    const auto saved = decode_checkpoint(encode_checkpoint(a.checkpoint()));
    auto b = Trainer<double>::resume(saved, data);
    ASSERT_NE(b.auxiliary(), nullptr);

    std::vector<std::size_t> idx = {5, 9, 1, 40};
    const auto batch = make_batch<double>(data.train, idx, data.norm);
    a.step(batch, 1e-3);
    b.step(batch, 1e-3);
    expect_same_params(a.network(), b.network());
    for (std::size_t i = 0; i < a.auxiliary()->parameters().size(); ++i)
        EXPECT_TRUE(bit_equal(a.auxiliary()->parameters()[i].value, b.auxiliary()->parameters()[i].value));
}

TEST(CheckpointResume, TeacherAndHeadsSurvive)
{
    const auto data = load_dataset(synthetic_spec(SynthKind::Blobs, 3, 64, 32));
    TrainConfig pre = TrainConfig::pretrain_defaults();
    pre.epochs = 1;
    pre.batch_size = 32;
    pre.precision = Precision::F64;
    const auto base = pretrain(synthetic_net(3), data, pre).checkpoint;
    for (auto method : {Method::Kd, Method::AdditionalLoss}) {
        TrainConfig cfg = TrainConfig::finetune_defaults();
        cfg.method = method;
        cfg.epochs = 1;
        cfg.batch_size = 16;
        cfg.precision = Precision::F64;
        cfg.max_steps = 2;
        auto a = Trainer<double>::finetuning(base, cfg, data, std::nullopt);
        a.run();
        auto b = Trainer<double>::resume(decode_checkpoint(encode_checkpoint(a.checkpoint())), data);
        std::vector<std::size_t> idx = {3, 4, 5};
        const auto batch = make_batch<double>(data.train, idx, data.norm);
        const auto sa = a.step(batch, 1e-3);
        const auto sb = b.step(batch, 1e-3);
        EXPECT_EQ(sa.total_loss, sb.total_loss) << to_string(method);
        expect_same_params(a.network(), b.network());
    }
}
