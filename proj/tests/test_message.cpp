#include <doctest.h>

#include <cstring>

#include "brainfed/checkpoint.hpp"
#include "brainfed/message.hpp"
#include "brainfed/synthdata.hpp"

using namespace brainfed;

namespace {

ParamSet tiny_params() {
    ParamSet params;
    params.layers.push_back({"fc_out", LayerKind::Linear, Tensor({2, 2}, {1, 2, 3, 4}),
                             Tensor({2}, {0.5, 0.25})});
    return params;
}

}  // namespace

TEST_CASE("frames round-trip through the wire encoding") {
    ProtocolMessage msg;
    msg.kind = MessageKind::UploadShadow;
    msg.sender = 3;
    msg.epoch = 17;
    msg.sample_count = 512;
    msg.payload = encode_paramset(tiny_params());

    MessageLog log;
    log.append(msg);
    ProtocolMessage reg;
    reg.kind = MessageKind::Register;
    reg.sender = 1;
    reg.sample_count = 64;
    log.append(reg);

    const auto decoded = log.decode_all();
    REQUIRE(decoded.size() == 2);
    CHECK(decoded[0].kind == MessageKind::UploadShadow);
    CHECK(decoded[0].sender == 3);
    CHECK(decoded[0].epoch == 17);
    CHECK(decoded[0].sample_count == 512);
    CHECK(decoded[0].payload == msg.payload);
    CHECK(decoded[1].kind == MessageKind::Register);
    CHECK(decoded[1].sample_count == 64);
    CHECK(log.frame_count == 2);
}

TEST_CASE("truncated or garbled logs are rejected") {
    MessageLog log;
    ProtocolMessage msg;
    msg.kind = MessageKind::BroadcastGlobal;
    msg.payload = encode_paramset(tiny_params());
    log.append(msg);

    MessageLog truncated = log;
    truncated.bytes.resize(truncated.bytes.size() - 3);
    CHECK_THROWS_AS((void)truncated.decode_all(), format_error);

    MessageLog garbled = log;
    garbled.bytes[4] = 0x7F;  // unknown kind byte
    CHECK_THROWS_AS((void)garbled.decode_all(), format_error);
}

TEST_CASE("audit finds planted patterns at any byte offset") {
    const double canary = -1.8366533210805812;  // arbitrary full-mantissa value
    MessageLog log;
    ProtocolMessage msg;
    msg.kind = MessageKind::BroadcastGlobal;
    msg.payload.assign(64, 0xAB);
    // Plant the canary bytes at an odd offset inside the payload.
    std::memcpy(msg.payload.data() + 9, &canary, sizeof(double));
    log.append(msg);

    const AuditReport report = audit_log(log, {canary});
    CHECK_FALSE(report.passed());
    REQUIRE(report.matches.size() == 1);
    CHECK(report.matches[0].pattern_index == 0);
    CHECK(report.frames_scanned == 1);
    CHECK(report.bytes_scanned == log.bytes.size());
}

TEST_CASE("clean traffic passes the audit") {
    MessageLog log;
    ProtocolMessage msg;
    msg.kind = MessageKind::BroadcastGlobal;
    msg.payload = encode_paramset(tiny_params());
    log.append(msg);

    Rng rng(404);
    std::vector<double> canaries;
    for (int i = 0; i < 16; ++i) canaries.push_back(rng.next_unit() * 6.0 - 3.0);
    CHECK(audit_log(log, canaries).passed());
}

TEST_CASE("a leaky sender trips the audit") {
    // Test double that violates the boundary contract: it puts a raw
    // training row into a frame.
    SyntheticSpec spec;
    spec.num_subjects = 1;
    spec.voxel_dims = {8};
    spec.latent_dim = 4;
    spec.train_per_subject = 16;
    spec.shared_test_count = 4;
    spec.image_dim = 6;
    spec.text_dim = 5;
    const Corpus corpus = generate(spec);

    MessageLog log;
    ProtocolMessage leak;
    leak.kind = MessageKind::UploadShadow;
    leak.sender = 0;
    leak.sample_count = 16;
    const Tensor& x = corpus.subjects[0].x_train;
    leak.payload.resize(x.cols() * sizeof(double));
    std::memcpy(leak.payload.data(), x.data.data(), leak.payload.size());
    log.append(leak);

    const AuditReport report = audit_log(log, corpus.canaries);
    CHECK_FALSE(report.passed());
}

TEST_CASE("log file round-trip") {
    MessageLog log;
    ProtocolMessage msg;
    msg.kind = MessageKind::Register;
    msg.sender = 5;
    msg.sample_count = 99;
    log.append(msg);

    const std::string path = "/tmp/brainfed_test_audit.bin";
    save_log(path, log);
    const MessageLog loaded = load_log(path);
    CHECK(loaded.bytes == log.bytes);
    CHECK(loaded.frame_count == 1);
    std::remove(path.c_str());
}
