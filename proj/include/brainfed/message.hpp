#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "brainfed/network.hpp"

namespace brainfed {

enum class MessageKind : std::uint8_t {
    Register = 0,
    UploadShadow = 1,
    BroadcastGlobal = 2,
};

/// Coordinator's sender id in broadcast frames.
constexpr std::uint16_t kCoordinatorId = 0xFFFF;

/// The only thing allowed to cross the client/coordinator boundary. Payloads
/// carry parameter tensors and integer metadata, never samples or targets.
struct ProtocolMessage {
    MessageKind kind = MessageKind::Register;
    std::uint16_t sender = 0;
    std::uint32_t epoch = 0;
    std::uint32_t sample_count = 0;       // Register and UploadShadow frames
    std::vector<std::uint8_t> payload;    // BGCK-encoded ParamSet, may be empty
};

// Wire frame: length u32 (bytes after the length field), kind u8, epoch u32,
// sender u16, then the kind-specific payload: Register carries sample_count
// u32; UploadShadow carries sample_count u32 followed by a BGCK blob;
// BroadcastGlobal carries a BGCK blob.
std::vector<std::uint8_t> encode_frame(const ProtocolMessage& msg);
ProtocolMessage decode_frame(const std::vector<std::uint8_t>& bytes, std::size_t& pos);

/// Append-only byte log of every frame that crossed the boundary.
struct MessageLog {
    std::vector<std::uint8_t> bytes;
    std::size_t frame_count = 0;

    void append(const ProtocolMessage& msg);
    void append_log(const MessageLog& other);
    std::vector<ProtocolMessage> decode_all() const;
};

void save_log(const std::string& path, const MessageLog& log);
MessageLog load_log(const std::string& path);

struct AuditMatch {
    std::size_t pattern_index;
    std::size_t byte_offset;
};

struct AuditReport {
    std::size_t frames_scanned = 0;
    std::size_t bytes_scanned = 0;
    std::vector<AuditMatch> matches;

    bool passed() const { return matches.empty(); }
};

/// Byte-level search (any alignment) for the 8-byte patterns of the given
/// canary values over the whole log.
AuditReport audit_log(const MessageLog& log, const std::vector<double>& canaries);

}  // namespace brainfed
