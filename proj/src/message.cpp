#include "brainfed/message.hpp"

#include <cstring>
#include <fstream>

namespace brainfed {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

std::uint32_t get_u32(const std::vector<std::uint8_t>& buf, std::size_t pos) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[pos + i]) << (8 * i);
    return v;
}

}  // namespace

std::vector<std::uint8_t> encode_frame(const ProtocolMessage& msg) {
    std::vector<std::uint8_t> body;
    body.push_back(static_cast<std::uint8_t>(msg.kind));
    put_u32(body, msg.epoch);
    body.push_back(static_cast<std::uint8_t>(msg.sender & 0xFF));
    body.push_back(static_cast<std::uint8_t>(msg.sender >> 8));
    if (msg.kind == MessageKind::Register || msg.kind == MessageKind::UploadShadow) {
        put_u32(body, msg.sample_count);
    }
    body.insert(body.end(), msg.payload.begin(), msg.payload.end());

    std::vector<std::uint8_t> frame;
    put_u32(frame, static_cast<std::uint32_t>(body.size()));
    frame.insert(frame.end(), body.begin(), body.end());
    return frame;
}

ProtocolMessage decode_frame(const std::vector<std::uint8_t>& bytes, std::size_t& pos) {
    if (pos + 4 > bytes.size()) throw format_error("message log: truncated length prefix");
    const std::uint32_t len = get_u32(bytes, pos);
    pos += 4;
    if (pos + len > bytes.size()) throw format_error("message log: truncated frame body");
    const std::size_t end = pos + len;
    if (len < 7) throw format_error("message log: frame too short");

    ProtocolMessage msg;
    const std::uint8_t kind = bytes[pos++];
    if (kind > 2) throw format_error("message log: unknown message kind " + std::to_string(kind));
    msg.kind = static_cast<MessageKind>(kind);
    msg.epoch = get_u32(bytes, pos);
    pos += 4;
    msg.sender = static_cast<std::uint16_t>(bytes[pos]) | static_cast<std::uint16_t>(bytes[pos + 1]) << 8;
    pos += 2;
    if (msg.kind == MessageKind::Register || msg.kind == MessageKind::UploadShadow) {
        if (pos + 4 > end) throw format_error("message log: frame missing sample count");
        msg.sample_count = get_u32(bytes, pos);
        pos += 4;
    }
    msg.payload.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos),
                       bytes.begin() + static_cast<std::ptrdiff_t>(end));
    pos = end;
    return msg;
}

void MessageLog::append(const ProtocolMessage& msg) {
    const auto frame = encode_frame(msg);
    bytes.insert(bytes.end(), frame.begin(), frame.end());
    ++frame_count;
}

void MessageLog::append_log(const MessageLog& other) {
    bytes.insert(bytes.end(), other.bytes.begin(), other.bytes.end());
    frame_count += other.frame_count;
}

std::vector<ProtocolMessage> MessageLog::decode_all() const {
    std::vector<ProtocolMessage> out;
    std::size_t pos = 0;
    while (pos < bytes.size()) out.push_back(decode_frame(bytes, pos));
    return out;
}

void save_log(const std::string& path, const MessageLog& log) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw format_error("message log: cannot open '" + path + "' for writing");
    out.write(reinterpret_cast<const char*>(log.bytes.data()),
              static_cast<std::streamsize>(log.bytes.size()));
    if (!out) throw format_error("message log: write failed for '" + path + "'");
}

MessageLog load_log(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw format_error("message log: cannot open '" + path + "'");
    MessageLog log;
    log.bytes.assign((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    log.frame_count = log.decode_all().size();
    return log;
}

AuditReport audit_log(const MessageLog& log, const std::vector<double>& canaries) {
    AuditReport report;
    report.frames_scanned = log.frame_count;
    report.bytes_scanned = log.bytes.size();
    if (log.bytes.size() < sizeof(double)) return report;
    for (std::size_t p = 0; p < canaries.size(); ++p) {
        std::uint8_t pattern[sizeof(double)];
        std::memcpy(pattern, &canaries[p], sizeof(double));
        for (std::size_t off = 0; off + sizeof(double) <= log.bytes.size(); ++off) {
            if (std::memcmp(log.bytes.data() + off, pattern, sizeof(double)) == 0) {
                report.matches.push_back({p, off});
            }
        }
    }
    return report;
}

}  // namespace brainfed
