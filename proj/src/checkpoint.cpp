#include "brainfed/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

namespace brainfed {

namespace {

static_assert(std::endian::native == std::endian::little,
              "codec assumes a little-endian host");

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xFF));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

void put_tensor(std::vector<std::uint8_t>& out, const Tensor& t) {
    out.push_back(static_cast<std::uint8_t>(t.rank()));
    for (std::size_t d : t.shape) put_u32(out, static_cast<std::uint32_t>(d));
    const std::size_t bytes = t.data.size() * sizeof(double);
    const std::size_t offset = out.size();
    out.resize(offset + bytes);
    std::memcpy(out.data() + offset, t.data.data(), bytes);
}

struct Reader {
    const std::vector<std::uint8_t>& buf;
    std::size_t pos = 0;

    void need(std::size_t n) const {
        if (pos + n > buf.size()) throw format_error("checkpoint: truncated at byte " + std::to_string(pos));
    }
    std::uint8_t u8() {
        need(1);
        return buf[pos++];
    }
    std::uint16_t u16() {
        need(2);
        std::uint16_t v = static_cast<std::uint16_t>(buf[pos]) |
                          static_cast<std::uint16_t>(buf[pos + 1]) << 8;
        pos += 2;
        return v;
    }
    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[pos + i]) << (8 * i);
        pos += 4;
        return v;
    }
    Tensor tensor() {
        const std::uint8_t rank = u8();
        std::vector<std::size_t> shape(rank);
        std::size_t numel = 1;
        for (auto& d : shape) {
            d = u32();
            numel *= d;
        }
        need(numel * sizeof(double));
        std::vector<double> data(numel);
        std::memcpy(data.data(), buf.data() + pos, numel * sizeof(double));
        pos += numel * sizeof(double);
        return Tensor(std::move(shape), std::move(data));
    }
};

}  // namespace

std::vector<std::uint8_t> encode_paramset(const ParamSet& params) {
    if (params.size() > std::numeric_limits<std::uint16_t>::max()) {
        throw contract_error("checkpoint: too many layers");
    }
    std::vector<std::uint8_t> out;
    out.push_back('B');
    out.push_back('G');
    out.push_back('C');
    out.push_back('K');
    put_u16(out, kCheckpointVersion);
    put_u16(out, static_cast<std::uint16_t>(params.size()));
    for (const Layer& layer : params.layers) {
        put_u16(out, static_cast<std::uint16_t>(layer.name.size()));
        out.insert(out.end(), layer.name.begin(), layer.name.end());
        put_tensor(out, layer.weight);
        put_tensor(out, layer.bias);
    }
    return out;
}

ParamSet decode_paramset(const std::vector<std::uint8_t>& bytes) {
    Reader r{bytes};
    r.need(4);
    if (std::memcmp(bytes.data(), "BGCK", 4) != 0) {
        throw format_error("checkpoint: bad magic");
    }
    r.pos = 4;
    const std::uint16_t version = r.u16();
    if (version != kCheckpointVersion) {
        throw format_error("checkpoint: unsupported version " + std::to_string(version));
    }
    const std::uint16_t count = r.u16();
    ParamSet params;
    params.layers.reserve(count);
    for (std::uint16_t i = 0; i < count; ++i) {
        Layer layer;
        const std::uint16_t name_len = r.u16();
        r.need(name_len);
        layer.name.assign(reinterpret_cast<const char*>(bytes.data() + r.pos), name_len);
        r.pos += name_len;
        layer.weight = r.tensor();
        layer.bias = r.tensor();
        layer.kind = infer_kind(layer.name);
        params.layers.push_back(std::move(layer));
    }
    if (r.pos != bytes.size()) throw format_error("checkpoint: trailing bytes");
    if (!params.layers.empty() && params.layers.front().weight.rank() == 2) {
        params.subject_dim_tag = static_cast<int>(params.layers.front().weight.cols());
    }
    return params;
}

void save_paramset(const std::string& path, const ParamSet& params) {
    const auto bytes = encode_paramset(params);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw format_error("checkpoint: cannot open '" + path + "' for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw format_error("checkpoint: write failed for '" + path + "'");
}

ParamSet load_paramset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw format_error("checkpoint: cannot open '" + path + "'");
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_paramset(bytes);
}

}  // namespace brainfed
