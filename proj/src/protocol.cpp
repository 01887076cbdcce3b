#include "twostream/protocol.hpp"

namespace twostream {

namespace {

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xFF));
    out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xFF));
    out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xFF));
    out.push_back(static_cast<std::uint8_t>((v >> 24) & 0xFF));
}

std::uint32_t get_u32(std::span<const std::uint8_t> b, std::size_t off) {
    return static_cast<std::uint32_t>(b[off]) | (static_cast<std::uint32_t>(b[off + 1]) << 8) |
           (static_cast<std::uint32_t>(b[off + 2]) << 16) |
           (static_cast<std::uint32_t>(b[off + 3]) << 24);
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xFF));
    out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xFF));
}

std::uint16_t get_u16(std::span<const std::uint8_t> b, std::size_t off) {
    return static_cast<std::uint16_t>(b[off] | (b[off + 1] << 8));
}

} // namespace

std::vector<std::uint8_t> encode_frame(const Frame& frame) {
    if (frame.type != MsgType::kClassifyRequest && frame.type != MsgType::kResponse)
        throw ProtocolError("frame msg_type: unknown value");
    std::vector<std::uint8_t> out;
    out.reserve(kFrameHeaderSize + frame.payload.size());
    out.push_back(kFrameMagic0);
    out.push_back(kFrameMagic1);
    out.push_back(kProtocolVersion);
    out.push_back(static_cast<std::uint8_t>(frame.type));
    put_u32(out, static_cast<std::uint32_t>(frame.payload.size()));
    out.insert(out.end(), frame.payload.begin(), frame.payload.end());
    return out;
}

Frame decode_frame(std::span<const std::uint8_t> bytes, std::size_t& consumed) {
    if (bytes.size() < kFrameHeaderSize) throw ProtocolError("frame header: truncated");
    if (bytes[0] != kFrameMagic0 || bytes[1] != kFrameMagic1)
        throw ProtocolError("frame magic: mismatch");
    if (bytes[2] != kProtocolVersion) throw ProtocolError("frame version: unknown value");
    const std::uint8_t type = bytes[3];
    if (type != static_cast<std::uint8_t>(MsgType::kClassifyRequest) &&
        type != static_cast<std::uint8_t>(MsgType::kResponse))
        throw ProtocolError("frame msg_type: unknown value");
    const std::uint32_t len = get_u32(bytes, 4);
    if (bytes.size() < kFrameHeaderSize + len) throw ProtocolError("frame payload: truncated");
    Frame frame;
    frame.type = static_cast<MsgType>(type);
    frame.payload.assign(bytes.begin() + kFrameHeaderSize,
                         bytes.begin() + kFrameHeaderSize + len);
    consumed = kFrameHeaderSize + len;
    return frame;
}

Frame encode_request(const ClassifyRequest& req) {
    Frame frame;
    frame.type = MsgType::kClassifyRequest;
    put_u32(frame.payload, req.client);
    append_tensor(frame.payload, req.image);
    return frame;
}

ClassifyRequest decode_request(const Frame& frame) {
    if (frame.type != MsgType::kClassifyRequest)
        throw ProtocolError("request msg_type: not a classify request");
    if (frame.payload.size() < 4) throw ProtocolError("request client id: truncated");
    ClassifyRequest req;
    req.client = get_u32(frame.payload, 0);
    std::size_t consumed = 0;
    try {
        req.image = decode_tensor(std::span(frame.payload).subspan(4), consumed);
    } catch (const IngestError& e) {
        throw ProtocolError(std::string("request image: ") + e.what());
    }
    if (4 + consumed != frame.payload.size())
        throw ProtocolError("request payload: trailing bytes after image");
    return req;
}

Frame encode_response(const ClassifyResponse& resp) {
    Frame frame;
    frame.type = MsgType::kResponse;
    frame.payload.push_back(static_cast<std::uint8_t>(resp.kind));
    put_u16(frame.payload, resp.fine_label);
    put_u16(frame.payload, resp.coarse_label);
    return frame;
}

ClassifyResponse decode_response(const Frame& frame) {
    if (frame.type != MsgType::kResponse)
        throw ProtocolError("response msg_type: not a response");
    if (frame.payload.size() != 5) throw ProtocolError("response payload: wrong length");
    const std::uint8_t kind = frame.payload[0];
    if (kind > 2) throw ProtocolError("response kind: unknown value");
    ClassifyResponse resp;
    resp.kind = static_cast<ResponseKind>(kind);
    resp.fine_label = get_u16(frame.payload, 1);
    resp.coarse_label = get_u16(frame.payload, 3);
    return resp;
}

ClassifyResponse response_from_server(const ServerResponse& resp) {
    ClassifyResponse wire;
    wire.kind = resp.kind;
    if (resp.kind == ResponseKind::kClassified) {
        wire.fine_label = static_cast<std::uint16_t>(resp.fine_label);
        wire.coarse_label = static_cast<std::uint16_t>(resp.coarse_label);
    }
    return wire;
}

} // namespace twostream
