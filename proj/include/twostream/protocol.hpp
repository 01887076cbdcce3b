#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "twostream/guard.hpp"
#include "twostream/tensor.hpp"

namespace twostream {

// Wire layout (little-endian): magic "TS" (2 bytes), version u8, msg_type u8,
// payload_length u32, payload. Request payload: u32 client id + one tensor
// record. Response payload: 1 response-kind byte + u16 fine + u16 coarse
// (zero-filled unless Classified).

inline constexpr std::uint8_t kFrameMagic0 = 'T';
inline constexpr std::uint8_t kFrameMagic1 = 'S';
inline constexpr std::uint8_t kProtocolVersion = 1;
inline constexpr std::size_t kFrameHeaderSize = 8;

enum class MsgType : std::uint8_t { kClassifyRequest = 1, kResponse = 2 };

struct Frame {
    MsgType type = MsgType::kClassifyRequest;
    std::vector<std::uint8_t> payload;

    bool operator==(const Frame&) const = default;
};

std::vector<std::uint8_t> encode_frame(const Frame& frame);

// Decodes exactly one frame from the front of `bytes`; `consumed` reports the
// frame length. Throws ProtocolError naming the offending field; never
// returns a partial frame.
Frame decode_frame(std::span<const std::uint8_t> bytes, std::size_t& consumed);

struct ClassifyRequest {
    ClientId client = 0;
    Tensor3 image;

    bool operator==(const ClassifyRequest&) const = default;
};

struct ClassifyResponse {
    ResponseKind kind = ResponseKind::kRejected;
    std::uint16_t fine_label = 0;
    std::uint16_t coarse_label = 0;

    bool operator==(const ClassifyResponse&) const = default;
};

Frame encode_request(const ClassifyRequest& req);
ClassifyRequest decode_request(const Frame& frame);

Frame encode_response(const ClassifyResponse& resp);
ClassifyResponse decode_response(const Frame& frame);

ClassifyResponse response_from_server(const ServerResponse& resp);

} // namespace twostream
