#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fam/bytes.hpp"
#include "fam/model.hpp"
#include "fam/sparsity.hpp"

namespace fam {

enum class PayloadKind : std::uint8_t { dense = 0, sparse = 1, mask = 2 };

std::string to_string(PayloadKind kind);

// 10 bytes on the wire: u32 round, u8 flag, u32 sender, u8 kind.
struct WireHeader {
    std::uint32_t round = 0;
    std::uint8_t flag = 0;
    std::uint32_t sender = 0;
    PayloadKind kind = PayloadKind::dense;
};

inline constexpr std::size_t kWireHeaderBytes = 10;

struct WireMessage {
    WireHeader header;
    ByteBuffer payload;

    std::size_t size_bytes() const { return kWireHeaderBytes + payload.size(); }
};

// Everything on the wire is little-endian; values travel as 32-bit floats
// even though parameters live in memory as 64-bit.
std::size_t dense_payload_bytes(std::int64_t total_count);   // 4 * total
std::size_t sparse_payload_bytes(std::int64_t ones_count);   // 4 + 4 * ones
std::size_t mask_payload_bytes(std::int64_t total_count);    // 4 + ceil(total/8)

/// All values in declaration order.
WireMessage encode_dense(const ParameterSet& params, WireHeader header);
ParameterSet decode_dense(const WireMessage& msg, const ParameterSet& shape_ref);

/// u32 count + values at mask-one positions only; positions are implied by
/// the mask both ends already share. Parameters must respect the mask.
WireMessage encode_sparse(const ParameterSet& params, const PruneMask& mask, WireHeader header);
ParameterSet decode_sparse(const WireMessage& msg, const PruneMask& mask);

/// u32 total bit count + one bit per weight, tensors in declaration order,
/// LSB-first within each byte, padded to a byte boundary at the end.
WireMessage encode_mask(const PruneMask& mask, WireHeader header);
PruneMask decode_mask(const WireMessage& msg, const ParameterSet& shape_ref);

ByteBuffer message_bytes(const WireMessage& msg);
WireMessage parse_message(const ByteBuffer& bytes);
void write_message_file(const std::string& path, const WireMessage& msg);
WireMessage read_message_file(const std::string& path);

/// Human-readable header + payload summary for the wire-dump subcommand.
std::string describe_message(const WireMessage& msg);

// Per-round traffic plus what the same round would have cost all-dense.
struct RoundComms {
    int round = 0;
    std::uint64_t bytes_up = 0;
    std::uint64_t bytes_down = 0;
    std::uint64_t dense_bytes_up = 0;
    std::uint64_t dense_bytes_down = 0;
};

struct CommsReport {
    std::uint64_t total_up = 0;
    std::uint64_t total_down = 0;
    std::uint64_t dense_total_up = 0;
    std::uint64_t dense_total_down = 0;
    double reduction_ratio = 0.0;  // 1 - actual/dense, over up+down
};

CommsReport account(const std::vector<RoundComms>& rounds);

}  // namespace fam
