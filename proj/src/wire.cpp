#include "fam/wire.hpp"

#include <sstream>

namespace fam {

std::string to_string(PayloadKind kind) {
    switch (kind) {
        case PayloadKind::dense: return "dense";
        case PayloadKind::sparse: return "sparse";
        case PayloadKind::mask: return "mask";
    }
    return "?";
}

std::size_t dense_payload_bytes(std::int64_t total_count) { return 4 * static_cast<std::size_t>(total_count); }

std::size_t sparse_payload_bytes(std::int64_t ones_count) { return 4 + 4 * static_cast<std::size_t>(ones_count); }

std::size_t mask_payload_bytes(std::int64_t total_count) {
    return 4 + static_cast<std::size_t>((total_count + 7) / 8);
}

WireMessage encode_dense(const ParameterSet& params, WireHeader header) {
    header.kind = PayloadKind::dense;
    WireMessage msg{header, {}};
    msg.payload.reserve(dense_payload_bytes(params.total_count()));
    for (const auto& e : params.entries) {
        for (std::int64_t i = 0; i < e.tensor.size(); ++i) {
            put_f32_le(msg.payload, static_cast<float>(e.tensor[i]));
        }
    }
    return msg;
}

ParameterSet decode_dense(const WireMessage& msg, const ParameterSet& shape_ref) {
    if (msg.header.kind != PayloadKind::dense) throw ProtocolError("decode_dense: message kind is not dense");
    if (msg.payload.size() != dense_payload_bytes(shape_ref.total_count())) {
        throw ProtocolError("decode_dense: payload length " + std::to_string(msg.payload.size()) +
                            " does not match parameter count " + std::to_string(shape_ref.total_count()));
    }
    ByteReader r(msg.payload);
    ParameterSet out = shape_ref;
    for (auto& e : out.entries) {
        for (std::int64_t i = 0; i < e.tensor.size(); ++i) e.tensor[i] = static_cast<double>(r.f32_le());
    }
    return out;
}

WireMessage encode_sparse(const ParameterSet& params, const PruneMask& mask, WireHeader header) {
    if (!mask.congruent_with(params)) throw ContractViolation("encode_sparse: mask not congruent with parameters");
    if (!respects_mask(params, mask)) {
        throw ContractViolation("encode_sparse: parameters carry non-zeros at masked positions");
    }
    header.kind = PayloadKind::sparse;
    WireMessage msg{header, {}};
    const std::int64_t ones = mask.ones_count();
    msg.payload.reserve(sparse_payload_bytes(ones));
    put_u32_le(msg.payload, static_cast<std::uint32_t>(ones));
    for (std::size_t e = 0; e < params.entries.size(); ++e) {
        const Tensor& t = params.entries[e].tensor;
        const Tensor& m = mask.entries[e].tensor;
        for (std::int64_t i = 0; i < t.size(); ++i) {
            if (m[i] != 0.0) put_f32_le(msg.payload, static_cast<float>(t[i]));
        }
    }
    return msg;
}

ParameterSet decode_sparse(const WireMessage& msg, const PruneMask& mask) {
    if (msg.header.kind != PayloadKind::sparse) throw ProtocolError("decode_sparse: message kind is not sparse");
    ByteReader r(msg.payload);
    const std::uint32_t count = r.u32_le();
    if (count != static_cast<std::uint32_t>(mask.ones_count())) {
        throw ProtocolError("decode_sparse: declared count " + std::to_string(count) + " does not match mask ones " +
                            std::to_string(mask.ones_count()));
    }
    if (msg.payload.size() != sparse_payload_bytes(count)) {
        throw ProtocolError("decode_sparse: payload length mismatch");
    }
    ParameterSet out;
    out.entries.reserve(mask.entries.size());
    for (const auto& e : mask.entries) out.entries.push_back({e.name, Tensor::zeros(e.tensor.shape())});
    for (std::size_t e = 0; e < out.entries.size(); ++e) {
        Tensor& t = out.entries[e].tensor;
        const Tensor& m = mask.entries[e].tensor;
        for (std::int64_t i = 0; i < t.size(); ++i) {
            if (m[i] != 0.0) t[i] = static_cast<double>(r.f32_le());
        }
    }
    return out;
}

WireMessage encode_mask(const PruneMask& mask, WireHeader header) {
    header.kind = PayloadKind::mask;
    WireMessage msg{header, {}};
    const std::int64_t total = mask.total_count();
    msg.payload.reserve(mask_payload_bytes(total));
    put_u32_le(msg.payload, static_cast<std::uint32_t>(total));
    std::uint8_t cur = 0;
    int filled = 0;
    for (const auto& e : mask.entries) {
        for (std::int64_t i = 0; i < e.tensor.size(); ++i) {
            if (e.tensor[i] != 0.0) cur |= static_cast<std::uint8_t>(1u << filled);
            if (++filled == 8) {
                msg.payload.push_back(cur);
                cur = 0;
                filled = 0;
            }
        }
    }
    if (filled > 0) msg.payload.push_back(cur);
    return msg;
}

PruneMask decode_mask(const WireMessage& msg, const ParameterSet& shape_ref) {
    if (msg.header.kind != PayloadKind::mask) throw ProtocolError("decode_mask: message kind is not mask");
    ByteReader r(msg.payload);
    const std::uint32_t bits = r.u32_le();
    if (bits != static_cast<std::uint32_t>(shape_ref.total_count())) {
        throw ProtocolError("decode_mask: declared bit count " + std::to_string(bits) +
                            " does not match parameter count " + std::to_string(shape_ref.total_count()));
    }
    if (msg.payload.size() != mask_payload_bytes(bits)) throw ProtocolError("decode_mask: payload length mismatch");
    PruneMask out;
    out.entries.reserve(shape_ref.entries.size());
    std::size_t bit = 0;
    for (const auto& e : shape_ref.entries) {
        Tensor t = Tensor::zeros(e.tensor.shape());
        for (std::int64_t i = 0; i < t.size(); ++i, ++bit) {
            const std::uint8_t byte = msg.payload[4 + bit / 8];
            t[i] = (byte >> (bit % 8)) & 1u ? 1.0 : 0.0;
        }
        out.entries.push_back({e.name, std::move(t)});
    }
    return out;
}

ByteBuffer message_bytes(const WireMessage& msg) {
    ByteBuffer out;
    out.reserve(msg.size_bytes());
    put_u32_le(out, msg.header.round);
    put_u8(out, msg.header.flag);
    put_u32_le(out, msg.header.sender);
    put_u8(out, static_cast<std::uint8_t>(msg.header.kind));
    out.insert(out.end(), msg.payload.begin(), msg.payload.end());
    return out;
}

WireMessage parse_message(const ByteBuffer& bytes) {
    ByteReader r(bytes);
    WireMessage msg;
    msg.header.round = r.u32_le();
    msg.header.flag = r.u8();
    msg.header.sender = r.u32_le();
    const std::uint8_t kind = r.u8();
    if (kind > 2) throw ProtocolError("unknown payload kind " + std::to_string(kind));
    msg.header.kind = static_cast<PayloadKind>(kind);
    msg.payload.assign(bytes.begin() + kWireHeaderBytes, bytes.end());
    return msg;
}

void write_message_file(const std::string& path, const WireMessage& msg) {
    write_file_bytes(path, message_bytes(msg));
}

WireMessage read_message_file(const std::string& path) { return parse_message(read_file_bytes(path)); }

std::string describe_message(const WireMessage& msg) {
    std::ostringstream os;
    os << "round:   " << msg.header.round << '\n';
    os << "flag:    " << static_cast<int>(msg.header.flag) << '\n';
    os << "sender:  " << msg.header.sender << '\n';
    os << "kind:    " << to_string(msg.header.kind) << '\n';
    os << "payload: " << msg.payload.size() << " bytes\n";
    ByteReader r(msg.payload);
    switch (msg.header.kind) {
        case PayloadKind::dense:
            os << "values:  " << msg.payload.size() / 4 << " (f32 le)\n";
            break;
        case PayloadKind::sparse: {
            const std::uint32_t count = r.u32_le();
            os << "values:  " << count << " at mask-one positions (f32 le)\n";
            os << "expect:  " << sparse_payload_bytes(count) << " payload bytes\n";
            break;
        }
        case PayloadKind::mask: {
            const std::uint32_t bits = r.u32_le();
            std::uint64_t ones = 0;
            for (std::uint32_t b = 0; b < bits; ++b) {
                ones += (msg.payload[4 + b / 8] >> (b % 8)) & 1u;
            }
            os << "bits:    " << bits << ", ones: " << ones << '\n';
            os << "expect:  " << mask_payload_bytes(bits) << " payload bytes\n";
            break;
        }
    }
    return os.str();
}

CommsReport account(const std::vector<RoundComms>& rounds) {
    CommsReport rep;
    for (const RoundComms& rc : rounds) {
        rep.total_up += rc.bytes_up;
        rep.total_down += rc.bytes_down;
        rep.dense_total_up += rc.dense_bytes_up;
        rep.dense_total_down += rc.dense_bytes_down;
    }
    const double actual = static_cast<double>(rep.total_up + rep.total_down);
    const double dense = static_cast<double>(rep.dense_total_up + rep.dense_total_down);
    rep.reduction_ratio = dense > 0.0 ? 1.0 - actual / dense : 0.0;
    return rep;
}

}  // namespace fam
