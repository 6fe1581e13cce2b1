// Copyright (c) 2026 gbmbench contributors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <zlib.h>

#include <cstring>
#include <string>

#include "gbmbench/common.hpp"

namespace gbmbench {

/// Deterministic gzip: fixed level, zeroed header (no mtime, no name), so the
/// same bytes always compress to the same file.
inline std::string gzip_compress(const std::string& raw) {
    z_stream strm{};
    if (deflateInit2(&strm, 6, Z_DEFLATED, 15 + 16, 8, Z_DEFAULT_STRATEGY) != Z_OK)
        throw IOFailure("gzip: deflateInit2 failed");
    gz_header head{};
    head.os = 255;
    deflateSetHeader(&strm, &head);
    std::string out;
    out.resize(deflateBound(&strm, static_cast<uLong>(raw.size())) + 32);
    strm.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(raw.data()));
    strm.avail_in = static_cast<uInt>(raw.size());
    strm.next_out = reinterpret_cast<Bytef*>(out.data());
    strm.avail_out = static_cast<uInt>(out.size());
    const int rc = deflate(&strm, Z_FINISH);
    if (rc != Z_STREAM_END) {
        deflateEnd(&strm);
        throw IOFailure("gzip: deflate failed rc=" + std::to_string(rc));
    }
    out.resize(strm.total_out);
    deflateEnd(&strm);
    return out;
}

/// Accepts both gzip and raw zlib streams.
inline std::string gzip_decompress(const std::string& compressed) {
    z_stream strm{};
    if (inflateInit2(&strm, 15 + 32) != Z_OK) throw IOFailure("gzip: inflateInit2 failed");
    std::string out;
    out.resize(std::max<size_t>(compressed.size() * 4, 1 << 16));
    strm.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(compressed.data()));
    strm.avail_in = static_cast<uInt>(compressed.size());
    size_t written = 0;
    for (;;) {
        strm.next_out = reinterpret_cast<Bytef*>(out.data() + written);
        strm.avail_out = static_cast<uInt>(out.size() - written);
        const int rc = inflate(&strm, Z_NO_FLUSH);
        written = out.size() - strm.avail_out;
        if (rc == Z_STREAM_END) break;
        if (rc == Z_OK || rc == Z_BUF_ERROR) {
            if (strm.avail_out == 0) {
                out.resize(out.size() * 2);
                continue;
            }
            if (rc == Z_BUF_ERROR) {
                inflateEnd(&strm);
                throw IOFailure("gzip: truncated stream");
            }
            continue;
        }
        inflateEnd(&strm);
        throw IOFailure("gzip: inflate failed rc=" + std::to_string(rc));
    }
    inflateEnd(&strm);
    out.resize(written);
    return out;
}

inline bool looks_gzip(const std::string& bytes) {
    return bytes.size() >= 2 && static_cast<uint8_t>(bytes[0]) == 0x1f &&
           static_cast<uint8_t>(bytes[1]) == 0x8b;
}

}  // namespace gbmbench
