// Copyright 2026 The qnc Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef QNC_SRC_BYTE_IO_HPP
#define QNC_SRC_BYTE_IO_HPP

#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <iterator>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

namespace qnc::detail {

template <typename T>
T to_little(T value) {
    static_assert(std::is_trivially_copyable_v<T>);
    if constexpr (std::endian::native == std::endian::big) {
        unsigned char b[sizeof(T)];
        std::memcpy(b, &value, sizeof(T));
        for (size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
        std::memcpy(&value, b, sizeof(T));
    }
    return value;
}

/// Append-only little-endian encoder.
class ByteWriter {
   public:
    template <typename T>
    void put(T value) {
        value = to_little(value);
        const auto *p = reinterpret_cast<const unsigned char *>(&value);
        bytes_.insert(bytes_.end(), p, p + sizeof(T));
    }
    void put_bytes(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }
    void reserve(size_t n) { bytes_.reserve(n); }

    std::vector<unsigned char> &bytes() noexcept { return bytes_; }

   private:
    std::vector<unsigned char> bytes_;
};

/// Little-endian decoder over a span; the caller checks sizes up front.
class ByteReader {
   public:
    explicit ByteReader(std::span<const unsigned char> bytes, size_t pos = 0) : bytes_(bytes), pos_(pos) {}

    template <typename T>
    T get() {
        T value;
        std::memcpy(&value, bytes_.data() + pos_, sizeof(T));
        pos_ += sizeof(T);
        return to_little(value);
    }
    size_t position() const noexcept { return pos_; }
    void skip(size_t n) noexcept { pos_ += n; }

   private:
    std::span<const unsigned char> bytes_;
    size_t pos_;
};

inline std::vector<unsigned char> slurp(std::istream &in) {
    return std::vector<unsigned char>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace qnc::detail

#endif
