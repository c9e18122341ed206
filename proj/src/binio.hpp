// Copyright Contributors to the occfield project
// SPDX-License-Identifier: Apache-2.0

// Little-endian binary readers and writers shared by the file formats.

#pragma once

#include "occfield/errors.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <vector>

namespace occ::binio {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

class Writer {
public:
    explicit Writer(const std::filesystem::path& path) : path_(path), out_(path, std::ios::binary | std::ios::trunc) {
        if (!out_) {
            throw IoError("cannot open '" + path.string() + "' for writing");
        }
    }

    void magic(std::string_view tag) { bytes(tag.data(), tag.size()); }

    template <typename T>
    void put(T value) {
        static_assert(std::is_arithmetic_v<T>);
        bytes(&value, sizeof(T));
    }

    void bytes(const void* data, std::size_t n) {
        out_.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
        if (!out_) {
            throw IoError("write failed on '" + path_.string() + "'");
        }
    }

    void bits(const std::vector<std::uint8_t>& flags) {
        std::vector<std::uint8_t> packed((flags.size() + 7) / 8, 0);
        for (std::size_t i = 0; i < flags.size(); ++i) {
            if (flags[i]) {
                packed[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
            }
        }
        bytes(packed.data(), packed.size());
    }

    void close() {
        out_.close();
        if (!out_) {
            throw IoError("closing '" + path_.string() + "' failed");
        }
    }

private:
    std::filesystem::path path_;
    std::ofstream out_;
};

class Reader {
public:
    explicit Reader(const std::filesystem::path& path) : path_(path), in_(path, std::ios::binary) {
        if (!in_) {
            throw IoError("cannot open '" + path.string() + "' for reading");
        }
    }

    void expect_magic(std::string_view tag) {
        std::string got(tag.size(), '\0');
        bytes(got.data(), got.size());
        if (got != tag) {
            throw IoError("'" + path_.string() + "' is not a " + std::string(tag) + " file");
        }
    }

    template <typename T>
    T get() {
        static_assert(std::is_arithmetic_v<T>);
        T value{};
        bytes(&value, sizeof(T));
        return value;
    }

    void bytes(void* data, std::size_t n) {
        in_.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
        if (static_cast<std::size_t>(in_.gcount()) != n) {
            throw IoError("unexpected end of file in '" + path_.string() + "'");
        }
    }

    std::vector<std::uint8_t> bits(std::size_t count) {
        std::vector<std::uint8_t> packed((count + 7) / 8);
        bytes(packed.data(), packed.size());
        std::vector<std::uint8_t> flags(count);
        for (std::size_t i = 0; i < count; ++i) {
            flags[i] = (packed[i / 8] >> (i % 8)) & 1u;
        }
        return flags;
    }

    std::string string(std::size_t n) {
        std::string s(n, '\0');
        bytes(s.data(), n);
        return s;
    }

    const std::filesystem::path& path() const { return path_; }

private:
    std::filesystem::path path_;
    std::ifstream in_;
};

} // namespace occ::binio
