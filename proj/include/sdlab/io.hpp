// Copyright 2026 The sdlab Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "sdlab/errors.hpp"
#include "sdlab/optim.hpp"
#include "sdlab/tensor.hpp"

namespace sdlab {

// ------------------------------------------------------------------ archive
//
// Layout (all integers little-endian):
//   "SDLAB\x01"  u32 version  u64 config_hash  u64 step
//   u32 header_len  header_len bytes of UTF-8 JSON
//   u32 n_arrays
//   n_arrays x { u32 name_len, name bytes, u32 rank, rank x u64 dim }
//   n_arrays x raw f64 data, in table order

inline constexpr char kArchiveMagic[6] = {'S', 'D', 'L', 'A', 'B', '\x01'};
inline constexpr std::uint32_t kArchiveVersion = 1;

struct NamedArray {
    std::string name;
    Shape shape;
    std::vector<double> data;
};

struct Archive {
    std::uint64_t config_hash = 0;
    std::uint64_t step = 0;
    nlohmann::json header = nlohmann::json::object();
    std::vector<NamedArray> arrays;

    const NamedArray* find(const std::string& name) const {
        for (const auto& a : arrays)
            if (a.name == name) return &a;
        return nullptr;
    }

    const NamedArray& at(const std::string& name) const {
        if (const NamedArray* a = find(name)) return *a;
        throw Error("archive has no array named " + name);
    }

    void add(std::string name, const Tensor& t) { arrays.push_back({std::move(name), t.shape(), t.values()}); }
    void add(std::string name, Shape shape, std::vector<double> data) {
        arrays.push_back({std::move(name), std::move(shape), std::move(data)});
    }
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline void put_f64(std::string& out, double d) {
    std::uint64_t v;
    std::memcpy(&v, &d, 8);
    put_u64(out, v);
}

class Reader {
public:
    explicit Reader(const std::string& buf) : buf_(buf) {}
    void need(std::size_t n) const {
        if (pos_ + n > buf_.size()) throw Error("archive truncated");
    }
    std::uint64_t uint(int bytes) {
        need(static_cast<std::size_t>(bytes));
        std::uint64_t v = 0;
        for (int i = 0; i < bytes; ++i)
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + static_cast<std::size_t>(i)])) << (8 * i);
        pos_ += static_cast<std::size_t>(bytes);
        return v;
    }
    std::uint32_t u32() { return static_cast<std::uint32_t>(uint(4)); }
    std::uint64_t u64() { return uint(8); }
    double f64() {
        const std::uint64_t v = u64();
        double d;
        std::memcpy(&d, &v, 8);
        return d;
    }
    std::string bytes(std::size_t n) {
        need(n);
        std::string s = buf_.substr(pos_, n);
        pos_ += n;
        return s;
    }

private:
    const std::string& buf_;
    std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string encode_archive(const Archive& a) {
    std::string out(kArchiveMagic, sizeof kArchiveMagic);
    detail::put_u32(out, kArchiveVersion);
    detail::put_u64(out, a.config_hash);
    detail::put_u64(out, a.step);
    const std::string header = a.header.dump();
    detail::put_u32(out, static_cast<std::uint32_t>(header.size()));
    out += header;
    detail::put_u32(out, static_cast<std::uint32_t>(a.arrays.size()));
    for (const auto& arr : a.arrays) {
        if (shape_numel(arr.shape) != arr.data.size()) throw ShapeError("archive " + arr.name, arr.shape, Shape{arr.data.size()});
        detail::put_u32(out, static_cast<std::uint32_t>(arr.name.size()));
        out += arr.name;
        detail::put_u32(out, static_cast<std::uint32_t>(arr.shape.size()));
        for (auto d : arr.shape) detail::put_u64(out, d);
    }
    for (const auto& arr : a.arrays)
        for (double d : arr.data) detail::put_f64(out, d);
    return out;
}

inline Archive decode_archive(const std::string& buf) {
    detail::Reader r(buf);
    if (r.bytes(sizeof kArchiveMagic) != std::string(kArchiveMagic, sizeof kArchiveMagic))
        throw Error("not an sdlab archive (bad magic)");
    if (const auto v = r.u32(); v != kArchiveVersion) throw Error("unsupported archive version " + std::to_string(v));
    Archive a;
    a.config_hash = r.u64();
    a.step = r.u64();
    a.header = nlohmann::json::parse(r.bytes(r.u32()));
    const std::uint32_t n = r.u32();
    a.arrays.resize(n);
    for (auto& arr : a.arrays) {
        arr.name = r.bytes(r.u32());
        arr.shape.resize(r.u32());
        for (auto& d : arr.shape) d = r.u64();
    }
    for (auto& arr : a.arrays) {
        arr.data.resize(shape_numel(arr.shape));
        for (auto& d : arr.data) d = r.f64();
    }
    return a;
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open " + path.string() + " for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw Error("write failed: " + path.string());
}

inline std::string read_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline void save_archive(const std::filesystem::path& path, const Archive& a) { write_file(path, encode_archive(a)); }
inline Archive load_archive(const std::filesystem::path& path) { return decode_archive(read_file(path)); }

// ---------------------------------------------------------- parameter state

inline void store_parameters(Archive& a, const ParameterSet& ps, const std::string& prefix = "param/") {
    for (const auto& p : ps.items()) a.add(prefix + p.name, p.value.detach());
}

inline void restore_parameters(ParameterSet& ps, const Archive& a, const std::string& prefix = "param/") {
    for (auto& p : ps.items()) {
        const NamedArray& arr = a.at(prefix + p.name);
        if (arr.shape != p.value.shape()) throw ShapeError("restore " + p.name, p.value.shape(), arr.shape);
        std::copy(arr.data.begin(), arr.data.end(), p.value.mutable_data().begin());
    }
}

inline void store_optimizer(Archive& a, const AdamW& opt, const std::string& prefix = "") {
    for (const auto& [name, m] : opt.moments()) {
        a.add(prefix + "adam_m/" + name, Shape{m.m.size()}, m.m);
        a.add(prefix + "adam_v/" + name, Shape{m.v.size()}, m.v);
    }
}

inline void restore_optimizer(AdamW& opt, const ParameterSet& ps, const Archive& a, std::int64_t steps,
                              const std::string& prefix = "") {
    opt.moments().clear();
    opt.set_steps(steps);
    for (const auto& p : ps.items()) {
        const NamedArray* m = a.find(prefix + "adam_m/" + p.name);
        const NamedArray* v = a.find(prefix + "adam_v/" + p.name);
        if (!m || !v) continue;
        opt.moments()[p.name] = AdamMoments{m->data, v->data};
    }
}

// ---------------------------------------------------------------- images/CSV

/// 8-bit binary PGM; values in [-1, 1] map affinely to [0, 255], clamped.
inline void write_pgm(const std::filesystem::path& path, std::span<const double> img, std::size_t H, std::size_t W) {
    if (img.size() != H * W) throw ShapeError("write_pgm", Shape{img.size()}, Shape{H, W});
    std::string out = "P5\n" + std::to_string(W) + " " + std::to_string(H) + "\n255\n";
    for (double v : img) {
        const double s = std::clamp((v + 1.0) * 0.5 * 255.0, 0.0, 255.0);
        out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(s))));
    }
    write_file(path, out);
}

/// Decimal form that round-trips to the same double.
inline std::string fmt_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

class CsvWriter {
public:
    CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& columns, bool append = false) {
        if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
        const bool exists = append && std::filesystem::exists(path);
        f_.open(path, append ? std::ios::app : std::ios::trunc);
        if (!f_) throw Error("cannot open " + path.string());
        if (!exists) {
            for (std::size_t i = 0; i < columns.size(); ++i) f_ << (i ? "," : "") << columns[i];
            f_ << '\n';
        }
    }

    template <typename... Ts>
    void row(const Ts&... cells) {
        bool first = true;
        ((f_ << (first ? "" : ",") << cell(cells), first = false), ...);
        f_ << '\n';
        f_.flush();
    }

private:
    static std::string cell(double v) { return fmt_double(v); }
    static std::string cell(const std::string& s) { return s; }
    static std::string cell(const char* s) { return s; }
    template <typename I>
        requires std::is_integral_v<I>
    static std::string cell(I v) { return std::to_string(v); }

    std::ofstream f_;
};

/// Keeps only the header and the first `rows` data rows of a CSV.
inline void truncate_csv(const std::filesystem::path& path, std::size_t rows) {
    if (!std::filesystem::exists(path)) return;
    const std::string s = read_file(path);
    std::size_t pos = 0, seen = 0;
    while (pos < s.size() && seen < rows + 1) {
        const std::size_t nl = s.find('\n', pos);
        if (nl == std::string::npos) { pos = s.size(); break; }
        pos = nl + 1;
        ++seen;
    }
    write_file(path, s.substr(0, pos));
}

}  // namespace sdlab
