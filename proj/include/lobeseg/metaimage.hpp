#pragma once

// MetaImage (.mha / .mhd+.raw) reader and writer for 3D volumes.
//
// Written files always embed the payload (ElementDataFile = LOCAL) and are
// little-endian. Reading also accepts detached headers and big-endian payloads.

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "lobeseg/error.hpp"
#include "lobeseg/volume.hpp"

namespace lobeseg {

/// Header key/value pairs in file order. Unknown keys survive a read.
struct MetaHeader {
    std::vector<std::pair<std::string, std::string>> entries;

    std::optional<std::string> get(std::string_view key) const
    {
        for (const auto& [k, v] : entries)
            if (k == key) return v;
        return std::nullopt;
    }
};

using AnyVolume = std::variant<ScalarVolume, LabelVolume>;

namespace detail {

inline std::string trim(std::string_view s)
{
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split_ws(const std::string& s)
{
    std::istringstream in(s);
    std::vector<std::string> out;
    for (std::string tok; in >> tok;) out.push_back(tok);
    return out;
}

inline std::string format_double(double v)
{
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline double parse_double(const std::string& tok, const char* what)
{
    double v = 0;
    auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size())
        throw FormatError(std::string("bad number in ") + what + ": '" + tok + "'");
    return v;
}

inline std::size_t parse_size(const std::string& tok, const char* what)
{
    std::size_t v = 0;
    auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size())
        throw FormatError(std::string("bad integer in ") + what + ": '" + tok + "'");
    return v;
}

inline bool parse_bool(const std::string& v)
{
    std::string s = v;
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return std::tolower(c); });
    return s == "true" || s == "1";
}

template <class T>
T load_le(const char* p, bool msb)
{
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, p, sizeof(T));
    const bool host_le = std::endian::native == std::endian::little;
    if (msb == host_le) std::reverse(bytes, bytes + sizeof(T));
    T v;
    std::memcpy(&v, bytes, sizeof(T));
    return v;
}

template <class T>
void store_le(std::string& out, T v)
{
    unsigned char bytes[sizeof(T)];
    std::memcpy(bytes, &v, sizeof(T));
    if constexpr (std::endian::native != std::endian::little) std::reverse(bytes, bytes + sizeof(T));
    out.append(reinterpret_cast<const char*>(bytes), sizeof(T));
}

inline std::string read_file(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return std::move(ss).str();
}

inline void write_file(const std::filesystem::path& path, const std::string& bytes)
{
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw IoError("short write to " + path.string());
}

inline std::string header_text(const Dims& d, const Spacing& s, const char* element_type,
                               std::optional<int> num_labels)
{
    std::string h;
    h += "ObjectType = Image\n";
    h += "NDims = 3\n";
    h += "BinaryData = True\n";
    h += "CompressedData = False\n";
    h += "DimSize = " + std::to_string(d.x) + " " + std::to_string(d.y) + " " + std::to_string(d.z) + "\n";
    h += "ElementSpacing = " + format_double(s.x) + " " + format_double(s.y) + " " + format_double(s.z) + "\n";
    h += "ElementByteOrderMSB = False\n";
    if (num_labels) h += "NumLabels = " + std::to_string(*num_labels) + "\n";
    h += std::string("ElementType = ") + element_type + "\n";
    h += "ElementDataFile = LOCAL\n";
    return h;
}

} // namespace detail

/// Reads a 3D MetaImage. Integer element types yield a LabelVolume; MET_FLOAT
/// yields a ScalarVolume. When `expected_labels` is given, label values must be
/// below it; otherwise a NumLabels header key is honoured, else max+1 (>= 2).
inline AnyVolume read_metaimage(const std::filesystem::path& path, std::optional<int> expected_labels = {},
                                MetaHeader* header_out = nullptr)
{
    const std::string bytes = detail::read_file(path);
    MetaHeader header;
    std::size_t pos = 0;
    std::size_t payload_offset = std::string::npos;
    while (pos < bytes.size()) {
        std::size_t eol = bytes.find('\n', pos);
        if (eol == std::string::npos) eol = bytes.size();
        std::string_view line(bytes.data() + pos, eol - pos);
        pos = eol + 1;
        if (detail::trim(line).empty()) continue;
        auto eq = line.find('=');
        if (eq == std::string_view::npos) throw FormatError("header line without '=' in " + path.string());
        std::string key = detail::trim(line.substr(0, eq));
        std::string value = detail::trim(line.substr(eq + 1));
        header.entries.emplace_back(key, value);
        if (key == "ElementDataFile") {
            payload_offset = std::min(pos, bytes.size());
            break;
        }
    }
    if (payload_offset == std::string::npos) throw FormatError("missing ElementDataFile in " + path.string());

    auto require = [&](const char* key) {
        auto v = header.get(key);
        if (!v) throw FormatError(std::string("missing header key ") + key + " in " + path.string());
        return *v;
    };

    if (detail::parse_size(require("NDims"), "NDims") != 3) throw FormatError("only 3D MetaImages are supported");
    if (auto c = header.get("CompressedData"); c && detail::parse_bool(*c))
        throw FormatError("compressed MetaImage payloads are not supported");
    if (auto ch = header.get("ElementNumberOfChannels"); ch && detail::parse_size(*ch, "channels") != 1)
        throw FormatError("multi-channel MetaImages are not supported");

    auto dim_tokens = detail::split_ws(require("DimSize"));
    if (dim_tokens.size() != 3) throw FormatError("DimSize must have 3 entries");
    Dims dims{detail::parse_size(dim_tokens[0], "DimSize"), detail::parse_size(dim_tokens[1], "DimSize"),
              detail::parse_size(dim_tokens[2], "DimSize")};
    if (!dims.valid()) throw FormatError("DimSize entries must be >= 1");

    Spacing spacing;
    if (auto sp = header.get("ElementSpacing")) {
        auto tok = detail::split_ws(*sp);
        if (tok.size() != 3) throw FormatError("ElementSpacing must have 3 entries");
        spacing = {detail::parse_double(tok[0], "ElementSpacing"), detail::parse_double(tok[1], "ElementSpacing"),
                   detail::parse_double(tok[2], "ElementSpacing")};
        if (!spacing.valid()) throw FormatError("ElementSpacing must be positive and finite");
    }

    bool msb = false;
    if (auto v = header.get("ElementByteOrderMSB")) msb = detail::parse_bool(*v);
    else if (auto w = header.get("BinaryDataByteOrderMSB")) msb = detail::parse_bool(*w);

    const std::string type = require("ElementType");
    std::size_t elem_bytes = 0;
    if (type == "MET_UCHAR") elem_bytes = 1;
    else if (type == "MET_SHORT") elem_bytes = 2;
    else if (type == "MET_FLOAT") elem_bytes = 4;
    else throw FormatError("unsupported ElementType " + type);

    std::string detached;
    std::string_view payload;
    const std::string data_file = require("ElementDataFile");
    if (data_file == "LOCAL") {
        payload = std::string_view(bytes).substr(payload_offset);
    } else {
        detached = detail::read_file(path.parent_path() / data_file);
        payload = detached;
    }
    const std::size_t expected = dims.count() * elem_bytes;
    if (payload.size() != expected)
        throw FormatError("payload length mismatch in " + path.string() + ": expected " + std::to_string(expected) +
                          " bytes, found " + std::to_string(payload.size()));

    if (header_out) *header_out = header;

    if (type == "MET_FLOAT") {
        ScalarVolume v(dims, spacing);
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = detail::load_le<float>(payload.data() + 4 * i, msb);
        return v;
    }

    std::vector<int> raw(dims.count());
    int max_value = 0;
    for (std::size_t i = 0; i < raw.size(); ++i) {
        int value = type == "MET_UCHAR" ? static_cast<unsigned char>(payload[i])
                                        : detail::load_le<std::int16_t>(payload.data() + 2 * i, msb);
        if (value < 0 || value > 255) throw FormatError("label value out of range [0, 255]: " + std::to_string(value));
        raw[i] = value;
        max_value = std::max(max_value, value);
    }
    int labels = std::max(2, max_value + 1);
    if (expected_labels) labels = *expected_labels;
    else if (auto nl = header.get("NumLabels")) labels = static_cast<int>(detail::parse_size(*nl, "NumLabels"));
    if (labels < 2 || labels > 256) throw FormatError("num_labels must lie in [2, 256]");
    if (max_value >= labels)
        throw FormatError("label value " + std::to_string(max_value) + " >= declared num_labels " +
                          std::to_string(labels));
    LabelVolume v(dims, spacing, labels);
    for (std::size_t i = 0; i < raw.size(); ++i) v[i] = static_cast<std::uint8_t>(raw[i]);
    return v;
}

inline ScalarVolume read_scalar(const std::filesystem::path& path)
{
    auto v = read_metaimage(path);
    if (auto* s = std::get_if<ScalarVolume>(&v)) return std::move(*s);
    // Integer images are promoted so intensity inputs may be stored either way.
    const auto& l = std::get<LabelVolume>(v);
    ScalarVolume s(l.dims, l.spacing);
    for (std::size_t i = 0; i < l.size(); ++i) s[i] = static_cast<float>(l[i]);
    return s;
}

inline LabelVolume read_labels(const std::filesystem::path& path, std::optional<int> expected_labels = {})
{
    auto v = read_metaimage(path, expected_labels);
    if (auto* l = std::get_if<LabelVolume>(&v)) return std::move(*l);
    throw FormatError(path.string() + " holds floating-point data, expected labels");
}

/// Any nonzero voxel is set.
inline Mask read_mask(const std::filesystem::path& path)
{
    auto l = read_labels(path);
    Mask m(l.dims, l.spacing);
    for (std::size_t i = 0; i < l.size(); ++i) m[i] = l[i] != 0;
    return m;
}

inline void write_metaimage(const Grid<float>& vol, const std::filesystem::path& path)
{
    std::string out = detail::header_text(vol.dims, vol.spacing, "MET_FLOAT", std::nullopt);
    out.reserve(out.size() + vol.size() * 4);
    for (float v : vol.data) detail::store_le(out, v);
    detail::write_file(path, out);
}

inline void write_metaimage(const LabelVolume& vol, const std::filesystem::path& path)
{
    if (vol.num_labels > 256) throw ShapeError("labels are stored as 8-bit; num_labels must be <= 256");
    std::string out = detail::header_text(vol.dims, vol.spacing, "MET_UCHAR", vol.num_labels);
    out.append(reinterpret_cast<const char*>(vol.data.data()), vol.size());
    detail::write_file(path, out);
}

inline void write_metaimage(const Mask& mask, const std::filesystem::path& path)
{
    std::string out = detail::header_text(mask.dims, mask.spacing, "MET_UCHAR", 2);
    out.reserve(out.size() + mask.size());
    for (auto v : mask.data) out.push_back(v ? 1 : 0);
    detail::write_file(path, out);
}

} // namespace lobeseg
