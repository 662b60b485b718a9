#include "ctml/io.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include <json.hpp>
#include <zlib.h>

#include "ctml/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts are unsupported");

namespace ctml {

namespace {

using nlohmann::json;

constexpr std::uint32_t kFormatVersion = 1;

void write_bytes(std::ofstream& f, const void* p, size_t n)
{
    f.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void write_u32(std::ofstream& f, std::uint32_t v)
{
    write_bytes(f, &v, 4);
}

struct Reader {
    std::vector<char> bytes;
    size_t pos = 0;
    std::string path;

    void need(size_t n, const char* what) const
    {
        if (pos + n > bytes.size())
            throw io_error(path + ": truncated " + std::string(what) + ", expected " +
                           std::to_string(n) + " bytes at offset " + std::to_string(pos) +
                           ", file has " + std::to_string(bytes.size()));
    }
    std::uint32_t u32(const char* what)
    {
        need(4, what);
        std::uint32_t v;
        std::memcpy(&v, bytes.data() + pos, 4);
        pos += 4;
        return v;
    }
    std::string str(size_t n, const char* what)
    {
        need(n, what);
        std::string s(bytes.data() + pos, n);
        pos += n;
        return s;
    }
    void floats(float* dst, size_t count, const char* what)
    {
        need(count * 4, what);
        std::memcpy(dst, bytes.data() + pos, count * 4);
        pos += count * 4;
    }
};

Reader slurp(const std::filesystem::path& path)
{
    std::ifstream f(path, std::ios::binary);
    if (!f) throw io_error("cannot open " + path.string());
    Reader r;
    r.path = path.string();
    f.seekg(0, std::ios::end);
    r.bytes.resize(static_cast<size_t>(f.tellg()));
    f.seekg(0);
    f.read(r.bytes.data(), static_cast<std::streamsize>(r.bytes.size()));
    if (!f) throw io_error("read failure on " + path.string());
    return r;
}

void check_header(Reader& r, const char magic[4])
{
    const std::string m = r.str(4, "magic");
    if (m != std::string(magic, 4))
        throw io_error(r.path + ": bad magic \"" + m + "\", expected \"" +
                       std::string(magic, 4) + "\"");
    const std::uint32_t ver = r.u32("version");
    if (ver != kFormatVersion)
        throw io_error(r.path + ": unsupported version " + std::to_string(ver));
}

json read_meta(Reader& r)
{
    const std::uint32_t len = r.u32("metadata length");
    const std::string text = r.str(len, "metadata");
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw io_error(r.path + ": bad metadata: " + e.what());
    }
}

void write_container(const std::filesystem::path& path, const char magic[4],
                     const json& meta, const std::vector<double>& payload)
{
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw io_error("cannot open " + path.string() + " for writing");
    const std::string m = meta.dump();
    write_bytes(f, magic, 4);
    write_u32(f, kFormatVersion);
    write_u32(f, static_cast<std::uint32_t>(m.size()));
    write_bytes(f, m.data(), m.size());
    std::vector<float> fl(payload.size());
    for (size_t i = 0; i < payload.size(); ++i) fl[i] = static_cast<float>(payload[i]);
    write_bytes(f, fl.data(), fl.size() * 4);
    if (!f) throw io_error("write failure on " + path.string());
}

} // namespace

void write_sinogram(const std::filesystem::path& path, const Sinogram& p)
{
    json meta;
    meta["geometry"] = p.geom;
    write_container(path, "CTSG", meta, p.v);
}

Sinogram read_sinogram(const std::filesystem::path& path)
{
    Reader r = slurp(path);
    check_header(r, "CTSG");
    const json meta = read_meta(r);
    ScanGeometry geom;
    try {
        geom = meta.at("geometry").get<ScanGeometry>();
    } catch (const json::exception& e) {
        throw io_error(r.path + ": bad geometry metadata: " + e.what());
    }
    Sinogram p = Sinogram::zeros(geom);
    std::vector<float> fl(p.v.size());
    r.floats(fl.data(), fl.size(), "sinogram payload");
    for (size_t i = 0; i < fl.size(); ++i) p.v[i] = fl[i];
    return p;
}

void write_image(const std::filesystem::path& path, const ImageGrid& img)
{
    json meta{{"grid_size", img.n}, {"pixel_size", img.pixel_size}};
    write_container(path, "CTIM", meta, img.v);
}

ImageGrid read_image(const std::filesystem::path& path)
{
    Reader r = slurp(path);
    check_header(r, "CTIM");
    const json meta = read_meta(r);
    int n = 0;
    double pix = 1.0;
    try {
        n = meta.at("grid_size").get<int>();
        pix = meta.at("pixel_size").get<double>();
    } catch (const json::exception& e) {
        throw io_error(r.path + ": bad image metadata: " + e.what());
    }
    if (n < 1) throw io_error(r.path + ": nonpositive grid size");
    ImageGrid img = ImageGrid::zeros(n, pix);
    std::vector<float> fl(img.v.size());
    r.floats(fl.data(), fl.size(), "image payload");
    for (size_t i = 0; i < fl.size(); ++i) img.v[i] = fl[i];
    return img;
}

void write_checkpoint(const std::filesystem::path& path,
                      const std::vector<CheckpointEntry>& entries, const nlohmann::json& extra)
{
    json manifest = json::array();
    for (const auto& e : entries) {
        size_t count = 1;
        for (int d : e.shape) count *= static_cast<size_t>(d);
        if (count != e.data.size())
            throw io_error("checkpoint entry " + e.name + " shape does not match data size");
        manifest.push_back({{"name", e.name}, {"shape", e.shape}});
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw io_error("cannot open " + path.string() + " for writing");
    json meta = extra;
    meta["params"] = manifest;
    const std::string m = meta.dump();
    write_bytes(f, "CTPK", 4);
    write_u32(f, kFormatVersion);
    write_u32(f, static_cast<std::uint32_t>(m.size()));
    write_bytes(f, m.data(), m.size());
    for (const auto& e : entries) write_bytes(f, e.data.data(), e.data.size() * 4);
    if (!f) throw io_error("write failure on " + path.string());
}

std::vector<CheckpointEntry> read_checkpoint(const std::filesystem::path& path,
                                             nlohmann::json* extra)
{
    Reader r = slurp(path);
    check_header(r, "CTPK");
    const json meta = read_meta(r);
    if (extra) *extra = meta;
    std::vector<CheckpointEntry> entries;
    try {
        for (const auto& j : meta.at("params")) {
            CheckpointEntry e;
            e.name = j.at("name").get<std::string>();
            e.shape = j.at("shape").get<std::vector<int>>();
            size_t count = 1;
            for (int d : e.shape) {
                if (d < 0) throw io_error(r.path + ": negative dimension in manifest");
                count *= static_cast<size_t>(d);
            }
            e.data.resize(count);
            entries.push_back(std::move(e));
        }
    } catch (const json::exception& e) {
        throw io_error(r.path + ": bad checkpoint manifest: " + e.what());
    }
    for (auto& e : entries) r.floats(e.data.data(), e.data.size(), e.name.c_str());
    return entries;
}

std::uint8_t window_to_byte(double v, const DisplayWindow& w)
{
    const double lo = w.center - 0.5 * w.width;
    const double t = (v - lo) / w.width * 255.0;
    return static_cast<std::uint8_t>(std::clamp(std::lround(t), 0L, 255L));
}

namespace {

void put_u32_be(std::vector<std::uint8_t>& out, std::uint32_t v)
{
    out.push_back(static_cast<std::uint8_t>(v >> 24));
    out.push_back(static_cast<std::uint8_t>(v >> 16));
    out.push_back(static_cast<std::uint8_t>(v >> 8));
    out.push_back(static_cast<std::uint8_t>(v));
}

void put_chunk(std::vector<std::uint8_t>& out, const char type[4],
               const std::vector<std::uint8_t>& data)
{
    put_u32_be(out, static_cast<std::uint32_t>(data.size()));
    std::vector<std::uint8_t> crcbuf(type, type + 4);
    crcbuf.insert(crcbuf.end(), data.begin(), data.end());
    out.insert(out.end(), crcbuf.begin(), crcbuf.begin() + 4);
    out.insert(out.end(), data.begin(), data.end());
    const auto crc = crc32(0L, crcbuf.data(), static_cast<uInt>(crcbuf.size()));
    put_u32_be(out, static_cast<std::uint32_t>(crc));
}

// 8-bit grayscale PNG; rows top-to-bottom.
void write_gray_png(const std::filesystem::path& path, const std::vector<std::uint8_t>& gray,
                    int width, int height)
{
    std::vector<std::uint8_t> raw;
    raw.reserve(static_cast<size_t>(height) * (width + 1));
    for (int y = 0; y < height; ++y) {
        raw.push_back(0); // filter: none
        raw.insert(raw.end(), gray.begin() + static_cast<size_t>(y) * width,
                   gray.begin() + static_cast<size_t>(y + 1) * width);
    }
    uLongf zlen = compressBound(static_cast<uLong>(raw.size()));
    std::vector<std::uint8_t> z(zlen);
    if (compress2(z.data(), &zlen, raw.data(), static_cast<uLong>(raw.size()), 9) != Z_OK)
        throw io_error("png deflate failed for " + path.string());
    z.resize(zlen);

    std::vector<std::uint8_t> out = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
    std::vector<std::uint8_t> ihdr;
    put_u32_be(ihdr, static_cast<std::uint32_t>(width));
    put_u32_be(ihdr, static_cast<std::uint32_t>(height));
    ihdr.push_back(8); // bit depth
    ihdr.push_back(0); // grayscale
    ihdr.push_back(0);
    ihdr.push_back(0);
    ihdr.push_back(0);
    put_chunk(out, "IHDR", ihdr);
    put_chunk(out, "IDAT", z);
    put_chunk(out, "IEND", {});

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw io_error("cannot open " + path.string() + " for writing");
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) throw io_error("write failure on " + path.string());
}

} // namespace

void export_png(const std::filesystem::path& path, const ImageGrid& img,
                const DisplayWindow& window)
{
    if (window.width <= 0.0) throw config_error("display window width must be > 0");
    std::vector<std::uint8_t> gray(img.size());
    // image rows run bottom-up, PNG rows top-down
    for (int iy = 0; iy < img.n; ++iy)
        for (int ix = 0; ix < img.n; ++ix)
            gray[static_cast<size_t>(img.n - 1 - iy) * img.n + ix] =
                window_to_byte(img.at(iy, ix), window);
    write_gray_png(path, gray, img.n, img.n);
}

void write_curve_png(const std::filesystem::path& path,
                     const std::vector<std::vector<double>>& series, int width, int height)
{
    std::vector<std::uint8_t> gray(static_cast<size_t>(width) * height, 255);
    double lo = 0.0, hi = 1.0;
    size_t maxlen = 1;
    bool any = false;
    for (const auto& s : series)
        for (double v : s) {
            if (!std::isfinite(v)) continue;
            if (!any) {
                lo = hi = v;
                any = true;
            }
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
    for (const auto& s : series) maxlen = std::max(maxlen, s.size());
    if (hi <= lo) hi = lo + 1.0;

    auto to_px = [&](size_t i, double v) {
        const int x = static_cast<int>(
            std::lround((width - 1) * static_cast<double>(i) / std::max<size_t>(maxlen - 1, 1)));
        const int y = static_cast<int>(std::lround((height - 1) * (1.0 - (v - lo) / (hi - lo))));
        return std::pair<int, int>{std::clamp(x, 0, width - 1), std::clamp(y, 0, height - 1)};
    };
    auto draw = [&](int x0, int y0, int x1, int y1, std::uint8_t shade) {
        const int steps = std::max({std::abs(x1 - x0), std::abs(y1 - y0), 1});
        for (int s = 0; s <= steps; ++s) {
            const int x = x0 + (x1 - x0) * s / steps;
            const int y = y0 + (y1 - y0) * s / steps;
            gray[static_cast<size_t>(y) * width + x] = shade;
        }
    };

    for (size_t si = 0; si < series.size(); ++si) {
        const auto& s = series[si];
        const std::uint8_t shade = static_cast<std::uint8_t>(40 + 60 * (si % 4));
        for (size_t i = 0; i + 1 < s.size(); ++i) {
            if (!std::isfinite(s[i]) || !std::isfinite(s[i + 1])) continue;
            auto [x0, y0] = to_px(i, s[i]);
            auto [x1, y1] = to_px(i + 1, s[i + 1]);
            draw(x0, y0, x1, y1, shade);
        }
    }
    write_gray_png(path, gray, width, height);
}

} // namespace ctml
