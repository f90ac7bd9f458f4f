#include <cstring>
#include <fstream>

#include <json.hpp>

#include "usat/data.hpp"

namespace usat {

using nlohmann::json;

namespace {

constexpr char kMagic[] = "USRAS1\n";

void put_f32_le(std::ofstream& os, float f) {
    uint32_t bits;
    std::memcpy(&bits, &f, sizeof(bits));
    const unsigned char bytes[4] = {static_cast<unsigned char>(bits & 0xff),
                                    static_cast<unsigned char>((bits >> 8) & 0xff),
                                    static_cast<unsigned char>((bits >> 16) & 0xff),
                                    static_cast<unsigned char>((bits >> 24) & 0xff)};
    os.write(reinterpret_cast<const char*>(bytes), 4);
}

float get_f32_le(const unsigned char* bytes) {
    const uint32_t bits = static_cast<uint32_t>(bytes[0]) | (static_cast<uint32_t>(bytes[1]) << 8) |
                          (static_cast<uint32_t>(bytes[2]) << 16) |
                          (static_cast<uint32_t>(bytes[3]) << 24);
    float f;
    std::memcpy(&f, &bits, sizeof(f));
    return f;
}

} // namespace

void write_usras(const std::filesystem::path& path, const std::string& band, const Mat& pixels,
                 double gsd, Vec2 origin, double footprint_m, int64_t timestamp) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write " + path.string());
    os.write(kMagic, 7);
    json header = {{"band", band},         {"rows", pixels.rows},
                   {"cols", pixels.cols},  {"gsd", gsd},
                   {"origin", {origin.x, origin.y}}, {"footprint_m", footprint_m},
                   {"timestamp", timestamp}};
    const std::string line = header.dump();
    os.write(line.data(), static_cast<std::streamsize>(line.size()));
    os.put('\n');
    for (double v : pixels.d) put_f32_le(os, static_cast<float>(v));
    if (!os) throw IoError("short write to " + path.string());
}

UsrasFile read_usras(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot read " + path.string());
    char magic[7];
    is.read(magic, 7);
    if (!is || std::memcmp(magic, kMagic, 7) != 0)
        throw IoError("bad magic in " + path.string());
    std::string line;
    if (!std::getline(is, line)) throw IoError("missing header in " + path.string());
    json header = json::parse(line);

    UsrasFile out;
    out.band = header.at("band").get<std::string>();
    out.gsd = header.at("gsd").get<double>();
    out.origin = {header.at("origin")[0].get<double>(), header.at("origin")[1].get<double>()};
    out.footprint_m = header.at("footprint_m").get<double>();
    out.timestamp = header.at("timestamp").get<int64_t>();
    const int rows = header.at("rows").get<int>();
    const int cols = header.at("cols").get<int>();
    if (rows <= 0 || cols <= 0) throw IoError("bad raster shape in " + path.string());
    out.pixels = Mat(rows, cols);
    std::vector<unsigned char> buf(static_cast<size_t>(rows) * cols * 4);
    is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!is) throw IoError("truncated payload in " + path.string());
    for (size_t i = 0; i < out.pixels.d.size(); ++i)
        out.pixels.d[i] = static_cast<double>(get_f32_le(buf.data() + i * 4));
    return out;
}

} // namespace usat
