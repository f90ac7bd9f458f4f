#include "usat/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "usat/errors.hpp"

namespace usat {

namespace {

unsigned char to_byte(double v, double lo, double hi) {
    const double t = (hi > lo) ? (v - lo) / (hi - lo) : 0.5;
    const double c = std::min(std::max(t, 0.0), 1.0);
    return static_cast<unsigned char>(std::lround(c * 255.0));
}

} // namespace

void write_pgm(const std::filesystem::path& path, const Mat& img, double lo, double hi) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write " + path.string());
    os << "P5\n" << img.cols << " " << img.rows << "\n255\n";
    std::vector<unsigned char> buf(img.size());
    for (size_t i = 0; i < img.d.size(); ++i) buf[i] = to_byte(img.d[i], lo, hi);
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

void write_ppm(const std::filesystem::path& path, const Mat& r, const Mat& g, const Mat& b,
               double lo, double hi) {
    if (!r.same_shape(g) || !r.same_shape(b)) throw ShapeError("write_ppm: channel shape mismatch");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write " + path.string());
    os << "P6\n" << r.cols << " " << r.rows << "\n255\n";
    std::vector<unsigned char> buf(r.size() * 3);
    for (size_t i = 0; i < r.d.size(); ++i) {
        buf[3 * i] = to_byte(r.d[i], lo, hi);
        buf[3 * i + 1] = to_byte(g.d[i], lo, hi);
        buf[3 * i + 2] = to_byte(b.d[i], lo, hi);
    }
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

PnmInfo read_pnm_info(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot read " + path.string());
    PnmInfo info;
    is >> info.magic >> info.width >> info.height >> info.maxval;
    if (info.magic != "P5" && info.magic != "P6") throw IoError("not a binary PNM: " + path.string());
    if (info.width <= 0 || info.height <= 0 || info.maxval != 255)
        throw IoError("bad PNM header: " + path.string());
    is.get(); // single whitespace after maxval
    const size_t expect = static_cast<size_t>(info.width) * info.height *
                          (info.magic == "P6" ? 3 : 1);
    std::vector<char> buf(expect);
    is.read(buf.data(), static_cast<std::streamsize>(expect));
    if (static_cast<size_t>(is.gcount()) != expect)
        throw IoError("truncated PNM payload: " + path.string());
    info.payload_bytes = expect;
    return info;
}

} // namespace usat
