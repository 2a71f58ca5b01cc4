#include "pdbias/binio.hpp"

#include <cstdio>

namespace pdbias::binio {

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return std::string(buf, 16);
}

std::string file_fingerprint(const std::filesystem::path& path) {
    std::ifstream is = open_in(path);
    std::uint64_t h = kFnvOffset;
    char buf[1 << 16];
    while (is.read(buf, sizeof(buf)) || is.gcount() > 0) {
        h = fnv1a(std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(buf),
                                                 static_cast<std::size_t>(is.gcount())),
                  h);
    }
    return hex64(h);
}

}  // namespace pdbias::binio
