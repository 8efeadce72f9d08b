#include "orthus/checkpoint.hpp"

namespace orthus {

namespace {

struct Crc32Table {
    uint32_t t[256];
    Crc32Table() {
        for (uint32_t i = 0; i < 256; ++i) {
            uint32_t c = i;
            for (int k = 0; k < 8; ++k) c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : c >> 1;
            t[i] = c;
        }
    }
};

}  // namespace

uint32_t crc32(const unsigned char* data, size_t n, uint32_t crc) {
    static const Crc32Table table;
    crc ^= 0xFFFFFFFFu;
    for (size_t i = 0; i < n; ++i) crc = table.t[(crc ^ data[i]) & 0xFF] ^ (crc >> 8);
    return crc ^ 0xFFFFFFFFu;
}

}  // namespace orthus
