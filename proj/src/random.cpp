#include "mwcr/random.hpp"

#include <sodium.h>

#include <vector>

namespace mwcr {

namespace {

void store_le(unsigned char* out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out[i] = static_cast<unsigned char>(v >> (8 * i));
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t master, std::initializer_list<std::uint64_t> path) {
    static_assert(crypto_shorthash_KEYBYTES == 16 && crypto_shorthash_BYTES == 8);
    unsigned char key[crypto_shorthash_KEYBYTES];
    store_le(key, master);
    store_le(key + 8, 0x6F75747075746174ULL);

    std::array<unsigned char, 64> small{};
    std::vector<unsigned char> large;
    unsigned char* msg = small.data();
    if (path.size() * 8 > small.size()) {
        large.resize(path.size() * 8);
        msg = large.data();
    }
    std::size_t off = 0;
    for (std::uint64_t v : path) {
        store_le(msg + off, v);
        off += 8;
    }

    unsigned char out[crypto_shorthash_BYTES];
    crypto_shorthash(out, msg, off, key);
    std::uint64_t h = 0;
    for (int i = 0; i < 8; ++i) h |= static_cast<std::uint64_t>(out[i]) << (8 * i);
    return h;
}

}  // namespace mwcr
