#include "seldlab/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <cstring>

namespace seldlab::kern {
namespace {

std::atomic<const KernelTable*> g_active{nullptr};

const KernelTable* pick(const char* which) {
    if (which && std::strcmp(which, "scalar") == 0) return &scalar_table();
    if (which && std::strcmp(which, "avx2") == 0) {
        if (const KernelTable* t = avx2_table()) return t;
        return &scalar_table();
    }
    // auto
    if (const KernelTable* t = avx2_table()) return t;
    return &scalar_table();
}

}  // namespace

const KernelTable& table() {
    const KernelTable* t = g_active.load(std::memory_order_acquire);
    if (!t) {
        t = pick(std::getenv("SELDLAB_KERNELS"));
        g_active.store(t, std::memory_order_release);
    }
    return *t;
}

void force_kernels(const char* which) {
    g_active.store(pick(which), std::memory_order_release);
}

}  // namespace seldlab::kern
