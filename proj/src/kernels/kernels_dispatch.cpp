#include <atomic>
#include <cstdlib>

#include "stainkit/kernels.hpp"

namespace stainkit::kernels {

#if defined(__x86_64__) || defined(_M_X64)
const Ops& avx2_ops_table();  // kernels_avx2.cpp
#endif

MeanVar merge(const MeanVar& a, const MeanVar& b) {
  if (a.count == 0) return b;
  if (b.count == 0) return a;
  MeanVar out;
  out.count = a.count + b.count;
  const double na = static_cast<double>(a.count);
  const double nb = static_cast<double>(b.count);
  const double n = static_cast<double>(out.count);
  const double delta = b.mean - a.mean;
  out.mean = a.mean + delta * (nb / n);
  out.m2 = a.m2 + b.m2 + delta * delta * (na * nb / n);
  return out;
}

const Ops* avx2_ops() {
#if defined(__x86_64__) || defined(_M_X64)
  static const bool supported = __builtin_cpu_supports("avx2");
  return supported ? &avx2_ops_table() : nullptr;
#else
  return nullptr;
#endif
}

namespace {

std::atomic<const Ops*> g_active{nullptr};

const Ops* pick(std::string_view name) {
  if (name == "scalar") return &scalar_ops();
  if (name == "avx2") return avx2_ops();
  if (name == "auto") {
    if (const Ops* v = avx2_ops()) return v;
    return &scalar_ops();
  }
  return nullptr;
}

const Ops* default_ops() {
  if (const char* env = std::getenv("STAINKIT_KERNEL")) {
    if (const Ops* v = pick(env)) return v;
  }
  return pick("auto");
}

}  // namespace

const Ops& active() {
  const Ops* p = g_active.load(std::memory_order_acquire);
  if (p == nullptr) {
    p = default_ops();
    g_active.store(p, std::memory_order_release);
  }
  return *p;
}

bool select(std::string_view name) {
  const Ops* v = pick(name);
  if (v == nullptr) return false;
  g_active.store(v, std::memory_order_release);
  return true;
}

}  // namespace stainkit::kernels
