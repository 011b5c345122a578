#include "hubrouter/kernels.hpp"

#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

namespace hubrouter::kernels {
namespace {

const KernelTable* pick_default() {
  if (const char* env = std::getenv("HUBROUTER_KERNELS")) {
    Isa requested;
    if (!parse_isa(env, requested)) {
      throw std::invalid_argument(std::string("HUBROUTER_KERNELS: unknown kernel set '") + env + "'");
    }
    if (!isa_supported(requested)) {
      throw std::invalid_argument(std::string("HUBROUTER_KERNELS: '") + env +
                                  "' is not supported by this CPU");
    }
    return &table_for(requested);
  }
  const auto isas = available_isas();
  return &table_for(isas.back());
}

std::atomic<const KernelTable*>& slot() {
  static std::atomic<const KernelTable*> current{pick_default()};
  return current;
}

}  // namespace

bool isa_supported(Isa isa) {
  switch (isa) {
    case Isa::Scalar:
      return true;
#if defined(HUBROUTER_HAVE_X86_KERNELS)
    case Isa::Avx2:
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
    case Isa::Avx512:
      return __builtin_cpu_supports("avx512f") && __builtin_cpu_supports("fma");
#else
    default:
      return false;
#endif
  }
  return false;
}

std::vector<Isa> available_isas() {
  std::vector<Isa> out{Isa::Scalar};
  for (Isa isa : {Isa::Avx2, Isa::Avx512}) {
    if (isa_supported(isa)) out.push_back(isa);
  }
  return out;
}

const KernelTable& table_for(Isa isa) {
  switch (isa) {
#if defined(HUBROUTER_HAVE_X86_KERNELS)
    case Isa::Avx2:
      return avx2_table();
    case Isa::Avx512:
      return avx512_table();
#endif
    default:
      return scalar_table();
  }
}

const KernelTable& active() { return *slot().load(std::memory_order_acquire); }

void select(Isa isa) {
  if (!isa_supported(isa)) {
    throw std::invalid_argument(std::string("kernel set not supported: ") + std::string(isa_name(isa)));
  }
  slot().store(&table_for(isa), std::memory_order_release);
}

std::string_view isa_name(Isa isa) {
  switch (isa) {
    case Isa::Avx2:
      return "avx2";
    case Isa::Avx512:
      return "avx512";
    default:
      return "scalar";
  }
}

bool parse_isa(std::string_view text, Isa& out) {
  if (text == "scalar") {
    out = Isa::Scalar;
  } else if (text == "avx2") {
    out = Isa::Avx2;
  } else if (text == "avx512") {
    out = Isa::Avx512;
  } else {
    return false;
  }
  return true;
}

}  // namespace hubrouter::kernels
