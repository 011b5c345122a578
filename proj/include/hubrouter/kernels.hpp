#pragma once
// Dense f64 inner loops used by the tensor core.
//
// Every kernel has a scalar reference implementation and optional SIMD
// variants (AVX2+FMA, AVX-512F). The active table is picked once at startup
// from the CPU feature bits; HUBROUTER_KERNELS=scalar|avx2|avx512 overrides
// the choice. All matrices are row-major and contiguous.

#include <cstddef>
#include <string_view>
#include <vector>

namespace hubrouter::kernels {

enum class Isa { Scalar, Avx2, Avx512 };

struct KernelTable {
  Isa isa;
  const char* name;

  double (*dot)(const double* x, const double* y, std::size_t n);
  // y += a * x
  void (*axpy)(double a, const double* x, double* y, std::size_t n);
  // C[m x n] (+)= A[m x k] * B[k x n]
  void (*gemm_nn)(const double* a, const double* b, double* c, std::size_t m,
                  std::size_t k, std::size_t n, bool accumulate);
  // C[m x n] (+)= A[m x k] * B[n x k]^T
  void (*gemm_nt)(const double* a, const double* b, double* c, std::size_t m,
                  std::size_t k, std::size_t n, bool accumulate);
  // C[m x n] (+)= A[k x m]^T * B[k x n]
  void (*gemm_tn)(const double* a, const double* b, double* c, std::size_t m,
                  std::size_t k, std::size_t n, bool accumulate);
  // In-place max-subtracted softmax over each row of x[rows x cols].
  void (*softmax_rows)(double* x, std::size_t rows, std::size_t cols);
};

const KernelTable& scalar_table();
#if defined(HUBROUTER_HAVE_X86_KERNELS)
const KernelTable& avx2_table();
const KernelTable& avx512_table();
#endif

// Variants the running CPU can execute, scalar first.
std::vector<Isa> available_isas();
bool isa_supported(Isa isa);
const KernelTable& table_for(Isa isa);

// Process-wide active table. Selecting is not synchronised with running
// kernels; do it before spawning work.
const KernelTable& active();
void select(Isa isa);

std::string_view isa_name(Isa isa);
bool parse_isa(std::string_view text, Isa& out);

}  // namespace hubrouter::kernels
