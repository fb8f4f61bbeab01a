#ifndef IRN_COMMON_HPP
#define IRN_COMMON_HPP

#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>

namespace irn {

// Thrown when an operation's preconditions are violated (shape mismatches,
// out-of-range arguments, malformed files). Messages name the offending values.
class ContractViolation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {
template <class... Args>
std::string concat(Args&&... args) {
  std::ostringstream os;
  (os << ... << std::forward<Args>(args));
  return os.str();
}
}  // namespace detail

#define IRN_REQUIRE(cond, ...)                                        \
  do {                                                                \
    if (!(cond)) throw ::irn::ContractViolation(::irn::detail::concat(__VA_ARGS__)); \
  } while (0)

// Deterministic RNG. All stochastic behavior in the library goes through this
// type so that a fixed seed reproduces runs bit-exactly. Distributions are
// implemented here rather than with std::*_distribution, whose output is
// implementation-defined.
class Rng {
 public:
  explicit Rng(uint64_t seed, uint64_t stream = 0);

  uint64_t next_u64();
  // Uniform in [0, 1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  // Uniform integer in [0, n), n > 0.
  int64_t uniform_int(int64_t n);
  // Standard normal via Box-Muller (pair-cached).
  double normal();
  // Derive an independent child stream from the current state.
  Rng fork();

 private:
  uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Thread budget for internal kernel parallelism. Reads IRN_THREADS once;
// defaults to the hardware concurrency. Always >= 1.
int max_threads();

}  // namespace irn

#endif
