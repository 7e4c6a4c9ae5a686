#pragma once

#include <exception>
#include <vector>

namespace nar {

// Worker count for OpenMP regions. 0 means "runtime default" (all logical
// cores unless OMP_NUM_THREADS says otherwise).
int resolve_workers(int requested);

// Collects exceptions thrown inside a parallel loop and rethrows the one with
// the lowest iteration index, so error reporting matches the serial order.
class IndexedErrors {
 public:
  explicit IndexedErrors(std::size_t n) : errors_(n) {}

  void capture(std::size_t index) { errors_[index] = std::current_exception(); }

  void rethrow_first() const {
    for (const auto& e : errors_)
      if (e) std::rethrow_exception(e);
  }

 private:
  std::vector<std::exception_ptr> errors_;
};

}  // namespace nar
