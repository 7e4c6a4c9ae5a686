#include "nar/parallel.hpp"

#include <omp.h>

namespace nar {

int resolve_workers(int requested) { return requested > 0 ? requested : omp_get_max_threads(); }

}  // namespace nar
