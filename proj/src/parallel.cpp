#include "ctml/parallel.hpp"

#include <cstdlib>
#include <string>

#include <omp.h>

namespace ctml {

int max_threads()
{
    static const int cached = [] {
        int n = omp_get_max_threads();
        if (const char* env = std::getenv("CTML_THREADS")) {
            try {
                int cap = std::stoi(env);
                if (cap >= 1 && cap < n) n = cap;
            } catch (...) {
                // ignore malformed value, keep runtime default
            }
        }
        return n;
    }();
    return cached;
}

} // namespace ctml
