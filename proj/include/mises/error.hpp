#pragma once
#include <stdexcept>
#include <string>

namespace mises {

struct error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct config_error : error {
    using error::error;
};

// Shape mismatches between vectors, populations and partitions.
struct dimension_error : error {
    using error::error;
};

struct domain_error : error {
    using error::error;
};

// Requests that cannot be satisfied by the data, e.g. K larger than the point count.
struct infeasible_error : error {
    using error::error;
};

struct model_error : error {
    using error::error;
};

struct schema_error : error {
    using error::error;
};

}  // namespace mises
