#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace moicl {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NonFiniteInput : Error { using Error::Error; };
struct DimensionMismatch : Error { using Error::Error; };
struct DegenerateDistribution : Error { using Error::Error; };
struct InvalidK : Error { using Error::Error; };
struct InvalidKPrime : Error { using Error::Error; };
struct EmptySubset : Error { using Error::Error; };
struct DuplicateEntry : Error { using Error::Error; };
struct LengthMismatch : Error { using Error::Error; };
struct InvalidSpec : Error { using Error::Error; };
struct InfeasibleImbalance : Error { using Error::Error; };

// Config validation failures carry the offending field path in the message,
// e.g. "training.learning_rate: must be > 0".
struct InvalidConfig : Error { using Error::Error; };

struct MissingEntry : Error {
    MissingEntry(std::string query_id_, std::string subset_id_)
        : Error("no external logits entry for (query_id=" + query_id_ +
                ", subset_id=" + subset_id_ + ")"),
          query_id(std::move(query_id_)),
          subset_id(std::move(subset_id_)) {}
    std::string query_id;
    std::string subset_id;
};

struct ParseError : Error {
    ParseError(std::size_t line_, const std::string& what_)
        : Error("line " + std::to_string(line_) + ": " + what_), line(line_) {}
    std::size_t line;
};

}  // namespace moicl
