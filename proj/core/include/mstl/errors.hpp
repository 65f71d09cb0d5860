#pragma once

#include <stdexcept>
#include <string>

namespace mstl {

// Root of every error thrown by the library. The CLI maps subclasses to exit
// codes; callers that only care about failure can catch this one type.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error { public: using Error::Error; };
class IndexError : public Error { public: using Error::Error; };
class ContractError : public Error { public: using Error::Error; };
class BoundsError : public Error { public: using Error::Error; };
class ConfigError : public Error { public: using Error::Error; };
class IoError : public Error { public: using Error::Error; };
class CheckpointError : public Error { public: using Error::Error; };
class DegenerateAnatomyError : public Error { public: using Error::Error; };
class DegenerateEmbeddingError : public Error { public: using Error::Error; };
class ModelPairingError : public Error { public: using Error::Error; };
class UndefinedMetricError : public Error { public: using Error::Error; };

}  // namespace mstl
