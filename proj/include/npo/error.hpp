#pragma once

#include <stdexcept>
#include <string>

namespace npo {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct LayoutError : Error { using Error::Error; };
struct VocabularyError : Error { using Error::Error; };
struct EncodingError : Error { using Error::Error; };
struct ContractError : Error { using Error::Error; };
struct NumericError : Error { using Error::Error; };
struct NotFoundError : Error { using Error::Error; };
struct FormatError : Error { using Error::Error; };
struct ChecksumError : FormatError { using FormatError::FormatError; };
struct SelectionError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct ParseError : Error { using Error::Error; };

}  // namespace npo
