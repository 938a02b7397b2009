#include "mmcoord/error.hpp"

namespace mmcoord {

void throw_validation(const std::string& what) { throw Error(ErrorKind::validation, what); }

void throw_numerical(const std::string& what) { throw Error(ErrorKind::numerical, what); }

}  // namespace mmcoord
