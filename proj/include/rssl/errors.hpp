#pragma once

#include <stdexcept>
#include <string>

namespace rssl {

/// Base for every error raised by the library. Callers that only need to
/// report a failure can catch this; the CLI maps subclasses to exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

#define RSSL_DECLARE_ERROR(Name)                  \
    class Name : public Error {                   \
    public:                                       \
        explicit Name(const std::string& what)    \
            : Error(#Name ": " + what) {}         \
    }

RSSL_DECLARE_ERROR(ShapeMismatch);
RSSL_DECLARE_ERROR(NotPositiveDefinite);
RSSL_DECLARE_ERROR(GraphCycle);
RSSL_DECLARE_ERROR(EmptySet);
RSSL_DECLARE_ERROR(DegenerateBatch);
RSSL_DECLARE_ERROR(InvalidSpec);
RSSL_DECLARE_ERROR(FormatError);
RSSL_DECLARE_ERROR(CountMismatch);
RSSL_DECLARE_ERROR(SchemeMismatch);
RSSL_DECLARE_ERROR(ConfigError);
RSSL_DECLARE_ERROR(NonFiniteLoss);
RSSL_DECLARE_ERROR(LabelMismatch);
RSSL_DECLARE_ERROR(ZeroMatrix);

#undef RSSL_DECLARE_ERROR

} // namespace rssl
